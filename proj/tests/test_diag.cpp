#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "test_util.hpp"
#include "vla/diag.hpp"
#include "vla/error.hpp"
#include "vla/expert.hpp"

using namespace vla;
using namespace vla::diag;

namespace {

policy::PolicyConfig diag_policy() {
    policy::PolicyConfig c;
    c.d_model = 32;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 64;
    c.n_lang = 4;
    c.chunk = 5;
    c.lora_rank = 4;
    c.p_drop = 0.0;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("influence labels and their boundaries") {
    CHECK(classify_influence(0.8) == InfluenceLabel::Weak);
    CHECK(classify_influence(4.5) == InfluenceLabel::Strong);
    CHECK(classify_influence(6.2) == InfluenceLabel::VeryStrong);
    CHECK(classify_influence(0.0) == InfluenceLabel::Weak);
    CHECK(classify_influence(std::nextafter(1.0, 0.0)) == InfluenceLabel::Weak);
    CHECK(classify_influence(1.0) == InfluenceLabel::Moderate);
    CHECK(classify_influence(3.0) == InfluenceLabel::Moderate);
    CHECK(classify_influence(std::nextafter(3.0, 4.0)) == InfluenceLabel::Strong);
    CHECK(classify_influence(6.0) == InfluenceLabel::Strong);
    CHECK(classify_influence(std::nextafter(6.0, 7.0)) == InfluenceLabel::VeryStrong);
    CHECK_THROWS_AS(classify_influence(-0.1), RangeError);
    CHECK_THROWS_AS(classify_influence(std::nan("")), RangeError);
    CHECK(std::string(label_name(InfluenceLabel::VeryStrong)) == "VeryStrong");
}

TEST_CASE("masking touches only image payloads") {
    const auto cfg = diag_policy();
    auto obs = test::random_observation(cfg, 3);
    auto m = mask_images(obs);
    CHECK(m.joints == obs.joints);
    CHECK(m.task == obs.task);
    REQUIRE(m.top.has_value());
    REQUIRE(m.wrist.has_value());
    CHECK(m.top->height == obs.top->height);
    CHECK(m.top->width == obs.top->width);
    CHECK(m.wrist->data.size() == obs.wrist->data.size());
    for (double v : m.top->data) CHECK(v == 0.0);
    for (double v : m.wrist->data) CHECK(v == 0.0);

    obs.wrist.reset();
    m = mask_images(obs);
    CHECK_FALSE(m.wrist.has_value());
}

TEST_CASE("vision influence") {
    const auto cfg = diag_policy();
    auto params = policy::init_params(cfg, 21);
    std::vector<policy::Observation> steps;
    for (std::uint64_t s = 0; s < 6; ++s) steps.push_back(test::random_observation(cfg, 100 + s));
    const auto lim = JointLimits::so101();

    SUBCASE("step-by-step recomputation") {
        const auto r = vision_influence(cfg, params, steps);
        double sum = 0, norm = 0;
        REQUIRE(r.step_diffs.size() == steps.size());
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const auto a = denormalize_action(policy::forward(steps[i], cfg, params)[0], lim);
            auto masked = steps[i];
            std::fill(masked.top->data.begin(), masked.top->data.end(), 0.0);
            std::fill(masked.wrist->data.begin(), masked.wrist->data.end(), 0.0);
            const auto b = denormalize_action(policy::forward(masked, cfg, params)[0], lim);
            double d = 0, n = 0;
            for (std::size_t j = 0; j < kActionDim; ++j) {
                d += (a[j] - b[j]) * (a[j] - b[j]);
                n += a[j] * a[j];
            }
            CHECK(r.step_diffs[i] == doctest::Approx(std::sqrt(d)).epsilon(1e-12));
            sum += std::sqrt(d);
            norm += std::sqrt(n);
        }
        CHECK(r.delta > 0.0);
        CHECK(r.delta == doctest::Approx(sum / 6).epsilon(1e-12));
        CHECK(r.percent == doctest::Approx(100.0 * (sum / 6) / (norm / 6)).epsilon(1e-12));
        CHECK(r.label == classify_influence(r.delta));
    }
    SUBCASE("invariant to step order") {
        const auto a = vision_influence(cfg, params, steps);
        std::reverse(steps.begin(), steps.end());
        const auto b = vision_influence(cfg, params, steps);
        CHECK(a.delta == doctest::Approx(b.delta).epsilon(1e-14));
        CHECK(a.percent == doctest::Approx(b.percent).epsilon(1e-14));
    }
    SUBCASE("zero vision weights give zero influence") {
        for (auto t : policy::list_tensors(params))
            if (t.group == policy::ParamGroup::Vision) t.value->setZero();
        const auto r = vision_influence(cfg, params, steps);
        CHECK(r.delta == 0.0);
        CHECK(r.percent == 0.0);
        CHECK(r.label == InfluenceLabel::Weak);
    }
    SUBCASE("empty episode") {
        CHECK_THROWS_AS(vision_influence(cfg, params, std::vector<policy::Observation>{}), InputError);
    }
}

TEST_CASE("oscillation detector") {
    SUBCASE("monotone approach") {
        std::vector<double> d;
        for (int i = 0; i < 60; ++i) d.push_back(0.3 - 0.004 * i);
        const auto r = detect_oscillation(d, false);
        CHECK(r.reversals == 0);
        CHECK_FALSE(r.oscillatory);
    }
    SUBCASE("triangle wave with eight extrema") {
        std::vector<double> d;
        const int half = 10;
        for (int i = 0; i <= 9 * half; ++i) {
            const int seg = i / half, off = i % half;
            const double up = seg % 2 == 0 ? off : half - off;
            d.push_back(0.05 + 0.01 * up);
        }
        const auto r = detect_oscillation(d, false);
        CHECK(r.reversals == 8);
        CHECK(r.oscillatory);
        REQUIRE(r.reversal_ticks.size() == 8);
        for (std::size_t k = 0; k < 8; ++k) {
            const double extremum = half * (k + 1.0);
            CHECK(std::abs(static_cast<double>(r.reversal_ticks[k]) - extremum) <= 3.0);
        }
        CHECK_FALSE(detect_oscillation(d, true).oscillatory);
    }
    SUBCASE("short trace") {
        CHECK_THROWS_AS(detect_oscillation(std::vector<double>{1, 2, 3}, false), InputError);
    }
    SUBCASE("expert episode is not flagged") {
        sim::SimConfig sc;
        std::mt19937_64 rng(4);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto s = sim::reset(sc, seed);
            const auto plan = data::ExpertTrajectory::plan(s, sc, data::ExpertTiming{}, rng);
            REQUIRE(plan.has_value());
            std::vector<double> d;
            const double dt = 1.0 / sc.tick_hz;
            for (double t = dt; t <= plan->duration() + 1e-9; t += dt) {
                s = sim::step(s, plan->at(t), sc);
                d.push_back(sim::distance_to_button(s));
            }
            const auto r = detect_oscillation(d, sim::check_success(s));
            CHECK(sim::check_success(s));
            CHECK(r.reversals < 6);
            CHECK_FALSE(r.oscillatory);
        }
    }
}

TEST_CASE("report emission") {
    const auto dir = test::temp_dir("diag_report");
    SUBCASE("empty list writes headers only") {
        emit_report({}, dir / "empty.csv");
        CHECK(slurp(dir / "empty.csv") == "config,episodes,delta_mean,delta_std,label\n");
        CHECK(slurp(dir / "empty_episodes.csv") == "config,episode,delta,percent,label\n");
    }
    SUBCASE("rows follow input order and re-emission is byte-identical") {
        VisionInfluenceReport a, b, c;
        a.delta = 4.0;
        a.percent = 10.0;
        b.delta = 5.0;
        b.percent = 12.5;
        c.delta = 0.5;
        std::vector<InfluenceRun> runs{{"frozen_200", {a, b}}, {"random_init", {c}}};
        emit_report(runs, dir / "r.csv");
        CHECK(slurp(dir / "r.csv") ==
              "config,episodes,delta_mean,delta_std,label\n"
              "frozen_200,2,4.5,0.707107,Strong\n"
              "random_init,1,0.5,0,Weak\n");
        CHECK(slurp(dir / "r_episodes.csv") ==
              "config,episode,delta,percent,label\n"
              "frozen_200,0,4,10,Weak\n"
              "frozen_200,1,5,12.5,Weak\n"
              "random_init,0,0.5,0,Weak\n");
        const auto first = slurp(dir / "r.csv") + slurp(dir / "r_episodes.csv");
        emit_report(runs, dir / "r.csv");
        CHECK(slurp(dir / "r.csv") + slurp(dir / "r_episodes.csv") == first);
    }
    SUBCASE("unwritable path") {
        CHECK_THROWS_AS(emit_report({}, dir / "missing" / "deeper" / "x.csv"), IoError);
    }
}
