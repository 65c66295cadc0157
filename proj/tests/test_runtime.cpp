#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "vla/error.hpp"
#include "vla/runtime.hpp"

using namespace vla;
using namespace vla::runtime;

namespace {

policy::PolicyConfig loop_policy() {
    policy::PolicyConfig c;
    c.d_model = 32;
    c.n_layers = 1;
    c.n_heads = 2;
    c.d_ff = 64;
    c.n_lang = 4;
    c.lora_rank = 4;
    c.p_drop = 0.0;
    return c;
}

RuntimeConfig loop_runtime() { return RuntimeConfig::from_limits(JointLimits::so101()); }

sim::Rgb8Image filled(std::uint32_t w, std::uint32_t h, std::uint64_t seed) {
    sim::Rgb8Image img(w, h);
    std::mt19937_64 rng(seed);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
    return img;
}

void expect_stream_safe(const EpisodeLog& log, const JointVector& start, const RuntimeConfig& cfg) {
    const double dt = 1.0 / cfg.control_hz;
    JointVector prev = start;
    for (const auto& t : log.ticks) {
        for (std::size_t i = 0; i < kActionDim; ++i) {
            REQUIRE(t.command[i] >= cfg.limits.lower(i));
            REQUIRE(t.command[i] <= cfg.limits.upper(i));
            REQUIRE(std::abs(t.command[i] - prev[i]) <= cfg.limits.rate(i) * dt + 1e-9);
        }
        prev = t.command;
    }
}

}  // namespace

TEST_CASE("preprocess at target resolution is bytes over 255") {
    const auto frame = filled(7, 5, 1);
    const auto img = preprocess(frame, 5, 7);
    REQUIRE(img.data.size() == frame.pixels.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(img.data[i] == frame.pixels[i] / 255.0);
}

TEST_CASE("preprocess of a constant frame stays constant at any size") {
    sim::Rgb8Image frame(40, 30);
    for (std::size_t i = 0; i < frame.pixels.size(); i += 3) {
        frame.pixels[i] = 10;
        frame.pixels[i + 1] = 200;
        frame.pixels[i + 2] = 77;
    }
    for (auto [h, w] : {std::pair{1u, 1u}, {17u, 23u}, {64u, 64u}, {30u, 40u}}) {
        const auto img = preprocess(frame, h, w);
        for (std::size_t i = 0; i < img.data.size(); i += 3) {
            CHECK(img.data[i] == doctest::Approx(10 / 255.0).epsilon(1e-14));
            CHECK(img.data[i + 1] == doctest::Approx(200 / 255.0).epsilon(1e-14));
            CHECK(img.data[i + 2] == doctest::Approx(77 / 255.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("preprocess 2x2 to 1x1 averages the four pixels") {
    const auto frame = filled(2, 2, 9);
    const auto img = preprocess(frame, 1, 1);
    for (int ch = 0; ch < 3; ++ch) {
        double sum = 0;
        for (std::uint32_t r = 0; r < 2; ++r)
            for (std::uint32_t c = 0; c < 2; ++c) sum += frame.at(r, c, ch);
        CHECK(img.data[ch] == doctest::Approx(sum / 4.0 / 255.0).epsilon(1e-14));
    }
}

TEST_CASE("preprocess rejects empty frames") {
    CHECK_THROWS_AS(preprocess(sim::Rgb8Image{}, 4, 4), InputError);
    CHECK_THROWS_AS(preprocess(filled(2, 2, 0), 0, 4), InputError);
}

TEST_CASE("adapt_action scaling and clipping") {
    RuntimeConfig cfg = loop_runtime();
    SUBCASE("unit scale, zero offset") {
        cfg.scale.fill(1.0);
        cfg.offset.fill(0.0);
        const auto j = adapt_action(NormalizedAction{}, cfg);
        for (std::size_t i = 0; i < kActionDim; ++i) CHECK(j[i] == 0.0);
    }
    SUBCASE("half-range scale maps 0.5 to 90 degrees on the pan joint") {
        cfg.scale = {180, 90, 135, 90, 180, 1};
        cfg.offset.fill(0.0);
        NormalizedAction a;
        a.v.fill(0.5);
        const auto j = adapt_action(a, cfg);
        CHECK(j[0] == 90.0);
        CHECK(j[1] == 45.0);
        CHECK(j[2] == 67.5);
        CHECK(j[kGripper] == 0.5);
    }
    SUBCASE("values past the bounds land exactly on them") {
        cfg.scale.fill(1000.0);
        NormalizedAction a;
        a.v.fill(1.0);
        auto j = adapt_action(a, cfg);
        for (std::size_t i = 0; i < kActionDim; ++i) CHECK(j[i] == cfg.a_max[i]);
        a.v.fill(-1.0);
        j = adapt_action(a, cfg);
        for (std::size_t i = 0; i < kActionDim; ++i) CHECK(j[i] == cfg.a_min[i]);
    }
}

TEST_CASE("safety_filter arithmetic") {
    RuntimeConfig cfg = loop_runtime();
    const double dt = 0.05;
    JointVector prev;
    prev[kGripper] = 0.5;

    SUBCASE("fixed point") {
        const auto r = safety_filter(prev, prev, cfg, dt);
        CHECK(r.command == prev);
        CHECK(r.interventions == kNone);
    }
    SUBCASE("e-stop holds the previous command") {
        JointVector next;
        next.v.fill(30.0);
        const auto r = safety_filter(prev, next, cfg, dt, true);
        CHECK(r.command == prev);
        CHECK(r.interventions == kEstop);
    }
    SUBCASE("smoothing 0.8 from 0 toward 10 degrees gives 2 degrees") {
        cfg.smoothing = 0.8;
        JointVector next = prev;
        next[0] = 10.0;
        const auto r = safety_filter(prev, next, cfg, dt);
        CHECK(r.command[0] == doctest::Approx(2.0).epsilon(1e-15));
        CHECK(r.interventions == kNone);
    }
    SUBCASE("rate limit caps the step at 4.5 degrees") {
        cfg.smoothing = 0.0;
        JointVector next = prev;
        next[1] = 40.0;
        const auto r = safety_filter(prev, next, cfg, dt);
        CHECK(r.command[1] == 4.5);
        CHECK(r.interventions == kRateLimited);
    }
    SUBCASE("out-of-limit previous command is pulled back inside") {
        cfg.smoothing = 0.0;
        JointVector p = prev;
        p[1] = 93.0;
        const auto r = safety_filter(p, p, cfg, dt);
        CHECK(r.command[1] == 90.0);
        CHECK((r.interventions & kClamped) != 0);
    }
}

TEST_CASE("fuzzed policy outputs never violate limits or rates") {
    RuntimeConfig cfg = loop_runtime();
    const double dt = 1.0 / cfg.control_hz;
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> wide(-3.0, 3.0);
    JointVector prev = sim::SimConfig{}.home;
    for (int n = 0; n < 10000; ++n) {
        NormalizedAction a;
        for (double& v : a.v) v = (n % 97 == 0) ? std::nan("") : wide(rng);
        const auto cmd = safety_filter(prev, adapt_action(a, cfg), cfg, dt).command;
        for (std::size_t i = 0; i < kActionDim; ++i) {
            REQUIRE(std::isfinite(cmd[i]));
            REQUIRE(cmd[i] >= cfg.limits.lower(i));
            REQUIRE(cmd[i] <= cfg.limits.upper(i));
            REQUIRE(std::abs(cmd[i] - prev[i]) <= cfg.limits.rate(i) * dt + 1e-12);
        }
        prev = cmd;
    }
}

TEST_CASE("ChunkQueue order and wholesale refill") {
    ChunkQueue q(3);
    CHECK(q.empty());
    CHECK_FALSE(q.pop().has_value());
    policy::ActionChunk c(3);
    for (std::size_t i = 0; i < 3; ++i) c[i].v.fill(static_cast<double>(i));
    q.refill(c);
    CHECK(q.generation() == 1);
    CHECK((*q.pop())[0] == 0.0);
    policy::ActionChunk d(2);
    d[0].v.fill(7.0);
    d[1].v.fill(8.0);
    q.refill(d);
    CHECK(q.generation() == 2);
    CHECK(q.depth() == 2);
    CHECK((*q.pop())[0] == 7.0);
    CHECK((*q.pop())[0] == 8.0);
    CHECK(q.empty());
    CHECK_THROWS_AS(q.refill(policy::ActionChunk(4)), ShapeError);
}

TEST_CASE("control_loop bookkeeping") {
    const auto pcfg = loop_policy();
    const auto params = policy::init_params(pcfg, 5);
    sim::SimConfig sc;
    const auto start = sim::reset(sc, 11);
    RuntimeConfig cfg = loop_runtime();
    cfg.stop_on_success = false;

    SUBCASE("zero ticks") {
        cfg.max_ticks = 0;
        const auto log = control_loop(pcfg, params, sc, start, cfg);
        CHECK(log.ticks.empty());
        CHECK(log.refill_ticks.empty());
        CHECK(log.measured_forward_ms.empty());
    }
    SUBCASE("refill every 50 ticks with 45 ms inference") {
        cfg.max_ticks = 1000;
        const auto log = control_loop(pcfg, params, sc, start, cfg);
        REQUIRE(log.ticks.size() == 1000);
        REQUIRE(log.refill_ticks.size() == 20);
        for (std::size_t i = 0; i < log.refill_ticks.size(); ++i) CHECK(log.refill_ticks[i] == 50 * i);
        for (std::size_t k = 0; k < log.ticks.size(); ++k) {
            const auto& t = log.ticks[k];
            CHECK(t.time_s == doctest::Approx(k * 0.05).epsilon(1e-12));
            CHECK_FALSE(t.deadline_miss);
            CHECK(t.latency.total_ms() == 45.0);
            CHECK(t.latency.total_ms() == t.latency.pre_ms + t.latency.forward_ms + t.latency.post_ms);
            CHECK(t.queue_depth == 49 - k % 50);
            CHECK(t.generation == k / 50 + 1);
        }
        expect_stream_safe(log, start.joints, cfg);
    }
    SUBCASE("60 ms forward latency holds the last command for one tick per refill") {
        cfg.max_ticks = 300;
        cfg.injected = {5.0, 60.0, 5.0};
        const auto log = control_loop(pcfg, params, sc, start, cfg);
        std::size_t misses = 0;
        for (std::size_t k = 0; k < log.ticks.size(); ++k) {
            const auto& t = log.ticks[k];
            if (!t.deadline_miss) continue;
            ++misses;
            const JointVector before = k == 0 ? start.joints : log.ticks[k - 1].command;
            CHECK(t.command == before);
            CHECK(t.latency.total_ms() == 70.0);
        }
        CHECK(misses == log.refill_ticks.size());
        for (std::size_t i = 0; i < log.refill_ticks.size(); ++i) CHECK(log.refill_ticks[i] == 51 * i + 1);
    }
    SUBCASE("single camera failure degrades, both cameras failing stops") {
        cfg.max_ticks = 40;
        sc.camera_failures = {{sim::View::Wrist, 10, 20}};
        auto log = control_loop(pcfg, params, sc, start, cfg);
        REQUIRE(log.ticks.size() == 40);
        for (const auto& t : log.ticks) CHECK(t.degraded == (t.tick >= 10 && t.tick < 20));
        CHECK_FALSE(log.estopped);

        sc.camera_failures.push_back({sim::View::Top, 15, 30});
        log = control_loop(pcfg, params, sc, start, cfg);
        CHECK(log.estopped);
        REQUIRE(log.ticks.size() == 16);
        CHECK(log.ticks.back().estop);
        CHECK(log.ticks.back().command == log.ticks[14].command);
    }
    SUBCASE("external e-stop") {
        cfg.max_ticks = 100;
        cfg.estop = [](std::uint64_t k) { return k == 7; };
        const auto log = control_loop(pcfg, params, sc, start, cfg);
        CHECK(log.estopped);
        CHECK(log.ticks.size() == 8);
        CHECK((log.ticks.back().interventions & kEstop) != 0);
    }
    SUBCASE("deterministic") {
        cfg.max_ticks = 120;
        const auto a = control_loop(pcfg, params, sc, start, cfg);
        const auto b = control_loop(pcfg, params, sc, start, cfg);
        CHECK(a.ticks == b.ticks);
        CHECK(a.to_csv() == b.to_csv());
    }
    SUBCASE("configuration mismatch") {
        cfg.chunk = 10;
        CHECK_THROWS_AS(control_loop(pcfg, params, sc, start, cfg), ConfigError);
        cfg = loop_runtime();
        cfg.top_width = 32;
        CHECK_THROWS_AS(control_loop(pcfg, params, sc, start, cfg), ConfigError);
        cfg = loop_runtime();
        cfg.a_min[2] = cfg.a_max[2];
        CHECK_THROWS_AS(control_loop(pcfg, params, sc, start, cfg), ConfigError);
    }
}

TEST_CASE("random policies stay within limits over many resets") {
    const auto pcfg = loop_policy();
    sim::SimConfig sc;
    sc.pixel_noise_std = 3.0;
    sc.joint_noise_std_deg = 0.5;
    RuntimeConfig cfg = loop_runtime();
    cfg.max_ticks = 150;
    cfg.smoothing = 0.0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        auto params = policy::init_params(pcfg, seed);
        // Amplify the head so commands saturate and exercise the filter.
        for (auto t : policy::list_tensors(params))
            if (t.group == policy::ParamGroup::Head) *t.value *= 50.0;
        const auto start = sim::reset(sc, seed);
        expect_stream_safe(control_loop(pcfg, params, sc, start, cfg), start.joints, cfg);
    }
}

TEST_CASE("episode CSV layout") {
    EpisodeLog log;
    TickRecord t;
    t.tick = 3;
    t.time_s = 0.15;
    t.queue_depth = 4;
    t.latency = {5, 35, 5};
    t.command = JointVector{{1, 2, 3, 4, 5, 0.5}};
    log.ticks.push_back(t);
    CHECK(log.to_csv() ==
          "tick,time_s,queue_depth,tau_pre_ms,tau_forward_ms,tau_post_ms,tau_total_ms,deadline_miss,estop,degraded,"
          "theta1,theta2,theta3,theta4,theta5,gripper\n"
          "3,0.15,4,5,35,5,45,0,0,0,1,2,3,4,5,0.5\n");
}
