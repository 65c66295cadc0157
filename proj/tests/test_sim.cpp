#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "vla/error.hpp"
#include "vla/expert.hpp"
#include "vla/simarm.hpp"

using namespace vla;
using namespace vla::sim;

namespace {

// Weighted centroid of pixels whose red channel rises above the background.
std::array<double, 3> red_centroid(const Rgb8Image& img, double bg_red) {
    double sx = 0, sy = 0, sw = 0;
    for (std::uint32_t r = 0; r < img.height; ++r) {
        for (std::uint32_t c = 0; c < img.width; ++c) {
            const double w = std::max(0.0, img.at(r, c, 0) - bg_red);
            sx += w * (c + 0.5);
            sy += w * (r + 0.5);
            sw += w;
        }
    }
    return {sx / sw, sy / sw, sw};
}

// Open-loop press at a fixed table point: hover, descend, hold, rise.
std::vector<JointVector> press_sequence(const SimConfig& cfg, double x, double y) {
    const auto hover = data::solve_ik({x, y, cfg.button_top_z + 0.08}, cfg, 1.0);
    const auto down = data::solve_ik({x, y, cfg.button_top_z - 0.03}, cfg, 1.0);
    std::vector<JointVector> seq;
    if (!hover || !down) return seq;
    for (int i = 0; i < 20; ++i) seq.push_back(*hover);
    for (int i = 0; i < 8; ++i) seq.push_back(*down);
    for (int i = 0; i < 6; ++i) seq.push_back(*hover);
    return seq;
}

double success_rate(const SimConfig& cfg, const std::vector<JointVector>& seq) {
    int ok = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto st = reset(cfg, 5000 + s);
        for (const auto& c : seq) st = step(st, c, cfg);
        ok += check_success(st);
    }
    return ok / 100.0;
}

}  // namespace

TEST_CASE("reset") {
    const SimConfig cfg;
    CHECK(reset(cfg, 3) == reset(cfg, 3));
    CHECK_FALSE(reset(cfg, 3).button == reset(cfg, 4).button);
    const auto s = reset(cfg, 9);
    CHECK(s.joints.within(cfg.limits));
    CHECK(s.joints == cfg.home);
    CHECK_FALSE(check_success(s));
    CHECK(s.button[2] == cfg.button_top_z);

    // chi-square over a 5x5 grid, 24 degrees of freedom, critical value at p = 0.001
    std::array<int, 25> bins{};
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const auto b = reset(cfg, i).button;
        REQUIRE(b[0] >= cfg.x_min);
        REQUIRE(b[0] <= cfg.x_max);
        REQUIRE(b[1] >= cfg.y_min);
        REQUIRE(b[1] <= cfg.y_max);
        const int bx = std::min(4, static_cast<int>((b[0] - cfg.x_min) / (cfg.x_max - cfg.x_min) * 5));
        const int by = std::min(4, static_cast<int>((b[1] - cfg.y_min) / (cfg.y_max - cfg.y_min) * 5));
        ++bins[static_cast<std::size_t>(by * 5 + bx)];
    }
    double chi2 = 0.0;
    for (int n : bins) chi2 += (n - 40.0) * (n - 40.0) / 40.0;
    CHECK(chi2 < 51.18);
}

TEST_CASE("step kinematics") {
    const SimConfig cfg;
    const auto s = reset(cfg, 1);
    const auto same = step(s, s.joints, cfg);
    CHECK(same.joints == s.joints);
    CHECK(same.ee == s.ee);
    CHECK(same.tick == 1);

    JointVector far = s.joints;
    far[0] = 170.0;
    far[2] = -100.0;
    const auto n = step(s, far, cfg);
    CHECK(n.joints[0] - s.joints[0] == doctest::Approx(4.5).epsilon(1e-12));
    CHECK(s.joints[2] - n.joints[2] == doctest::Approx(4.5).epsilon(1e-12));
    CHECK(n.velocities[0] == doctest::Approx(90.0));

    JointVector bad = s.joints;
    bad[3] = std::nan("");
    CHECK_THROWS_AS(step(s, bad, cfg), NumericError);

    // forward kinematics: straight up
    JointVector up;
    const auto top = forward_kinematics(up, cfg);
    double len = 0.0;
    for (double l : cfg.link_lengths) len += l;
    CHECK(top[0] == doctest::Approx(0.0));
    CHECK(top[2] == doctest::Approx(len));
}

TEST_CASE("property: limits hold under arbitrary commands and stepping is deterministic") {
    const SimConfig cfg;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> wild(0.0, 400.0);
    auto a = reset(cfg, 2), b = a;
    for (int t = 0; t < 2000; ++t) {
        JointVector c;
        for (std::size_t i = 0; i < kActionDim; ++i) c[i] = wild(rng);
        const auto next = step(a, c, cfg);
        REQUIRE(next.joints.within(cfg.limits));
        for (std::size_t i = 0; i < kActionDim; ++i) {
            REQUIRE(std::abs(next.joints[i] - a.joints[i]) <= cfg.limits.rate(i) / cfg.tick_hz + 1e-12);
        }
        if (a.pressed) REQUIRE(next.pressed);
        if (a.fouled) REQUIRE(next.fouled);
        if (a.fouled && !a.pressed) REQUIRE_FALSE(next.pressed);
        a = next;
        b = step(b, c, cfg);
    }
    CHECK(a == b);
}

TEST_CASE("contact needs entry from above and misses foul the episode") {
    const SimConfig cfg;
    const auto st0 = reset_with_button(cfg, 0.32, 0.0);
    auto run = [&](const std::vector<JointVector>& seq) {
        auto st = st0;
        for (const auto& c : seq) st = step(st, c, cfg);
        return st;
    };
    const auto on = press_sequence(cfg, 0.32, 0.0);
    const auto off = press_sequence(cfg, 0.40, 0.0);
    REQUIRE_FALSE(on.empty());
    REQUIRE_FALSE(off.empty());

    const auto hit = run(on);
    CHECK(hit.pressed);
    CHECK_FALSE(hit.fouled);

    auto miss_then_hit = off;
    miss_then_hit.insert(miss_then_hit.end(), on.begin(), on.end());
    const auto late = run(miss_then_hit);
    CHECK(late.fouled);
    CHECK_FALSE(late.pressed);

    auto hit_then_miss = on;
    hit_then_miss.insert(hit_then_miss.end(), off.begin(), off.end());
    const auto kept = run(hit_then_miss);
    CHECK(kept.pressed);
    CHECK(kept.fouled);

    // Sliding sideways into the footprint below its top surface never presses.
    std::vector<JointVector> slide;
    const double low = cfg.button_top_z - 0.003;
    for (double x = 0.40; x >= 0.32 - 1e-9; x -= 0.002) {
        const auto q = data::solve_ik({x, 0.0, low}, cfg, 1.0);
        REQUIRE(q);
        slide.insert(slide.end(), x == 0.40 ? 30 : 2, *q);
    }
    const auto deep_on = data::solve_ik({0.32, 0.0, cfg.button_top_z - 0.03}, cfg, 1.0);
    REQUIRE(deep_on);
    slide.insert(slide.end(), 10, *deep_on);
    const auto side = run(slide);
    CHECK_FALSE(side.pressed);
    CHECK(side.fouled);
}

TEST_CASE("expert presses the button") {
    SimConfig cfg;
    cfg.tick_hz = 30.0;
    int ok = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        auto st = reset(cfg, s);
        std::mt19937_64 rng(s);
        const auto plan = data::ExpertTrajectory::plan(st, cfg, data::ExpertTiming{}, rng);
        REQUIRE(plan.has_value());
        bool was = false;
        for (double t = 1.0 / 30; t <= plan->duration(); t += 1.0 / 30) {
            st = step(st, plan->at(t), cfg);
            if (was) REQUIRE(check_success(st));
            was = check_success(st);
        }
        ok += check_success(st);
    }
    CHECK(ok == 50);
    CHECK(data::min_jerk(0.0) == 0.0);
    CHECK(data::min_jerk(1.0) == 1.0);
    CHECK(data::min_jerk(0.5) == doctest::Approx(0.5));
}

TEST_CASE("rendering") {
    SimConfig cfg;
    std::mt19937_64 rng(0);
    auto aside = [&](SimState st) {
        st.joints[0] = 80.0;  // swing the marker clear of the button
        st.ee = forward_kinematics(st.joints, cfg);
        return st;
    };
    const auto centre = aside(reset_with_button(cfg, cfg.center_x(), cfg.center_y()));
    const auto [top, wrist] = render_views(centre, cfg, rng);
    CHECK(top.width == 64);
    CHECK(wrist.width == 32);
    const auto c0 = red_centroid(top, 96.0);
    CHECK(c0[0] == doctest::Approx(32.0).epsilon(1e-9));
    CHECK(c0[1] == doctest::Approx(32.0).epsilon(1e-9));

    const auto moved = aside(reset_with_button(cfg, cfg.center_x() + 0.1, cfg.center_y()));
    const auto c1 = red_centroid(render_views(moved, cfg, rng).first, 96.0);
    const auto p0 = top_projection(cfg, cfg.center_x(), cfg.center_y());
    const auto p1 = top_projection(cfg, cfg.center_x() + 0.1, cfg.center_y());
    CHECK(p0[0] == 32.0);
    CHECK(p1[0] - p0[0] == doctest::Approx(0.1 * cfg.top_pixels_per_meter).epsilon(1e-12));
    CHECK(p1[1] == p0[1]);
    // 8-bit edge blending limits the rendered centroid to sub-pixel accuracy
    CHECK(std::abs((c1[0] - c0[0]) - 0.1 * cfg.top_pixels_per_meter) < 0.1);
    CHECK(std::abs(c1[1] - c0[1]) < 0.1);

    const auto ee = reset(cfg, 0).ee;
    const auto under = reset_with_button(cfg, ee[0], ee[1]);
    const auto w0 = red_centroid(render_views(under, cfg, rng).second, 110.0);
    CHECK(w0[0] == doctest::Approx(16.0).epsilon(1e-9));
    CHECK(w0[1] == doctest::Approx(16.0).epsilon(1e-9));
    for (double off : {0.02, 0.05}) {
        const auto side = reset_with_button(cfg, ee[0] + off, ee[1]);
        const auto w1 = red_centroid(render_views(side, cfg, rng).second, 110.0);
        CHECK(w1[2] < w0[2]);
        CHECK(w1[0] > 16.0);
    }

    std::mt19937_64 r1(5), r2(5);
    SimConfig noisy = cfg;
    noisy.pixel_noise_std = 4.0;
    CHECK(render_views(centre, noisy, r1) == render_views(centre, noisy, r2));
    CHECK_FALSE(render_views(centre, noisy, r1).first == top);

    SimConfig failing = cfg;
    failing.camera_failures.push_back({View::Wrist, 0, 2});
    auto st = centre;
    CHECK(render_views(st, failing, rng).second.all_zero());
    CHECK_FALSE(render_views(st, failing, rng).first.all_zero());
    st = step(step(st, st.joints, failing), st.joints, failing);
    CHECK_FALSE(render_views(st, failing, rng).second.all_zero());
}

TEST_CASE("vision necessity: fixed open-loop press sequences rarely succeed") {
    const SimConfig cfg;
    double best_single = 0.0;
    std::vector<std::pair<double, std::array<double, 2>>> scored;
    for (double x = cfg.x_min; x <= cfg.x_max + 1e-9; x += 0.02) {
        for (double y = cfg.y_min; y <= cfg.y_max + 1e-9; y += 0.02) {
            const auto seq = press_sequence(cfg, x, y);
            if (seq.empty()) continue;
            const double r = success_rate(cfg, seq);
            best_single = std::max(best_single, r);
            scored.push_back({r, {x, y}});
        }
    }
    CHECK(best_single <= 0.30);
    for (const auto& [r, p] : {scored.front(), scored[scored.size() / 2], scored.back()}) {
        auto st = reset_with_button(cfg, p[0], p[1]);
        for (const auto& c : press_sequence(cfg, p[0], p[1])) st = step(st, c, cfg);
        CHECK(check_success(st));
    }

    // Chain the best non-overlapping presses that fit in a 20 s episode; only
    // the first deep press can count.
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<JointVector> chain;
    std::vector<std::array<double, 2>> used;
    for (const auto& [r, p] : scored) {
        bool clash = false;
        for (const auto& u : used) clash |= std::hypot(u[0] - p[0], u[1] - p[1]) < 2 * cfg.success_radius;
        if (clash) continue;
        const auto seq = press_sequence(cfg, p[0], p[1]);
        if (chain.size() + seq.size() > 400) break;
        chain.insert(chain.end(), seq.begin(), seq.end());
        used.push_back(p);
    }
    CHECK(used.size() >= 5);
    CHECK(success_rate(cfg, chain) <= 0.30);
}
