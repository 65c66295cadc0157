#include "vla/expert.hpp"

#include <algorithm>
#include <cmath>

namespace vla::data {

namespace {
constexpr double kRad = 180.0 / M_PI;
}

double min_jerk(double s) {
    s = std::clamp(s, 0.0, 1.0);
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

std::optional<JointVector> solve_ik(const sim::Vec3& target, const sim::SimConfig& cfg, double gripper) {
    const auto& L = cfg.link_lengths;
    const double tool = L[3] + L[4];
    const double r = std::hypot(target[0], target[1]);
    // tool pitch from vertical: tilted back over the base for near targets,
    // forward for far ones
    const double psi_deg = 217.0 - 96.0 * (r - 0.12) / 0.44;
    const double psi = psi_deg / kRad;
    const double wx = r - tool * std::sin(psi);
    const double wz = target[2] - tool * std::cos(psi);
    const double dx = wx;
    const double dz = wz - L[0];
    const double dist = std::hypot(dx, dz);
    if (dist > L[1] + L[2] || dist < std::abs(L[1] - L[2]) || dist == 0.0) return std::nullopt;
    const double a = std::atan2(dx, dz);
    const double cos_g = (L[1] * L[1] + dist * dist - L[2] * L[2]) / (2.0 * L[1] * dist);
    const double g = std::acos(std::clamp(cos_g, -1.0, 1.0));
    const double p2 = a - g;
    const double ex = L[1] * std::sin(p2);
    const double ez = L[0] + L[1] * std::cos(p2);
    const double p3 = std::atan2(wx - ex, wz - ez);

    JointVector j;
    j[0] = std::atan2(target[1], target[0]) * kRad;
    j[1] = p2 * kRad;
    j[2] = (p3 - p2) * kRad;
    j[3] = (psi - p3) * kRad;
    j[4] = 0.5 * j[0];
    j[5] = gripper;
    if (!j.within(cfg.limits)) return std::nullopt;
    return j;
}

std::optional<ExpertTrajectory> ExpertTrajectory::plan(const sim::SimState& start, const sim::SimConfig& cfg,
                                                       const ExpertTiming& timing, std::mt19937_64& rng) {
    const auto& b = start.button;
    const auto hover = solve_ik({b[0], b[1], b[2] + timing.hover_height}, cfg, 0.0);
    const auto press = solve_ik({b[0], b[1], b[2] - timing.press_overshoot}, cfg, 0.0);
    if (!hover || !press) return std::nullopt;

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::optional<JointVector> coarse;
    for (int attempt = 0; attempt < 8 && !coarse; ++attempt) {
        const double rad = timing.approach_error * std::sqrt(unit(rng));
        const double ang = 2.0 * M_PI * unit(rng);
        coarse = solve_ik({b[0] + rad * std::cos(ang), b[1] + rad * std::sin(ang), b[2] + timing.hover_height}, cfg,
                          0.0);
    }
    if (!coarse) coarse = hover;

    std::uniform_real_distribution<double> jit(1.0 - timing.jitter, 1.0 + timing.jitter);
    ExpertTrajectory tr;
    JointVector home = start.joints;
    tr.waypoints_ = {home, *coarse, *hover, *press, *press, *hover, home, home};
    const double seg[] = {timing.approach_s, timing.align_s, timing.descend_s, timing.dwell_s,
                          timing.ascend_s,   timing.return_s, timing.rest_s};
    tr.knots_ = {0.0};
    for (double s : seg) tr.knots_.push_back(tr.knots_.back() + s * jit(rng));
    return tr;
}

JointVector ExpertTrajectory::at(double t) const {
    if (t <= 0.0) return waypoints_.front();
    for (std::size_t i = 1; i < knots_.size(); ++i) {
        if (t <= knots_[i]) {
            const double s = min_jerk((t - knots_[i - 1]) / (knots_[i] - knots_[i - 1]));
            JointVector q;
            for (std::size_t k = 0; k < kActionDim; ++k) {
                q[k] = waypoints_[i - 1][k] + s * (waypoints_[i][k] - waypoints_[i - 1][k]);
            }
            return q;
        }
    }
    return waypoints_.back();
}

}  // namespace vla::data
