#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "vla/core.hpp"
#include "vla/simarm.hpp"

namespace vla::data {

/// Joint configuration placing the end effector at `target` with a
/// distance-dependent tool pitch; nullopt when outside the joint limits.
std::optional<JointVector> solve_ik(const sim::Vec3& target, const sim::SimConfig& cfg, double gripper);

struct ExpertTiming {
    double approach_s = 2.4;
    double align_s = 0.9;
    double descend_s = 1.2;
    double dwell_s = 1.2;
    double ascend_s = 1.0;
    double return_s = 3.0;
    double rest_s = 0.2;
    double jitter = 0.1;  // each segment scaled by U(1-jitter, 1+jitter)
    double hover_height = 0.08;
    double press_overshoot = 0.05;
    /// The approach ends above a point up to this far (meters) from the
    /// button; the align segment then corrects the offset before descending.
    double approach_error = 0.04;
};

/// Piecewise minimum-jerk joint trajectory: home -> coarse hover -> hover ->
/// press -> dwell -> hover -> home -> rest.
class ExpertTrajectory {
public:
    static std::optional<ExpertTrajectory> plan(const sim::SimState& start, const sim::SimConfig& cfg,
                                                const ExpertTiming& timing, std::mt19937_64& rng);

    JointVector at(double t) const;
    double duration() const { return knots_.back(); }

private:
    std::vector<JointVector> waypoints_;
    std::vector<double> knots_;  // cumulative times, knots_[0] = 0
};

/// s in [0,1] -> 10 s^3 - 15 s^4 + 6 s^5
double min_jerk(double s);

}  // namespace vla::data
