#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace vla {

inline constexpr std::size_t kArmJoints = 5;
inline constexpr std::size_t kActionDim = 6;
inline constexpr std::size_t kGripper = 5;

inline constexpr std::array<std::string_view, kActionDim> kJointNames{
    "shoulder_pan", "shoulder_lift", "elbow_flex", "wrist_flex", "wrist_roll", "gripper"};

/// Per-joint position and rate limits. Arm joints are in degrees (deg/s for
/// rates); the gripper is dimensionless in [gripper_min, gripper_max].
struct JointLimits {
    std::array<double, kArmJoints> min_deg{};
    std::array<double, kArmJoints> max_deg{};
    std::array<double, kArmJoints> max_vel_deg_s{};
    double gripper_min = 0.0;
    double gripper_max = 1.0;
    double gripper_rate = 2.0;  // units per second

    /// SO101 limits with a uniform 90 deg/s velocity cap.
    static JointLimits so101();

    double lower(std::size_t i) const { return i == kGripper ? gripper_min : min_deg[i]; }
    double upper(std::size_t i) const { return i == kGripper ? gripper_max : max_deg[i]; }
    double rate(std::size_t i) const { return i == kGripper ? gripper_rate : max_vel_deg_s[i]; }

    /// Throws RangeError when min >= max or a rate is not strictly positive.
    void validate() const;
};

/// Robot joint state or command in physical units (degrees, gripper in [0,1]).
struct JointVector {
    std::array<double, kActionDim> v{};

    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }
    bool operator==(const JointVector&) const = default;

    bool within(const JointLimits& lim, double tol = 0.0) const;
};

/// Policy-space action: five joints in [-1,1], gripper in [0,1].
struct NormalizedAction {
    std::array<double, kActionDim> v{};

    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }
    bool operator==(const NormalizedAction&) const = default;

    bool range_valid() const;
};

NormalizedAction normalize_action(const JointVector& j, const JointLimits& lim);
JointVector denormalize_action(const NormalizedAction& a, const JointLimits& lim);

/// Componentwise clip into limits. Throws NumericError on NaN/inf.
JointVector clamp_joints(const JointVector& j, const JointLimits& lim);

}  // namespace vla
