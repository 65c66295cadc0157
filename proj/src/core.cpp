#include "vla/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vla/error.hpp"

namespace vla {

JointLimits JointLimits::so101() {
    JointLimits lim;
    lim.min_deg = {-180.0, -90.0, -135.0, -90.0, -180.0};
    lim.max_deg = {180.0, 90.0, 135.0, 90.0, 180.0};
    lim.max_vel_deg_s = {90.0, 90.0, 90.0, 90.0, 90.0};
    return lim;
}

void JointLimits::validate() const {
    for (std::size_t i = 0; i < kActionDim; ++i) {
        if (!(lower(i) < upper(i))) {
            throw RangeError("joint limits: min >= max for " + std::string(kJointNames[i]));
        }
        if (!(rate(i) > 0.0)) {
            throw RangeError("joint limits: non-positive velocity limit for " +
                             std::string(kJointNames[i]));
        }
    }
}

bool JointVector::within(const JointLimits& lim, double tol) const {
    for (std::size_t i = 0; i < kActionDim; ++i) {
        if (!(v[i] >= lim.lower(i) - tol && v[i] <= lim.upper(i) + tol)) return false;
    }
    return true;
}

bool NormalizedAction::range_valid() const {
    for (std::size_t i = 0; i < kArmJoints; ++i) {
        if (!(v[i] >= -1.0 && v[i] <= 1.0)) return false;
    }
    return v[kGripper] >= 0.0 && v[kGripper] <= 1.0;
}

NormalizedAction normalize_action(const JointVector& j, const JointLimits& lim) {
    NormalizedAction a;
    for (std::size_t i = 0; i < kActionDim; ++i) {
        const double lo = lim.lower(i);
        const double hi = lim.upper(i);
        if (!(j[i] >= lo && j[i] <= hi)) {
            throw RangeError("normalize_action: " + std::string(kJointNames[i]) + " = " +
                             std::to_string(j[i]) + " outside [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + "]");
        }
        if (i == kGripper) {
            a[i] = j[i];
        } else {
            a[i] = (2.0 * j[i] - (lo + hi)) / (hi - lo);
        }
    }
    return a;
}

JointVector denormalize_action(const NormalizedAction& a, const JointLimits& lim) {
    if (!a.range_valid()) {
        for (std::size_t i = 0; i < kActionDim; ++i) {
            const double lo = i == kGripper ? 0.0 : -1.0;
            if (!(a[i] >= lo && a[i] <= 1.0)) {
                throw RangeError("denormalize_action: component " + std::string(kJointNames[i]) +
                                 " = " + std::to_string(a[i]) + " out of range");
            }
        }
    }
    JointVector j;
    for (std::size_t i = 0; i < kActionDim; ++i) {
        const double lo = lim.lower(i);
        const double hi = lim.upper(i);
        if (i == kGripper) {
            j[i] = a[i];
        } else {
            j[i] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * a[i];
        }
        j[i] = std::clamp(j[i], lo, hi);
    }
    return j;
}

JointVector clamp_joints(const JointVector& j, const JointLimits& lim) {
    JointVector out;
    for (std::size_t i = 0; i < kActionDim; ++i) {
        if (!std::isfinite(j[i])) {
            throw NumericError("clamp_joints: non-finite value for " + std::string(kJointNames[i]));
        }
        out[i] = std::clamp(j[i], lim.lower(i), lim.upper(i));
    }
    return out;
}

}  // namespace vla
