#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "vla/core.hpp"

namespace vla::sim {

using Vec3 = std::array<double, 3>;

enum class View : std::uint8_t { Top = 0, Wrist = 1 };

/// Interleaved 8-bit RGB raster, row-major (row, col, channel).
struct Rgb8Image {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels;

    Rgb8Image() = default;
    Rgb8Image(std::uint32_t w, std::uint32_t h) : width(w), height(h), pixels(std::size_t(w) * h * 3, 0) {}

    bool empty() const { return width == 0 || height == 0; }
    bool all_zero() const;
    std::uint8_t& at(std::uint32_t row, std::uint32_t col, int ch) {
        return pixels[(std::size_t(row) * width + col) * 3 + ch];
    }
    std::uint8_t at(std::uint32_t row, std::uint32_t col, int ch) const {
        return pixels[(std::size_t(row) * width + col) * 3 + ch];
    }
    bool operator==(const Rgb8Image&) const = default;
};

/// Ticks in [start_tick, end_tick) render the view as an all-zero frame.
struct CameraFailure {
    View view = View::Top;
    std::uint64_t start_tick = 0;
    std::uint64_t end_tick = 0;
};

struct SimConfig {
    JointLimits limits = JointLimits::so101();
    double tick_hz = 20.0;
    // base height, upper arm, forearm, wrist, tool (meters)
    std::array<double, 5> link_lengths{0.16, 0.24, 0.22, 0.10, 0.06};
    // button workspace on the table plane (meters)
    double x_min = 0.12, x_max = 0.52;
    double y_min = -0.20, y_max = 0.20;
    double button_size = 0.04;
    double button_top_z = 0.05;
    double press_depth = 0.005;
    double success_radius = 0.03;
    double pixel_noise_std = 0.0;
    double joint_noise_std_deg = 0.0;
    std::vector<CameraFailure> camera_failures;
    std::uint64_t seed = 0;

    std::uint32_t top_width = 64, top_height = 64;
    std::uint32_t wrist_width = 32, wrist_height = 32;
    double top_pixels_per_meter = 64.0 / 0.6;
    double wrist_focal_px = 24.0;
    double marker_size = 0.02;

    JointVector home{{0.0, 0.0, 60.0, 60.0, 0.0, 1.0}};

    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }
    void validate() const;
};

struct SimState {
    JointVector joints;
    std::array<double, kActionDim> velocities{};  // deg/s (gripper: units/s)
    Vec3 button{};
    bool pressed = false;
    /// End effector is inside the button footprint after descending through
    /// its top surface; lateral entry below the top never makes contact.
    bool contact = false;
    /// End effector went deeper than the press depth without button contact,
    /// i.e. struck the panel. A fouled episode can no longer succeed.
    bool fouled = false;
    std::uint64_t tick = 0;
    Vec3 ee{};

    bool operator==(const SimState&) const = default;
};

/// End-effector position of the serial 5R chain: a base yaw followed by three
/// pitch joints in the vertical plane and a roll that leaves the tip in place.
Vec3 forward_kinematics(const JointVector& j, const SimConfig& cfg);

/// Horizontal distance from end effector to the button centre.
double horizontal_offset(const SimState& s);
double distance_to_button(const SimState& s);

/// Home pose, button drawn uniformly from the workspace bounds.
SimState reset(const SimConfig& cfg, std::uint64_t seed);

/// Places the button at an explicit position (z is the button top height).
SimState reset_with_button(const SimConfig& cfg, double x, double y);

SimState step(const SimState& state, const JointVector& command, const SimConfig& cfg);

std::pair<Rgb8Image, Rgb8Image> render_views(const SimState& state, const SimConfig& cfg,
                                             std::mt19937_64& rng);

/// Top-view pixel coordinate (col, row) of a table point; pixel centres sit
/// at half-integers.
std::array<double, 2> top_projection(const SimConfig& cfg, double x, double y);

bool check_success(const SimState& s);

/// Joint reading with the configured sensor noise, clamped to the limits.
JointVector observe_joints(const SimState& s, const SimConfig& cfg, std::mt19937_64& rng);

}  // namespace vla::sim
