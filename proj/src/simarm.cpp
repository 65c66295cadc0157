#include "vla/simarm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vla/error.hpp"

namespace vla::sim {

namespace {

constexpr double kDeg = M_PI / 180.0;

struct Color {
    double r, g, b;
};

constexpr Color kTable{96, 84, 72};
constexpr Color kWristTable{110, 98, 86};
constexpr Color kButton{220, 40, 40};
constexpr Color kButtonPressed{40, 200, 60};
constexpr Color kMarker{40, 80, 230};

double overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

/// Float RGB canvas; shapes are blended by exact area coverage.
struct Canvas {
    std::uint32_t w, h;
    std::vector<double> px;

    Canvas(std::uint32_t w_, std::uint32_t h_, Color bg) : w(w_), h(h_), px(std::size_t(w_) * h_ * 3) {
        for (std::size_t i = 0; i < std::size_t(w) * h; ++i) {
            px[3 * i] = bg.r;
            px[3 * i + 1] = bg.g;
            px[3 * i + 2] = bg.b;
        }
    }

    // Axis-aligned square centred at (cx, cy) in pixel units.
    void square(double cx, double cy, double side, Color c) {
        const double x0 = cx - side / 2, x1 = cx + side / 2;
        const double y0 = cy - side / 2, y1 = cy + side / 2;
        const int c0 = std::max(0, static_cast<int>(std::floor(x0)));
        const int c1 = std::min(static_cast<int>(w) - 1, static_cast<int>(std::floor(x1)));
        const int r0 = std::max(0, static_cast<int>(std::floor(y0)));
        const int r1 = std::min(static_cast<int>(h) - 1, static_cast<int>(std::floor(y1)));
        for (int r = r0; r <= r1; ++r) {
            const double cov_y = overlap(r, r + 1, y0, y1);
            if (cov_y <= 0) continue;
            for (int col = c0; col <= c1; ++col) {
                const double a = cov_y * overlap(col, col + 1, x0, x1);
                if (a <= 0) continue;
                double* p = &px[(std::size_t(r) * w + col) * 3];
                p[0] += a * (c.r - p[0]);
                p[1] += a * (c.g - p[1]);
                p[2] += a * (c.b - p[2]);
            }
        }
    }

    Rgb8Image finish(double noise_std, std::mt19937_64& rng) const {
        Rgb8Image img(w, h);
        std::normal_distribution<double> n(0.0, noise_std > 0 ? noise_std : 1.0);
        for (std::size_t i = 0; i < px.size(); ++i) {
            double v = px[i];
            if (noise_std > 0) v += n(rng);
            img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
        return img;
    }
};

bool view_failed(const SimConfig& cfg, View v, std::uint64_t tick) {
    for (const auto& f : cfg.camera_failures) {
        if (f.view == v && tick >= f.start_tick && tick < f.end_tick) return true;
    }
    return false;
}

}  // namespace

bool Rgb8Image::all_zero() const {
    return std::all_of(pixels.begin(), pixels.end(), [](std::uint8_t b) { return b == 0; });
}

void SimConfig::validate() const {
    limits.validate();
    if (!(tick_hz > 0)) throw ConfigError("sim: tick rate must be positive");
    if (!(success_radius > 0)) throw ConfigError("sim: success radius must be positive");
    if (!(x_min < x_max && y_min < y_max)) throw ConfigError("sim: empty workspace bounds");
    for (double l : link_lengths) {
        if (!(l > 0)) throw ConfigError("sim: link lengths must be positive");
    }
    if (top_width == 0 || top_height == 0 || wrist_width == 0 || wrist_height == 0) {
        throw ConfigError("sim: camera resolution must be positive");
    }
}

Vec3 forward_kinematics(const JointVector& j, const SimConfig& cfg) {
    const auto& L = cfg.link_lengths;
    // pitch angles measured from vertical, positive toward the reach direction
    const double p2 = j[1] * kDeg;
    const double p3 = p2 + j[2] * kDeg;
    const double p4 = p3 + j[3] * kDeg;
    const double tool = L[3] + L[4];
    const double r = L[1] * std::sin(p2) + L[2] * std::sin(p3) + tool * std::sin(p4);
    const double z = L[0] + L[1] * std::cos(p2) + L[2] * std::cos(p3) + tool * std::cos(p4);
    const double yaw = j[0] * kDeg;
    return {r * std::cos(yaw), r * std::sin(yaw), z};
}

double horizontal_offset(const SimState& s) {
    return std::hypot(s.ee[0] - s.button[0], s.ee[1] - s.button[1]);
}

double distance_to_button(const SimState& s) {
    return std::hypot(horizontal_offset(s), s.ee[2] - s.button[2]);
}

SimState reset_with_button(const SimConfig& cfg, double x, double y) {
    SimState s;
    s.joints = clamp_joints(cfg.home, cfg.limits);
    s.button = {x, y, cfg.button_top_z};
    s.ee = forward_kinematics(s.joints, cfg);
    return s;
}

SimState reset(const SimConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(cfg.x_min, cfg.x_max);
    std::uniform_real_distribution<double> uy(cfg.y_min, cfg.y_max);
    const double x = ux(rng);
    const double y = uy(rng);
    return reset_with_button(cfg, x, y);
}

SimState step(const SimState& state, const JointVector& command, const SimConfig& cfg) {
    for (std::size_t i = 0; i < kActionDim; ++i) {
        if (!std::isfinite(command[i])) {
            throw NumericError("sim step: non-finite command for " + std::string(kJointNames[i]));
        }
    }
    const JointVector target = clamp_joints(command, cfg.limits);
    SimState next = state;
    for (std::size_t i = 0; i < kActionDim; ++i) {
        const double max_step = cfg.limits.rate(i) / cfg.tick_hz;
        const double delta = std::clamp(target[i] - state.joints[i], -max_step, max_step);
        next.joints[i] = std::clamp(state.joints[i] + delta, cfg.limits.lower(i), cfg.limits.upper(i));
        next.velocities[i] = (next.joints[i] - state.joints[i]) * cfg.tick_hz;
    }
    next.ee = forward_kinematics(next.joints, cfg);
    next.tick = state.tick + 1;
    const bool inside = horizontal_offset(next) <= cfg.success_radius;
    const bool below = next.ee[2] < cfg.button_top_z;
    next.contact = inside && below && (state.contact || state.ee[2] >= cfg.button_top_z);
    const bool deep = cfg.button_top_z - next.ee[2] > cfg.press_depth;
    if (deep && !next.contact) next.fouled = true;
    if (deep && next.contact && !next.fouled) next.pressed = true;
    return next;
}

std::array<double, 2> top_projection(const SimConfig& cfg, double x, double y) {
    const double ppm = cfg.top_pixels_per_meter;
    return {0.5 * cfg.top_width + (x - cfg.center_x()) * ppm,
            0.5 * cfg.top_height + (y - cfg.center_y()) * ppm};
}

std::pair<Rgb8Image, Rgb8Image> render_views(const SimState& state, const SimConfig& cfg,
                                             std::mt19937_64& rng) {
    const Color button = state.pressed ? kButtonPressed : kButton;

    Canvas top(cfg.top_width, cfg.top_height, kTable);
    const auto bp = top_projection(cfg, state.button[0], state.button[1]);
    top.square(bp[0], bp[1], cfg.button_size * cfg.top_pixels_per_meter, button);
    const auto ep = top_projection(cfg, state.ee[0], state.ee[1]);
    top.square(ep[0], ep[1], cfg.marker_size * cfg.top_pixels_per_meter, kMarker);

    // Downward-looking pinhole at the end effector, axes aligned with the table.
    Canvas wrist(cfg.wrist_width, cfg.wrist_height, kWristTable);
    const double dx = state.button[0] - state.ee[0];
    const double dy = state.button[1] - state.ee[1];
    const double h = std::max(state.ee[2] - state.button[2], 0.01);
    const double dist = std::sqrt(dx * dx + dy * dy + h * h);
    const double f = cfg.wrist_focal_px;
    wrist.square(0.5 * cfg.wrist_width + f * dx / h, 0.5 * cfg.wrist_height + f * dy / h,
                 f * cfg.button_size / dist, button);

    Rgb8Image top_img = view_failed(cfg, View::Top, state.tick)
                            ? Rgb8Image(cfg.top_width, cfg.top_height)
                            : top.finish(cfg.pixel_noise_std, rng);
    Rgb8Image wrist_img = view_failed(cfg, View::Wrist, state.tick)
                              ? Rgb8Image(cfg.wrist_width, cfg.wrist_height)
                              : wrist.finish(cfg.pixel_noise_std, rng);
    return {std::move(top_img), std::move(wrist_img)};
}

bool check_success(const SimState& s) { return s.pressed; }

JointVector observe_joints(const SimState& s, const SimConfig& cfg, std::mt19937_64& rng) {
    if (cfg.joint_noise_std_deg <= 0.0) return s.joints;
    std::normal_distribution<double> n(0.0, cfg.joint_noise_std_deg);
    JointVector j = s.joints;
    for (std::size_t i = 0; i < kArmJoints; ++i) j[i] += n(rng);
    return clamp_joints(j, cfg.limits);
}

}  // namespace vla::sim
