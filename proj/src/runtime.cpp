#include "vla/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "vla/binary_io.hpp"
#include "vla/error.hpp"

namespace vla::runtime {

RuntimeConfig RuntimeConfig::from_limits(const JointLimits& limits) {
    RuntimeConfig c;
    c.limits = limits;
    for (std::size_t i = 0; i < kActionDim; ++i) {
        const double lo = limits.lower(i), hi = limits.upper(i);
        if (i == kGripper) {
            c.scale[i] = 1.0;
            c.offset[i] = 0.0;
        } else {
            c.scale[i] = 0.5 * (hi - lo);
            c.offset[i] = 0.5 * (hi + lo);
        }
        c.a_min[i] = lo;
        c.a_max[i] = hi;
    }
    return c;
}

void RuntimeConfig::validate() const {
    if (!(control_hz > 0)) throw ConfigError("runtime: control_hz must be positive");
    if (!(budget_ms > 0)) throw ConfigError("runtime: budget_ms must be positive");
    if (chunk < 1) throw ConfigError("runtime: chunk must be >= 1");
    if (!(smoothing >= 0 && smoothing < 1)) throw ConfigError("runtime: smoothing must lie in [0,1)");
    for (std::size_t i = 0; i < kActionDim; ++i) {
        if (!(a_min[i] < a_max[i])) throw ConfigError("runtime: a_min must be below a_max for " + std::string(kJointNames[i]));
    }
    limits.validate();
}

policy::Image preprocess(const sim::Rgb8Image& frame, std::uint32_t height, std::uint32_t width) {
    if (frame.empty() || height == 0 || width == 0) throw InputError("preprocess: zero-sized frame");
    if (frame.pixels.size() != std::size_t(frame.width) * frame.height * 3) {
        throw ShapeError("preprocess: pixel buffer does not match frame geometry");
    }
    if (frame.height == height && frame.width == width) {
        return policy::image_from_rgb8(height, width, frame.pixels);
    }
    policy::Image out(height, width);
    const double sy = static_cast<double>(frame.height) / height;
    const double sx = static_cast<double>(frame.width) / width;
    auto coord = [](double c, std::uint32_t n, std::uint32_t& i0, std::uint32_t& i1, double& f) {
        c = std::clamp(c, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::uint32_t>(std::floor(c));
        i1 = std::min(i0 + 1, n - 1);
        f = c - i0;
    };
    for (std::uint32_t r = 0; r < height; ++r) {
        std::uint32_t r0, r1;
        double fy;
        coord((r + 0.5) * sy - 0.5, frame.height, r0, r1, fy);
        for (std::uint32_t c = 0; c < width; ++c) {
            std::uint32_t c0, c1;
            double fx;
            coord((c + 0.5) * sx - 0.5, frame.width, c0, c1, fx);
            for (int ch = 0; ch < 3; ++ch) {
                const double top = (1 - fx) * frame.at(r0, c0, ch) + fx * frame.at(r0, c1, ch);
                const double bot = (1 - fx) * frame.at(r1, c0, ch) + fx * frame.at(r1, c1, ch);
                out.data[(std::size_t(r) * width + c) * 3 + ch] = ((1 - fy) * top + fy * bot) / 255.0;
            }
        }
    }
    return out;
}

JointVector adapt_action(const NormalizedAction& a, const RuntimeConfig& cfg) {
    JointVector j;
    for (std::size_t i = 0; i < kActionDim; ++i) {
        const double v = a[i] * cfg.scale[i] + cfg.offset[i];
        // NaN falls to the lower bound so the output is always in range.
        j[i] = std::isnan(v) ? cfg.a_min[i] : std::clamp(v, cfg.a_min[i], cfg.a_max[i]);
    }
    return j;
}

FilterResult safety_filter(const JointVector& prev, const JointVector& next, const RuntimeConfig& cfg, double dt,
                           bool estop) {
    FilterResult r;
    if (estop) {
        r.command = prev;
        r.interventions = kEstop;
        return r;
    }
    const double b = cfg.smoothing;
    for (std::size_t i = 0; i < kActionDim; ++i) {
        double c = b * prev[i] + (1.0 - b) * next[i];
        if (std::isnan(c)) c = prev[i];
        const double step = cfg.limits.rate(i) * dt;
        if (c > prev[i] + step || c < prev[i] - step) {
            c = std::clamp(c, prev[i] - step, prev[i] + step);
            r.interventions |= kRateLimited;
        }
        const double lo = cfg.limits.lower(i), hi = cfg.limits.upper(i);
        if (c < lo || c > hi) {
            c = std::clamp(c, lo, hi);
            r.interventions |= kClamped;
        }
        r.command[i] = c;
    }
    return r;
}

void ChunkQueue::refill(const policy::ActionChunk& chunk) {
    if (chunk.size() > capacity_) throw ShapeError("ChunkQueue: chunk longer than capacity");
    pending_.assign(chunk.begin(), chunk.end());
    ++generation_;
}

std::optional<NormalizedAction> ChunkQueue::pop() {
    if (pending_.empty()) return std::nullopt;
    NormalizedAction a = pending_.front();
    pending_.pop_front();
    return a;
}

std::uint64_t observation_digest(const sim::Rgb8Image& top, const sim::Rgb8Image& wrist, const JointVector& joints) {
    std::uint64_t h = io::fnv1a(top.pixels);
    h = io::fnv1a(wrist.pixels, h);
    io::ByteWriter w;
    for (double v : joints.v) w.f64(v);
    return io::fnv1a(w.data(), h);
}

std::string EpisodeLog::to_csv() const {
    std::ostringstream o;
    o << "tick,time_s,queue_depth,tau_pre_ms,tau_forward_ms,tau_post_ms,tau_total_ms,deadline_miss,estop,degraded,"
         "theta1,theta2,theta3,theta4,theta5,gripper\n";
    char buf[96];
    for (const auto& t : ticks) {
        std::snprintf(buf, sizeof buf, "%llu,%.6g,%zu,%.6g,%.6g,%.6g,%.6g,%d,%d,%d", static_cast<unsigned long long>(t.tick),
                      t.time_s, t.queue_depth, t.latency.pre_ms, t.latency.forward_ms, t.latency.post_ms,
                      t.latency.total_ms(), t.deadline_miss ? 1 : 0, t.estop ? 1 : 0, t.degraded ? 1 : 0);
        o << buf;
        for (double v : t.command.v) {
            std::snprintf(buf, sizeof buf, ",%.6g", v);
            o << buf;
        }
        o << "\n";
    }
    return o.str();
}

EpisodeLog control_loop(const policy::PolicyConfig& pcfg, const policy::PolicyParams& params,
                        const sim::SimConfig& sim_cfg, const sim::SimState& start, const RuntimeConfig& cfg,
                        const std::string& task) {
    cfg.validate();
    if (cfg.chunk != pcfg.chunk) {
        throw ConfigError("control_loop: runtime chunk " + std::to_string(cfg.chunk) + " != policy chunk " +
                          std::to_string(pcfg.chunk));
    }
    if (cfg.top_width != pcfg.top_width || cfg.top_height != pcfg.top_height || cfg.wrist_width != pcfg.wrist_width ||
        cfg.wrist_height != pcfg.wrist_height) {
        throw ConfigError("control_loop: runtime image resolution differs from the policy's");
    }

    sim::SimConfig sc = sim_cfg;
    sc.tick_hz = cfg.control_hz;
    sim::SimState state = start;
    std::mt19937_64 rng(sc.seed ^ 0x72756e74696d65ULL);
    const double dt = 1.0 / cfg.control_hz;

    EpisodeLog log;
    ChunkQueue queue(cfg.chunk);
    JointVector prev = state.joints;

    struct Pending {
        policy::ActionChunk chunk;
        double ready_s;
        StageLatency latency;
    };
    std::optional<Pending> pending;
    StageLatency active;  // inference that produced the queued actions
    std::uint64_t refills = 0;

    for (std::uint64_t k = 0; k < cfg.max_ticks; ++k) {
        TickRecord rec;
        rec.tick = k;
        rec.time_s = static_cast<double>(k) * dt;

        auto [top, wrist] = sim::render_views(state, sc, rng);
        const JointVector joints = sim::observe_joints(state, sc, rng);
        rec.obs_digest = observation_digest(top, wrist, joints);
        const bool top_ok = !top.all_zero();
        const bool wrist_ok = !wrist.all_zero();
        rec.degraded = top_ok != wrist_ok;
        const bool estop = (!top_ok && !wrist_ok) || (cfg.estop && cfg.estop(k));

        if (!estop && queue.empty() && !pending) {
            policy::Observation obs;
            if (top_ok) obs.top = preprocess(top, cfg.top_height, cfg.top_width);
            if (wrist_ok) obs.wrist = preprocess(wrist, cfg.wrist_height, cfg.wrist_width);
            obs.joints = joints;
            obs.task = task;
            const auto t0 = std::chrono::steady_clock::now();
            auto chunk = policy::forward(obs, pcfg, params);
            const auto t1 = std::chrono::steady_clock::now();
            log.measured_forward_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            const StageLatency lat = cfg.latency_schedule ? cfg.latency_schedule(refills) : cfg.injected;
            ++refills;
            pending = Pending{std::move(chunk), rec.time_s + lat.total_ms() / 1000.0, lat};
        }
        // Ready when the result lands inside this tick's budget.
        if (pending && pending->ready_s <= rec.time_s + cfg.budget_ms / 1000.0 + 1e-12) {
            queue.refill(pending->chunk);
            active = pending->latency;
            log.refill_ticks.push_back(k);
            pending.reset();
        }

        FilterResult out;
        if (estop) {
            out = safety_filter(prev, prev, cfg, dt, true);
            rec.estop = true;
        } else if (auto a = queue.pop()) {
            out = safety_filter(prev, adapt_action(*a, cfg), cfg, dt);
        } else {
            out.command = prev;
            rec.deadline_miss = pending.has_value();
        }
        rec.latency = pending ? pending->latency : active;
        rec.command = out.command;
        rec.interventions = out.interventions;
        rec.queue_depth = queue.depth();
        rec.generation = queue.generation();

        state = sim::step(state, out.command, sc);
        prev = out.command;
        rec.distance_to_button = sim::distance_to_button(state);
        log.ticks.push_back(rec);

        if (sim::check_success(state)) {
            log.success = true;
            if (cfg.stop_on_success) break;
        }
        if (estop) {
            log.estopped = true;
            break;
        }
    }
    return log;
}

}  // namespace vla::runtime
