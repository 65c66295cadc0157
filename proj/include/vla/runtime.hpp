#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vla/core.hpp"
#include "vla/policy.hpp"
#include "vla/simarm.hpp"

namespace vla::runtime {

/// Stage latencies charged to one inference, in milliseconds.
struct StageLatency {
    double pre_ms = 0.0;
    double forward_ms = 0.0;
    double post_ms = 0.0;
    double total_ms() const { return pre_ms + forward_ms + post_ms; }
    bool operator==(const StageLatency&) const = default;
};

struct RuntimeConfig {
    double control_hz = 20.0;
    double budget_ms = 50.0;
    std::uint32_t chunk = 50;
    double preprocess_hz = 30.0;
    std::uint32_t top_width = 64, top_height = 64;
    std::uint32_t wrist_width = 32, wrist_height = 32;
    std::array<double, kActionDim> scale{};
    std::array<double, kActionDim> offset{};
    std::array<double, kActionDim> a_min{};
    std::array<double, kActionDim> a_max{};
    double smoothing = 0.3;  // weight on the previous command
    JointLimits limits = JointLimits::so101();
    /// Latency charged to every inference in simulated time.
    StageLatency injected{5.0, 35.0, 5.0};
    /// Optional per-inference override, indexed by refill count.
    std::function<StageLatency(std::uint64_t)> latency_schedule;
    /// External emergency-stop channel polled every tick.
    std::function<bool(std::uint64_t)> estop;
    std::uint64_t max_ticks = 400;
    bool stop_on_success = true;

    /// Scale/offset/bounds derived from the joint limits (scale = half range,
    /// offset = mid range, gripper passed through).
    static RuntimeConfig from_limits(const JointLimits& limits);
    void validate() const;
};

/// Bilinear resize (pixel-centre aligned) and scaling to [0,1].
policy::Image preprocess(const sim::Rgb8Image& frame, std::uint32_t height, std::uint32_t width);

/// clip(a * scale + offset, a_min, a_max)
JointVector adapt_action(const NormalizedAction& a, const RuntimeConfig& cfg);

enum Intervention : std::uint8_t {
    kNone = 0,
    kRateLimited = 1,
    kClamped = 2,
    kEstop = 4,
};

struct FilterResult {
    JointVector command;
    std::uint8_t interventions = kNone;
};

/// Smoothing, per-joint rate limit over dt seconds, joint-limit clamp, then
/// e-stop (returns prev).
FilterResult safety_filter(const JointVector& prev, const JointVector& next, const RuntimeConfig& cfg, double dt,
                           bool estop = false);

class ChunkQueue {
public:
    explicit ChunkQueue(std::size_t capacity) : capacity_(capacity) {}

    /// Replaces the pending actions wholesale.
    void refill(const policy::ActionChunk& chunk);
    std::optional<NormalizedAction> pop();
    std::size_t depth() const { return pending_.size(); }
    bool empty() const { return pending_.empty(); }
    std::uint64_t generation() const { return generation_; }

private:
    std::size_t capacity_;
    std::deque<NormalizedAction> pending_;
    std::uint64_t generation_ = 0;
};

struct TickRecord {
    std::uint64_t tick = 0;
    double time_s = 0.0;
    std::uint64_t obs_digest = 0;
    JointVector command;
    std::size_t queue_depth = 0;
    std::uint64_t generation = 0;
    std::uint8_t interventions = kNone;
    StageLatency latency;
    bool deadline_miss = false;
    bool estop = false;
    bool degraded = false;
    double distance_to_button = 0.0;
    bool operator==(const TickRecord&) const = default;
};

struct EpisodeLog {
    std::vector<TickRecord> ticks;
    std::vector<std::uint64_t> refill_ticks;
    bool success = false;
    bool estopped = false;
    /// Wall-clock forward time of each refill (reported, never asserted).
    std::vector<double> measured_forward_ms;

    std::string to_csv() const;
};

/// Runs the policy against the simulator from `start`. The simulator tick
/// rate is forced to the control rate.
EpisodeLog control_loop(const policy::PolicyConfig& pcfg, const policy::PolicyParams& params,
                        const sim::SimConfig& sim_cfg, const sim::SimState& start, const RuntimeConfig& cfg,
                        const std::string& task = "press the button");

/// Digest of the image bytes and joint readings a policy would see.
std::uint64_t observation_digest(const sim::Rgb8Image& top, const sim::Rgb8Image& wrist, const JointVector& joints);

}  // namespace vla::runtime
