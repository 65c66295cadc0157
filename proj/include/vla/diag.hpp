#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vla/policy.hpp"
#include "vla/runtime.hpp"
#include "vla/train.hpp"

namespace vla::diag {

enum class InfluenceLabel : std::uint8_t { Weak, Moderate, Strong, VeryStrong };

const char* label_name(InfluenceLabel l);

/// <1 Weak, [1,3] Moderate, (3,6] Strong, >6 VeryStrong.
InfluenceLabel classify_influence(double delta);

struct VisionInfluenceReport {
    double delta = 0.0;    // mean per-step L2 difference, physical units
    double percent = 0.0;  // delta relative to the mean with-vision action norm
    InfluenceLabel label = InfluenceLabel::Weak;
    std::vector<double> step_diffs;
};

/// Same observation with every present image replaced by zeros of identical size.
policy::Observation mask_images(const policy::Observation& obs);

/// Compares the first action of each chunk predicted with and without images.
VisionInfluenceReport vision_influence(const policy::PolicyConfig& pcfg, const policy::PolicyParams& params,
                                       const std::vector<policy::Observation>& steps,
                                       const JointLimits& limits = JointLimits::so101());

/// Every `stride`-th frame of a recorded episode.
VisionInfluenceReport vision_influence(const policy::PolicyConfig& pcfg, const policy::PolicyParams& params,
                                       const train::EpisodeData& episode, std::uint32_t stride = 1,
                                       const JointLimits& limits = JointLimits::so101());

struct OscillationReport {
    std::size_t reversals = 0;
    bool oscillatory = false;
    std::vector<std::size_t> reversal_ticks;
};

struct OscillationConfig {
    std::size_t window = 5;
    std::size_t threshold = 6;
};

/// Sign changes of the derivative of the trailing moving average of the
/// end-effector-to-button distance.
OscillationReport detect_oscillation(const std::vector<double>& distances, bool success,
                                     const OscillationConfig& cfg = {});
OscillationReport detect_oscillation(const runtime::EpisodeLog& log, const OscillationConfig& cfg = {});

struct InfluenceRun {
    std::string config;
    std::vector<VisionInfluenceReport> episodes;
};

struct InfluenceSummary {
    std::string config;
    std::size_t episodes = 0;
    double delta_mean = 0.0;
    double delta_std = 0.0;  // sample standard deviation
    InfluenceLabel label = InfluenceLabel::Weak;
};

InfluenceSummary summarize(const InfluenceRun& run);

std::string summary_csv(const std::vector<InfluenceRun>& runs);
std::string detail_csv(const std::vector<InfluenceRun>& runs);

/// Writes `path` (summary) and `<stem>_episodes.csv` beside it (detail).
void emit_report(const std::vector<InfluenceRun>& runs, const std::filesystem::path& path);

}  // namespace vla::diag
