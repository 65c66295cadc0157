#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vla/core.hpp"
#include "vla/simarm.hpp"

namespace vla::data {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr const char* kDefaultTask = "press the button";

struct EpisodeMeta {
    std::uint32_t id = 0;
    std::string task = kDefaultTask;
    std::uint32_t frames = 0;
    bool success = false;
    double start_time = 0.0;
    double end_time = 0.0;

    bool operator==(const EpisodeMeta&) const = default;
};

struct DatasetManifest {
    std::uint32_t version = kFormatVersion;
    double fps = 30.0;
    std::uint32_t top_width = 64, top_height = 64;
    std::uint32_t wrist_width = 32, wrist_height = 32;
    std::vector<EpisodeMeta> episodes;

    std::string to_text() const;
    static DatasetManifest parse(const std::string& text, const std::string& context);
    bool operator==(const DatasetManifest&) const = default;
};

struct Episode {
    std::vector<double> timestamps;
    std::vector<JointVector> states;
    std::vector<JointVector> actions;
    std::vector<sim::Rgb8Image> top;
    std::vector<sim::Rgb8Image> wrist;

    std::size_t size() const { return timestamps.size(); }
    bool operator==(const Episode&) const = default;
};

std::filesystem::path manifest_path(const std::filesystem::path& dir);
std::filesystem::path joints_path(const std::filesystem::path& dir, std::uint32_t id);
std::filesystem::path frames_path(const std::filesystem::path& dir, std::uint32_t id, sim::View view);

DatasetManifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::filesystem::path& dir, const DatasetManifest& m);

/// Writes the episode payload files and records `meta` in the manifest
/// (appending or replacing entry meta.id), then rewrites manifest.txt.
void write_episode(const std::filesystem::path& dir, const Episode& ep, EpisodeMeta meta, DatasetManifest& manifest);
Episode read_episode(const std::filesystem::path& dir, std::uint32_t id);
Episode read_episode(const std::filesystem::path& dir, const DatasetManifest& m, std::uint32_t id);

struct Violation {
    std::optional<std::uint32_t> episode;
    std::optional<std::size_t> frame;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

ValidationReport validate_dataset(const std::filesystem::path& dir,
                                  const JointLimits& limits = JointLimits::so101());

struct GenerateOptions {
    std::uint32_t episodes = 20;
    std::uint64_t seed = 0;
    double fps = 30.0;
    std::string task = kDefaultTask;
    std::uint32_t max_resamples = 100;
};

/// Scripted-expert demonstrations rendered through the simulator.
DatasetManifest generate_demos(const std::filesystem::path& dir, const GenerateOptions& opts,
                               sim::SimConfig sim_cfg = {});

/// In-memory variant of one episode rollout (used by the generator and tests).
std::optional<std::pair<Episode, EpisodeMeta>> generate_episode(const sim::SimConfig& sim_cfg, double fps,
                                                                std::uint64_t seed, const std::string& task);

struct JointStats {
    std::array<double, kActionDim> mean{}, stddev{}, min{}, max{};
};

struct DatasetStats {
    JointStats states, actions;
    std::size_t frames = 0;
    std::size_t episodes = 0;
    double histogram_bin = 30.0;             // frames per bin
    std::vector<std::size_t> length_histogram;  // bin i: [i*bin, (i+1)*bin)
};

DatasetStats dataset_stats(const std::filesystem::path& dir);
DatasetStats compute_stats(const std::vector<Episode>& episodes);

/// Derived per-episode seed (splitmix64 of base seed and index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace vla::data
