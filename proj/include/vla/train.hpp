#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vla/data.hpp"
#include "vla/kv_config.hpp"
#include "vla/policy.hpp"

namespace vla::train {

enum class ClipNorm : std::uint8_t { L2, Inf };

struct TrainConfig {
    std::uint32_t batch = 1;
    std::uint32_t accum = 8;
    std::uint64_t steps = 5000;
    double lr_max = 5e-5;
    double lr_min = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    double clip = 1.0;
    ClipNorm clip_norm = ClipNorm::L2;
    std::uint64_t checkpoint_interval = 1000;
    double val_fraction = 0.1;
    std::uint32_t val_stride = 1;  // evaluate every n-th validation frame
    std::uint64_t seed = 0;
    bool freeze_vision = true;
    bool quantize_base = false;
    std::uint32_t quant_block = 64;
    bool double_quant = true;

    std::uint32_t effective_batch() const { return batch * accum; }
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Settings used by the command line and the closed-loop checks: the small
/// model needs a larger step size and more updates than the defaults.
TrainConfig desk_defaults();

/// Policy shape paired with desk_defaults(): wider adapters and no visual
/// token dropout.
policy::PolicyConfig desk_policy();

/// Keys are prefixed "train." / "policy."; unknown keys under either prefix
/// raise ConfigError.
void apply_config(const KeyValues& kv, TrainConfig& cfg);
void apply_config(const KeyValues& kv, policy::PolicyConfig& cfg);
KeyValues to_key_values(const TrainConfig& cfg);
KeyValues to_key_values(const policy::PolicyConfig& cfg);

/// (1/T) sum_t ||pred_t - target_t||^2
double action_loss(const policy::ActionChunk& pred, const policy::ActionChunk& target);

double lr_at(double t, const TrainConfig& cfg);

/// Scales the gradients in place when their norm exceeds `threshold`;
/// returns the norm before clipping.
double clip_gradients(const std::vector<policy::TensorRef>& grads, double threshold, ClipNorm norm = ClipNorm::L2);

struct AdamState {
    std::map<std::string, Mat> m, v;
    std::uint64_t step = 0;
    bool operator==(const AdamState&) const = default;
};

/// One decoupled-weight-decay update of a single tensor.
void adamw_update(Mat& param, const Mat& grad, Mat& m, Mat& v, std::uint64_t t, double lr, const TrainConfig& cfg,
                  bool decay);

/// Updates every trainable tensor of `params` at step t (t >= 1) using lr_at(t).
void adamw_step(policy::PolicyParams& params, const policy::PolicyParams& grads, AdamState& state, std::uint64_t t,
                const TrainConfig& cfg, const policy::PolicyConfig& pcfg);

struct LossRecord {
    std::uint64_t step = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double lr = 0.0;
    bool operator==(const LossRecord&) const = default;
};

struct Checkpoint {
    policy::PolicyConfig policy;
    TrainConfig train;
    policy::PolicyParams params;
    AdamState optimizer;
    std::uint64_t step = 0;
    std::vector<LossRecord> history;
};

/// Episode plus the instruction it was recorded under.
struct EpisodeData {
    data::Episode episode;
    std::string task;
};

using Dataset = std::vector<EpisodeData>;

Dataset load_dataset(const std::filesystem::path& dir);

struct Split {
    std::vector<std::size_t> train, val;
};

/// Last val_fraction of episodes (at least one) held out; the rest train.
Split split_episodes(std::size_t episodes, double val_fraction);

policy::Observation make_observation(const EpisodeData& ep, std::size_t frame);

/// Normalized actions frame..frame+chunk-1, repeating the final action past
/// the episode end.
policy::ActionChunk make_target(const data::Episode& ep, std::size_t frame, std::size_t chunk,
                                const JointLimits& limits);

/// Mean action_loss over every `stride`-th frame of the listed episodes.
double evaluate(const Dataset& ds, const std::vector<std::size_t>& episodes, const policy::PolicyConfig& pcfg,
                const policy::PolicyParams& params, const JointLimits& limits = JointLimits::so101(),
                std::uint32_t stride = 1);

struct TrainHooks {
    std::optional<std::filesystem::path> checkpoint_dir;
    std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
    Checkpoint best;  // lowest validation loss
    Checkpoint last;
    std::vector<LossRecord> history;
};

TrainResult train_loop(const Dataset& ds, policy::PolicyConfig pcfg, const TrainConfig& cfg,
                       const TrainHooks& hooks = {}, const JointLimits& limits = JointLimits::so101());

std::string loss_csv(const std::vector<LossRecord>& history);

}  // namespace vla::train
