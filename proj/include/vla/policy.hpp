#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vla/core.hpp"
#include "vla/lora.hpp"
#include "vla/quant.hpp"
#include "vla/tensor.hpp"

namespace vla::policy {

/// Which attention projections carry a LoRA adapter.
struct LoraTargets {
    bool q = true, k = true, v = true, o = true;
    bool operator==(const LoraTargets&) const = default;
};

struct PolicyConfig {
    std::uint32_t top_height = 64, top_width = 64;
    std::uint32_t wrist_height = 32, wrist_width = 32;
    std::uint32_t patch = 8;
    std::uint32_t d_model = 64;
    std::uint32_t n_layers = 2;
    std::uint32_t n_heads = 4;
    std::uint32_t d_ff = 128;
    std::uint32_t vocab = 512;
    std::uint32_t n_lang = 8;
    std::uint32_t chunk = 50;
    std::uint32_t lora_rank = 8;
    double lora_alpha = 16.0;
    double p_drop = 0.1;
    bool freeze_vision = true;
    LoraTargets lora_targets;

    void validate() const;
    std::size_t patch_dim() const { return std::size_t(patch) * patch * 3; }
    std::size_t top_tokens() const { return std::size_t(top_height / patch) * (top_width / patch); }
    std::size_t wrist_tokens() const { return std::size_t(wrist_height / patch) * (wrist_width / patch); }
    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t action_outputs() const { return std::size_t(chunk) * kActionDim; }

    bool operator==(const PolicyConfig&) const = default;
};

/// Float RGB image, row-major (row, col, channel), values in [0,1].
struct Image {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<double> data;

    Image() = default;
    Image(std::uint32_t h, std::uint32_t w, double fill = 0.0)
        : height(h), width(w), data(std::size_t(h) * w * 3, fill) {}
    bool operator==(const Image&) const = default;
};

/// RGB8 pixels (row-major, 3 channels) scaled to [0,1].
Image image_from_rgb8(std::uint32_t height, std::uint32_t width, std::span<const std::uint8_t> pixels);

/// A missing view (std::nullopt) runs the policy in degraded single-view mode.
struct Observation {
    std::optional<Image> top;
    std::optional<Image> wrist;
    JointVector joints;
    std::string task;

    bool degraded() const { return !top || !wrist; }
};

using ActionChunk = std::vector<NormalizedAction>;

enum class ParamGroup : std::uint8_t { Vision, Language, Proprio, TrunkBase, TrunkLora, Head };
const char* group_name(ParamGroup g);

struct Linear {
    Mat weight;  // out x in
    Mat bias;    // 1 x out
    std::optional<lora::LoraAdapter> lora;
    /// Set when the base weight is stored as NF4; `weight` then holds its
    /// dequantized values.
    std::optional<quant::QuantizedTensor> quantized;
};

struct Norm {
    Mat gain;  // 1 x d
    Mat bias;  // 1 x d
};

struct Block {
    Norm ln1, ln2;
    Linear q, k, v, o;
    Linear fc1, fc2;
};

struct ViewEncoder {
    Linear proj;  // d_model x patch_dim
    Mat pos;      // tokens x d_model
};

struct PolicyParams {
    ViewEncoder top, wrist;
    Mat lang_embed;  // vocab x d_model
    Mat lang_pos;    // n_lang x d_model
    Linear proprio;  // d_model x 6
    std::vector<Block> blocks;
    Norm head_norm;
    Linear head;  // (chunk*6) x d_model
};

struct TensorRef {
    std::string name;
    Mat* value;
    ParamGroup group;
    bool decay;  // false for biases and norm parameters
};

struct ConstTensorRef {
    std::string name;
    const Mat* value;
    ParamGroup group;
    bool decay;
};

/// Every tensor in a fixed, documented order. LoRA matrices appear as
/// `<projection>.lora_A` / `.lora_B`.
std::vector<TensorRef> list_tensors(PolicyParams& p);
std::vector<ConstTensorRef> list_tensors(const PolicyParams& p);

PolicyParams init_params(const PolicyConfig& cfg, std::uint64_t seed);

/// Same structure and shapes, all zeros (used for gradients and moments).
PolicyParams zeros_like(const PolicyParams& p);

bool group_trainable(const PolicyConfig& cfg, ParamGroup g);

struct TrainableSet {
    std::vector<std::string> names;
    std::map<ParamGroup, std::size_t> counts;
    std::size_t total = 0;
};

TrainableSet trainable_parameters(const PolicyConfig& cfg, const PolicyParams& params);

/// Whitespace tokens hashed into [1, vocab); 0 pads to n_lang.
std::vector<std::uint32_t> encode_task(const std::string& text, const PolicyConfig& cfg);

struct ForwardOptions {
    bool train_mode = false;      // enables visual-token dropout
    std::uint64_t dropout_seed = 0;
};

/// Visual tokens for the views present, top first. Rows: tokens, cols: d_model.
Mat encode_views(const Observation& obs, const PolicyConfig& cfg, const PolicyParams& params,
                 const ForwardOptions& opts = {});

ActionChunk forward(const Observation& obs, const PolicyConfig& cfg, const PolicyParams& params,
                    const ForwardOptions& opts = {});

/// Chunk MSE loss against `target` (length chunk) and its gradient
/// accumulated into `grads` (scaled by `grad_scale`) for trainable groups only.
double loss_and_grad(const Observation& obs, const ActionChunk& target, const PolicyConfig& cfg,
                     const PolicyParams& params, PolicyParams& grads, double grad_scale = 1.0,
                     const ForwardOptions& opts = {});

/// Quantizes every trunk base projection to NF4 in place (weights are
/// replaced by their dequantized values).
void quantize_trunk(PolicyParams& params, std::size_t block_size, bool double_quant,
                    std::size_t group_size);

/// Image input check used by forward; throws ShapeError on mismatch.
void check_observation(const Observation& obs, const PolicyConfig& cfg);

}  // namespace vla::policy
