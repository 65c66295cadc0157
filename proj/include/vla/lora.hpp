#pragma once

#include <cstdint>
#include <span>
#include <variant>

#include "vla/quant.hpp"
#include "vla/tensor.hpp"

namespace vla::lora {

inline constexpr std::size_t kDefaultRank = 8;
inline constexpr double kDefaultAlpha = 16.0;

/// Low-rank update (alpha/r) * B * A for a d x k base matrix.
struct LoraAdapter {
    Mat A;  // r x k
    Mat B;  // d x r
    std::size_t rank = kDefaultRank;
    double alpha = kDefaultAlpha;
    bool trainable = true;

    double scaling() const { return alpha / static_cast<double>(rank); }
    std::size_t out_dim() const { return static_cast<std::size_t>(B.rows()); }
    std::size_t in_dim() const { return static_cast<std::size_t>(A.cols()); }
};

/// Quantized base weights together with the level table used to decode them.
struct QuantizedBase {
    quant::QuantizedTensor tensor;
    quant::Nf4LevelTable levels;
};

struct AdaptedLinear {
    std::variant<Mat, QuantizedBase> base;
    LoraAdapter adapter;

    std::size_t rows() const;
    std::size_t cols() const;
};

/// A ~ U(-1/sqrt(k), 1/sqrt(k)) from `seed`, B = 0.
LoraAdapter init_adapter(std::size_t d, std::size_t k, std::size_t r, double alpha,
                         std::uint64_t seed);

/// y = W x + (alpha/r) B (A x); a quantized W is decoded one row at a time.
Vec lora_forward(const AdaptedLinear& layer, const Vec& x);

/// Row-batched low-rank term for X (n x k): (alpha/r) (X A^T) B^T.
Mat lora_delta_rows(const LoraAdapter& adapter, const Mat& X);

/// W + (alpha/r) B A.
Mat merge_adapter(const AdaptedLinear& layer);

struct ParamCounts {
    std::uint64_t lora_per_layer = 0;
    std::uint64_t full_per_layer = 0;
    std::uint64_t lora_total = 0;
    std::uint64_t full_total = 0;
    double reduction = 0.0;  // full / lora
};

ParamCounts count_trainable(std::uint64_t d, std::uint64_t k, std::uint64_t r,
                            std::uint64_t n_projections, std::uint64_t n_layers);

}  // namespace vla::lora
