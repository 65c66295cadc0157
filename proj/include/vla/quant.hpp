#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vla/binary_io.hpp"
#include "vla/tensor.hpp"

namespace vla::quant {

inline constexpr std::size_t kNf4Levels = 16;
inline constexpr std::size_t kDefaultBlockSize = 64;
inline constexpr std::size_t kDefaultGroupSize = 256;

/// 16 NormalFloat levels in [-1, 1]: 8 negative, an exact zero, 7 positive.
struct Nf4LevelTable {
    std::array<double, kNf4Levels> levels{};

    double operator[](std::size_t i) const { return levels[i]; }
    std::uint8_t zero_index() const;
    double max_gap() const;
    double min_nonzero_magnitude() const;

    /// Index of the level closest to x (clipped to [-1,1]); ties go to the
    /// lower index.
    std::uint8_t nearest(double x) const;
};

/// Second-level quantization of the per-block scales: 8-bit codes scaled by
/// one float per group of `group_size` scales (zero offset, scales are >= 0).
struct DoubleQuantMeta {
    std::uint32_t group_size = static_cast<std::uint32_t>(kDefaultGroupSize);
    std::vector<std::uint8_t> scale_codes;
    std::vector<float> group_scales;

    double reconstruct(std::size_t block) const;
    bool operator==(const DoubleQuantMeta&) const = default;
};

/// Blockwise NF4 codes for a rows x cols matrix (row-major, two codes per
/// byte, low nibble first). The zero point is always 0 (symmetric absmax).
struct QuantizedTensor {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t block_size = static_cast<std::uint32_t>(kDefaultBlockSize);
    std::vector<std::uint8_t> packed_codes;
    std::vector<float> scales;              // used when !double_quant
    std::optional<DoubleQuantMeta> dq;      // engaged when double-quantized

    bool double_quantized() const { return dq.has_value(); }
    std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
    std::size_t block_count() const { return (size() + block_size - 1) / block_size; }

    std::uint8_t code(std::size_t i) const;
    void set_code(std::size_t i, std::uint8_t c);

    /// Scale used for dequantization of the given block.
    double scale(std::size_t block) const;

    static constexpr std::uint32_t kFlagDoubleQuant = 1u;

    void serialize(io::ByteWriter& w) const;
    static QuantizedTensor deserialize(io::ByteReader& r);

    bool operator==(const QuantizedTensor&) const = default;
};

Nf4LevelTable build_nf4_levels();

/// Standard normal quantile (inverse CDF).
double normal_quantile(double p);

QuantizedTensor quantize(const Mat& w, std::size_t block_size, const Nf4LevelTable& levels,
                         bool double_quant, std::size_t group_size = kDefaultGroupSize);

Mat dequantize(const QuantizedTensor& q, const Nf4LevelTable& levels);

/// Dequantizes one row into `out` (length cols) without materializing the
/// whole matrix.
void dequantize_row(const QuantizedTensor& q, const Nf4LevelTable& levels, std::size_t row,
                    std::span<double> out);

struct FootprintReport {
    double payload_bits = 4.0;        // per weight
    double scale_bits = 0.0;          // per weight, after optional double quant
    double total_bits = 0.0;          // per weight
    double reduction_vs_fp32 = 0.0;   // 32 / total_bits
    double payload_reduction = 0.0;   // 32 / payload_bits
    double fp32_scale_bits = 0.0;     // per weight, scales stored as fp32
    double scale_storage_saving = 0.0;  // fraction of fp32 scale storage removed by double quant
    double total_saving = 0.0;          // fraction of single-quant total removed by double quant
};

FootprintReport memory_footprint(std::size_t rows, std::size_t cols, std::size_t block_size,
                                 std::size_t group_size, bool double_quant);

}  // namespace vla::quant
