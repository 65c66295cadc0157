#include "vla/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vla/error.hpp"

namespace vla::quant {

namespace {

// Peter Acklam's rational approximation, refined with two Newton steps on
// erfc. Accurate to ~1e-15 over (0,1).
double acklam(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double plow = 0.02425;
    if (p < plow) {
        const double q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p > 1 - plow) {
        const double q = std::sqrt(-2 * std::log(1 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

}  // namespace

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw RangeError("normal_quantile: p outside (0,1)");
    double x = acklam(p);
    for (int it = 0; it < 2; ++it) {
        const double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        x -= (cdf - p) / pdf;
    }
    return x;
}

Nf4LevelTable build_nf4_levels() {
    // Quantile grid shared by both sides so the extremes coincide at +-1
    // after renormalization.
    const double offset = 0.5 * ((1.0 - 1.0 / 30.0) + (1.0 - 1.0 / 32.0));
    Nf4LevelTable t;
    // negative side: 8 quantiles from linspace(offset, 0.5, 9) minus its last point
    for (int i = 0; i < 8; ++i) {
        const double p = offset + (0.5 - offset) * i / 8.0;
        t.levels[i] = -normal_quantile(p);
    }
    t.levels[8] = 0.0;
    // positive side: 7 quantiles from linspace(offset, 0.5, 8) minus its last point
    for (int i = 0; i < 7; ++i) {
        const double p = offset + (0.5 - offset) * i / 7.0;
        t.levels[15 - i] = normal_quantile(p);
    }
    const double top = t.levels[15];
    for (auto& v : t.levels) v /= top;
    t.levels[0] = -1.0;
    t.levels[15] = 1.0;
    return t;
}

std::uint8_t Nf4LevelTable::zero_index() const {
    for (std::size_t i = 0; i < kNf4Levels; ++i) {
        if (levels[i] == 0.0) return static_cast<std::uint8_t>(i);
    }
    throw FormatError("NF4 table has no zero level");
}

double Nf4LevelTable::max_gap() const {
    double g = 0.0;
    for (std::size_t i = 1; i < kNf4Levels; ++i) g = std::max(g, levels[i] - levels[i - 1]);
    return g;
}

double Nf4LevelTable::min_nonzero_magnitude() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : levels) {
        if (v != 0.0) m = std::min(m, std::abs(v));
    }
    return m;
}

std::uint8_t Nf4LevelTable::nearest(double x) const {
    // Levels are sorted; x belongs to level i when it lies at or below the
    // midpoint to level i+1 (ties resolve to the lower index).
    std::size_t i = 0;
    while (i + 1 < kNf4Levels && x > 0.5 * (levels[i] + levels[i + 1])) ++i;
    return static_cast<std::uint8_t>(i);
}

double DoubleQuantMeta::reconstruct(std::size_t block) const {
    return static_cast<double>(group_scales[block / group_size]) / 255.0 * scale_codes[block];
}

std::uint8_t QuantizedTensor::code(std::size_t i) const {
    const std::uint8_t b = packed_codes[i / 2];
    return (i % 2 == 0) ? (b & 0x0F) : (b >> 4);
}

void QuantizedTensor::set_code(std::size_t i, std::uint8_t c) {
    std::uint8_t& b = packed_codes[i / 2];
    if (i % 2 == 0) {
        b = static_cast<std::uint8_t>((b & 0xF0) | (c & 0x0F));
    } else {
        b = static_cast<std::uint8_t>((b & 0x0F) | ((c & 0x0F) << 4));
    }
}

double QuantizedTensor::scale(std::size_t block) const {
    return dq ? dq->reconstruct(block) : static_cast<double>(scales[block]);
}

QuantizedTensor quantize(const Mat& w, std::size_t block_size, const Nf4LevelTable& levels,
                         bool double_quant, std::size_t group_size) {
    if (block_size == 0) throw RangeError("quantize: block_size must be >= 1");
    if (double_quant && group_size == 0) throw RangeError("quantize: group_size must be >= 1");
    QuantizedTensor q;
    q.rows = static_cast<std::uint32_t>(w.rows());
    q.cols = static_cast<std::uint32_t>(w.cols());
    q.block_size = static_cast<std::uint32_t>(block_size);
    const std::size_t n = q.size();
    q.packed_codes.assign((n + 1) / 2, 0);
    const double* data = w.data();

    const std::size_t nblocks = q.block_count();
    std::vector<double> absmax(nblocks, 0.0);
    for (std::size_t b = 0; b < nblocks; ++b) {
        const std::size_t lo = b * block_size;
        const std::size_t hi = std::min(n, lo + block_size);
        double m = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            if (!std::isfinite(data[i])) {
                throw NumericError("quantize: non-finite weight at flat index " + std::to_string(i));
            }
            m = std::max(m, std::abs(data[i]));
        }
        absmax[b] = m;
        const std::uint8_t zero = levels.zero_index();
        for (std::size_t i = lo; i < hi; ++i) {
            q.set_code(i, m == 0.0 ? zero : levels.nearest(data[i] / m));
        }
    }

    if (!double_quant) {
        q.scales.resize(nblocks);
        for (std::size_t b = 0; b < nblocks; ++b) q.scales[b] = static_cast<float>(absmax[b]);
        return q;
    }

    DoubleQuantMeta meta;
    meta.group_size = static_cast<std::uint32_t>(group_size);
    const std::size_t ngroups = (nblocks + group_size - 1) / group_size;
    meta.group_scales.resize(ngroups);
    meta.scale_codes.resize(nblocks);
    for (std::size_t g = 0; g < ngroups; ++g) {
        const std::size_t lo = g * group_size;
        const std::size_t hi = std::min(nblocks, lo + group_size);
        double gmax = 0.0;
        for (std::size_t b = lo; b < hi; ++b) gmax = std::max(gmax, absmax[b]);
        const float gscale = static_cast<float>(gmax);
        meta.group_scales[g] = gscale;
        for (std::size_t b = lo; b < hi; ++b) {
            const double c = gscale > 0.0f ? std::round(absmax[b] / gscale * 255.0) : 0.0;
            meta.scale_codes[b] = static_cast<std::uint8_t>(std::clamp(c, 0.0, 255.0));
        }
    }
    q.dq = std::move(meta);
    return q;
}

void dequantize_row(const QuantizedTensor& q, const Nf4LevelTable& levels, std::size_t row,
                    std::span<double> out) {
    if (out.size() != q.cols) throw ShapeError("dequantize_row: output length != cols");
    const std::size_t base = row * q.cols;
    for (std::size_t c = 0; c < q.cols; ++c) {
        const std::size_t i = base + c;
        const std::uint8_t code = q.code(i);
        if (code >= kNf4Levels) throw FormatError("dequantize: corrupt code");
        out[c] = levels[code] * q.scale(i / q.block_size);
    }
}

Mat dequantize(const QuantizedTensor& q, const Nf4LevelTable& levels) {
    if (q.packed_codes.size() != (q.size() + 1) / 2) {
        throw FormatError("dequantize: code buffer size does not match shape");
    }
    const std::size_t nb = q.block_count();
    if (q.dq ? (q.dq->scale_codes.size() != nb) : (q.scales.size() != nb)) {
        throw FormatError("dequantize: scale count does not match block count");
    }
    Mat w(q.rows, q.cols);
    double* data = w.data();
    for (std::size_t b = 0; b < nb; ++b) {
        const double s = q.scale(b);
        const std::size_t lo = b * q.block_size;
        const std::size_t hi = std::min(q.size(), lo + q.block_size);
        for (std::size_t i = lo; i < hi; ++i) data[i] = levels[q.code(i)] * s;
    }
    return w;
}

void QuantizedTensor::serialize(io::ByteWriter& w) const {
    w.u32(rows);
    w.u32(cols);
    w.u32(block_size);
    w.u32(dq ? kFlagDoubleQuant : 0u);
    w.bytes(packed_codes);
    if (dq) {
        w.u32(dq->group_size);
        w.bytes(dq->scale_codes);
        for (float g : dq->group_scales) w.f32(g);
    } else {
        for (float s : scales) w.f32(s);
    }
}

QuantizedTensor QuantizedTensor::deserialize(io::ByteReader& r) {
    QuantizedTensor q;
    q.rows = r.u32();
    q.cols = r.u32();
    q.block_size = r.u32();
    const std::uint32_t flags = r.u32();
    if (q.block_size == 0) throw FormatError("quantized tensor: zero block size");
    if (flags & ~kFlagDoubleQuant) throw FormatError("quantized tensor: unknown flags");
    auto codes = r.bytes((q.size() + 1) / 2);
    q.packed_codes.assign(codes.begin(), codes.end());
    const std::size_t nb = q.block_count();
    if (flags & kFlagDoubleQuant) {
        DoubleQuantMeta meta;
        meta.group_size = r.u32();
        if (meta.group_size == 0) throw FormatError("quantized tensor: zero group size");
        auto sc = r.bytes(nb);
        meta.scale_codes.assign(sc.begin(), sc.end());
        const std::size_t ng = (nb + meta.group_size - 1) / meta.group_size;
        meta.group_scales.resize(ng);
        for (auto& g : meta.group_scales) g = r.f32();
        q.dq = std::move(meta);
    } else {
        q.scales.resize(nb);
        for (auto& s : q.scales) s = r.f32();
    }
    return q;
}

FootprintReport memory_footprint(std::size_t rows, std::size_t cols, std::size_t block_size,
                                 std::size_t group_size, bool double_quant) {
    if (rows == 0 || cols == 0 || block_size == 0 || group_size == 0) {
        throw RangeError("memory_footprint: dimensions must be positive");
    }
    const double n = static_cast<double>(rows) * static_cast<double>(cols);
    const std::size_t nb = (rows * cols + block_size - 1) / block_size;
    const std::size_t ng = (nb + group_size - 1) / group_size;

    FootprintReport r;
    r.payload_bits = 4.0;
    r.fp32_scale_bits = 32.0 * static_cast<double>(nb) / n;
    r.scale_bits = double_quant ? (8.0 * static_cast<double>(nb) + 32.0 * static_cast<double>(ng)) / n
                                : r.fp32_scale_bits;
    r.total_bits = r.payload_bits + r.scale_bits;
    r.reduction_vs_fp32 = 32.0 / r.total_bits;
    r.payload_reduction = 32.0 / r.payload_bits;
    r.scale_storage_saving = 1.0 - r.scale_bits / r.fp32_scale_bits;
    r.total_saving = 1.0 - r.total_bits / (r.payload_bits + r.fp32_scale_bits);
    return r;
}

}  // namespace vla::quant
