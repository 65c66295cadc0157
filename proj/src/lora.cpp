#include "vla/lora.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "vla/error.hpp"

namespace vla::lora {

std::size_t AdaptedLinear::rows() const {
    if (const auto* m = std::get_if<Mat>(&base)) return static_cast<std::size_t>(m->rows());
    return std::get<QuantizedBase>(base).tensor.rows;
}

std::size_t AdaptedLinear::cols() const {
    if (const auto* m = std::get_if<Mat>(&base)) return static_cast<std::size_t>(m->cols());
    return std::get<QuantizedBase>(base).tensor.cols;
}

LoraAdapter init_adapter(std::size_t d, std::size_t k, std::size_t r, double alpha,
                         std::uint64_t seed) {
    if (r < 1 || r > std::min(d, k)) {
        throw RangeError("init_adapter: rank " + std::to_string(r) + " outside [1, min(" +
                         std::to_string(d) + ", " + std::to_string(k) + ")]");
    }
    if (!(alpha > 0.0)) throw RangeError("init_adapter: alpha must be positive");
    LoraAdapter a;
    a.rank = r;
    a.alpha = alpha;
    a.A.resize(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
    a.B = Mat::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(r));
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(k));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < a.A.size(); ++i) a.A.data()[i] = u(rng);
    return a;
}

Vec lora_forward(const AdaptedLinear& layer, const Vec& x) {
    const std::size_t d = layer.rows();
    const std::size_t k = layer.cols();
    const auto& ad = layer.adapter;
    if (static_cast<std::size_t>(x.size()) != k) {
        throw ShapeError("lora_forward: input length " + std::to_string(x.size()) +
                         " != base cols " + std::to_string(k));
    }
    if (ad.in_dim() != k || ad.out_dim() != d || static_cast<std::size_t>(ad.A.rows()) != ad.rank ||
        static_cast<std::size_t>(ad.B.cols()) != ad.rank) {
        throw ShapeError("lora_forward: adapter shape does not match base");
    }
    Vec y(static_cast<Eigen::Index>(d));
    if (const auto* w = std::get_if<Mat>(&layer.base)) {
        y.noalias() = (*w) * x;
    } else {
        const auto& qb = std::get<QuantizedBase>(layer.base);
        std::vector<double> row(k);
        for (std::size_t i = 0; i < d; ++i) {
            quant::dequantize_row(qb.tensor, qb.levels, i, row);
            y[static_cast<Eigen::Index>(i)] =
                Eigen::Map<const Vec>(row.data(), static_cast<Eigen::Index>(k)).dot(x);
        }
    }
    const Vec ax = ad.A * x;
    y.noalias() += ad.scaling() * (ad.B * ax);
    return y;
}

Mat lora_delta_rows(const LoraAdapter& adapter, const Mat& X) {
    if (X.cols() != adapter.A.cols()) throw ShapeError("lora_delta_rows: input width mismatch");
    const Mat z = X * adapter.A.transpose();
    return adapter.scaling() * (z * adapter.B.transpose());
}

Mat merge_adapter(const AdaptedLinear& layer) {
    Mat w;
    if (const auto* m = std::get_if<Mat>(&layer.base)) {
        w = *m;
    } else {
        const auto& qb = std::get<QuantizedBase>(layer.base);
        w = quant::dequantize(qb.tensor, qb.levels);
    }
    const auto& ad = layer.adapter;
    if (ad.out_dim() != static_cast<std::size_t>(w.rows()) ||
        ad.in_dim() != static_cast<std::size_t>(w.cols())) {
        throw ShapeError("merge_adapter: adapter shape does not match base");
    }
    w.noalias() += ad.scaling() * (ad.B * ad.A);
    return w;
}

ParamCounts count_trainable(std::uint64_t d, std::uint64_t k, std::uint64_t r,
                            std::uint64_t n_projections, std::uint64_t n_layers) {
    if (d == 0 || k == 0 || r == 0 || n_projections == 0 || n_layers == 0) {
        throw RangeError("count_trainable: arguments must be positive");
    }
    ParamCounts c;
    c.lora_per_layer = n_projections * r * (d + k);
    c.full_per_layer = n_projections * d * k;
    c.lora_total = c.lora_per_layer * n_layers;
    c.full_total = c.full_per_layer * n_layers;
    c.reduction = static_cast<double>(c.full_per_layer) / static_cast<double>(c.lora_per_layer);
    return c;
}

}  // namespace vla::lora
