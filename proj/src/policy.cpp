#include "vla/policy.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "vla/binary_io.hpp"
#include "vla/error.hpp"

namespace vla::policy {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

// ---------------------------------------------------------------------------
// building blocks

Mat linear_fwd(const Linear& l, const Mat& x, Mat* lora_z) {
    Mat y = x * l.weight.transpose();
    y.rowwise() += l.bias.row(0);
    if (l.lora) {
        Mat z = x * l.lora->A.transpose();
        y.noalias() += l.lora->scaling() * (z * l.lora->B.transpose());
        if (lora_z) *lora_z = std::move(z);
    }
    return y;
}

/// Accumulates parameter gradients for a linear layer and optionally the
/// input gradient.
void linear_bwd(const Linear& l, const Mat& x, const Mat& lora_z, const Mat& dy, Linear* g,
                bool base_grad, bool lora_grad, Mat* dx) {
    if (base_grad && g) {
        g->weight.noalias() += dy.transpose() * x;
        g->bias.noalias() += dy.colwise().sum();
    }
    Mat dz;
    if (l.lora && (lora_grad || dx)) {
        const double s = l.lora->scaling();
        dz = s * (dy * l.lora->B);
        if (lora_grad && g) {
            g->lora->B.noalias() += s * (dy.transpose() * lora_z);
            g->lora->A.noalias() += dz.transpose() * x;
        }
    }
    if (dx) {
        dx->noalias() = dy * l.weight;
        if (l.lora) dx->noalias() += dz * l.lora->A;
    }
}

struct NormCache {
    Mat xhat;
    Vec rstd;
};

Mat norm_fwd(const Norm& n, const Mat& x, NormCache& c) {
    const Eigen::Index rows = x.rows();
    const double d = static_cast<double>(x.cols());
    c.xhat.resize(rows, x.cols());
    c.rstd.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = x.row(r).sum() / d;
        const double var = (x.row(r).array() - mu).square().sum() / d;
        c.rstd[r] = 1.0 / std::sqrt(var + kLnEps);
        c.xhat.row(r) = (x.row(r).array() - mu) * c.rstd[r];
    }
    Mat y = c.xhat.array().rowwise() * n.gain.row(0).array();
    y.rowwise() += n.bias.row(0);
    return y;
}

Mat norm_bwd(const Norm& n, const NormCache& c, const Mat& dy, Norm* g) {
    if (g) {
        g->gain.noalias() += (dy.array() * c.xhat.array()).matrix().colwise().sum();
        g->bias.noalias() += dy.colwise().sum();
    }
    const double d = static_cast<double>(dy.cols());
    Mat dxhat = dy.array().rowwise() * n.gain.row(0).array();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double m1 = dxhat.row(r).sum() / d;
        const double m2 = dxhat.row(r).dot(c.xhat.row(r)) / d;
        dx.row(r) = c.rstd[r] * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
    }
    return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
    const double u = kGeluC * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------------------
// transformer block with an optional query-row window: only the last
// `m` rows are propagated, keys/values use every row.

struct BlockCache {
    Mat x;            // n x d input
    NormCache ln1;
    Mat u;            // n x d
    Mat q, k, v;      // m x d, n x d, n x d
    Mat qz, kz, vz;   // LoRA intermediates
    std::vector<Mat> probs;  // per head m x n
    Mat ctx;          // m x d
    Mat oz;
    Mat x1;           // m x d
    NormCache ln2;
    Mat u2;
    Mat hpre, hact;
    Mat f1z, f2z;
};

Mat block_fwd(const Block& b, const Mat& x, Eigen::Index m, std::size_t n_heads, BlockCache* c) {
    BlockCache local;
    BlockCache& k = c ? *c : local;
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    const Eigen::Index dh = d / static_cast<Eigen::Index>(n_heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    k.x = x;
    k.u = norm_fwd(b.ln1, x, k.ln1);
    const Mat uq = k.u.bottomRows(m);
    k.q = linear_fwd(b.q, uq, &k.qz);
    k.k = linear_fwd(b.k, k.u, &k.kz);
    k.v = linear_fwd(b.v, k.u, &k.vz);

    k.ctx.resize(m, d);
    k.probs.resize(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
        Mat s = (k.q.middleCols(c0, dh) * k.k.middleCols(c0, dh).transpose()) * inv_sqrt;
        for (Eigen::Index r = 0; r < m; ++r) {
            const double mx = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - mx).exp();
            s.row(r) /= s.row(r).sum();
        }
        k.ctx.middleCols(c0, dh).noalias() = s * k.v.middleCols(c0, dh);
        k.probs[h] = std::move(s);
    }
    (void)n;
    k.x1 = x.bottomRows(m) + linear_fwd(b.o, k.ctx, &k.oz);
    k.u2 = norm_fwd(b.ln2, k.x1, k.ln2);
    k.hpre = linear_fwd(b.fc1, k.u2, &k.f1z);
    k.hact = k.hpre.unaryExpr([](double v) { return gelu(v); });
    return k.x1 + linear_fwd(b.fc2, k.hact, &k.f2z);
}

struct GradFlags {
    bool base = false;
    bool lora = false;
};

/// Returns dL/dx (n x d) when `need_dx`, otherwise an empty matrix.
Mat block_bwd(const Block& b, const BlockCache& k, const Mat& dy, std::size_t n_heads,
              Block* g, GradFlags flags, bool need_dx) {
    const Eigen::Index m = dy.rows();
    const Eigen::Index n = k.x.rows();
    const Eigen::Index d = k.x.cols();
    const Eigen::Index dh = d / static_cast<Eigen::Index>(n_heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat dx1 = dy;
    Mat dhact;
    linear_bwd(b.fc2, k.hact, k.f2z, dy, g ? &g->fc2 : nullptr, flags.base, flags.lora, &dhact);
    Mat dhpre = dhact.array() * k.hpre.unaryExpr([](double v) { return gelu_grad(v); }).array();
    Mat du2;
    linear_bwd(b.fc1, k.u2, k.f1z, dhpre, g ? &g->fc1 : nullptr, flags.base, flags.lora, &du2);
    dx1 += norm_bwd(b.ln2, k.ln2, du2, flags.base && g ? &g->ln2 : nullptr);

    Mat dctx;
    linear_bwd(b.o, k.ctx, k.oz, dx1, g ? &g->o : nullptr, flags.base, flags.lora, &dctx);

    Mat dq(m, d), dk(n, d), dv(n, d);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
        const Mat& p = k.probs[h];
        const auto dout = dctx.middleCols(c0, dh);
        Mat dp = dout * k.v.middleCols(c0, dh).transpose();
        dv.middleCols(c0, dh).noalias() = p.transpose() * dout;
        Mat ds(m, n);
        for (Eigen::Index r = 0; r < m; ++r) {
            const double dot = dp.row(r).dot(p.row(r));
            ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
        }
        ds *= inv_sqrt;
        dq.middleCols(c0, dh).noalias() = ds * k.k.middleCols(c0, dh);
        dk.middleCols(c0, dh).noalias() = ds.transpose() * k.q.middleCols(c0, dh);
    }

    const Mat uq = k.u.bottomRows(m);
    Mat duq, duk, duv;
    linear_bwd(b.q, uq, k.qz, dq, g ? &g->q : nullptr, flags.base, flags.lora, need_dx ? &duq : nullptr);
    linear_bwd(b.k, k.u, k.kz, dk, g ? &g->k : nullptr, flags.base, flags.lora, need_dx ? &duk : nullptr);
    linear_bwd(b.v, k.u, k.vz, dv, g ? &g->v : nullptr, flags.base, flags.lora, need_dx ? &duv : nullptr);
    if (!need_dx) return Mat();

    Mat du = duk + duv;
    du.bottomRows(m) += duq;
    Mat dx = norm_bwd(b.ln1, k.ln1, du, flags.base && g ? &g->ln1 : nullptr);
    dx.bottomRows(m) += dx1;
    return dx;
}

// ---------------------------------------------------------------------------
// embeddings

Mat extract_patches(const Image& img, std::uint32_t patch) {
    const std::uint32_t ph = img.height / patch;
    const std::uint32_t pw = img.width / patch;
    Mat out(static_cast<Eigen::Index>(ph) * pw, static_cast<Eigen::Index>(patch) * patch * 3);
    for (std::uint32_t py = 0; py < ph; ++py) {
        for (std::uint32_t px = 0; px < pw; ++px) {
            const Eigen::Index row = static_cast<Eigen::Index>(py) * pw + px;
            Eigen::Index col = 0;
            for (std::uint32_t y = 0; y < patch; ++y) {
                const std::size_t base = ((std::size_t(py) * patch + y) * img.width + std::size_t(px) * patch) * 3;
                for (std::uint32_t x = 0; x < patch * 3; ++x) out(row, col++) = img.data[base + x];
            }
        }
    }
    return out;
}

struct ViewCache {
    bool present = false;
    Mat patches;
    std::vector<double> keep;  // per-token multiplier (0 or 1/(1-p))
    Eigen::Index offset = 0;
    Eigen::Index count = 0;
};

struct Tape {
    ViewCache top, wrist;
    Eigen::Index n_lang = 0;
    Eigen::Index lang_offset = 0;
    std::vector<std::uint32_t> lang_ids;
    Vec proprio_in;
    std::vector<BlockCache> blocks;
    NormCache head_norm;
    Mat head_in;   // 1 x d normalized
    Mat logits;    // 1 x chunk*6
    ActionChunk actions;
};

Vec proprio_input(const JointVector& j) {
    const auto lim = JointLimits::so101();
    const NormalizedAction a = normalize_action(clamp_joints(j, lim), lim);
    Vec v(static_cast<Eigen::Index>(kActionDim));
    for (std::size_t i = 0; i < kActionDim; ++i) v[static_cast<Eigen::Index>(i)] = a[i];
    return v;
}

void embed_view(const Image& img, const ViewEncoder& enc, const PolicyConfig& cfg, bool train,
                std::mt19937_64& rng, ViewCache& vc, Mat& out, Eigen::Index offset) {
    vc.present = true;
    vc.patches = extract_patches(img, cfg.patch);
    vc.count = vc.patches.rows();
    vc.offset = offset;
    vc.keep.assign(static_cast<std::size_t>(vc.count), 1.0);
    Mat tok = linear_fwd(enc.proj, vc.patches, nullptr) + enc.pos;
    if (train && cfg.p_drop > 0.0) {
        std::bernoulli_distribution drop(cfg.p_drop);
        const double scale = 1.0 / (1.0 - cfg.p_drop);
        for (Eigen::Index t = 0; t < vc.count; ++t) {
            vc.keep[static_cast<std::size_t>(t)] = drop(rng) ? 0.0 : scale;
            tok.row(t) *= vc.keep[static_cast<std::size_t>(t)];
        }
    }
    out.middleRows(offset, vc.count) = tok;
}

Mat build_sequence(const Observation& obs, const PolicyConfig& cfg, const PolicyParams& p,
                   const ForwardOptions& opts, Tape& tape) {
    check_observation(obs, cfg);
    const Eigen::Index d = cfg.d_model;
    const Eigen::Index n_top = obs.top ? static_cast<Eigen::Index>(cfg.top_tokens()) : 0;
    const Eigen::Index n_wrist = obs.wrist ? static_cast<Eigen::Index>(cfg.wrist_tokens()) : 0;
    const Eigen::Index n_lang = cfg.n_lang;
    Mat x(n_top + n_wrist + n_lang + 1, d);

    std::mt19937_64 rng(opts.dropout_seed);
    if (obs.top) embed_view(*obs.top, p.top, cfg, opts.train_mode, rng, tape.top, x, 0);
    if (obs.wrist) embed_view(*obs.wrist, p.wrist, cfg, opts.train_mode, rng, tape.wrist, x, n_top);

    tape.lang_ids = encode_task(obs.task, cfg);
    tape.lang_offset = n_top + n_wrist;
    tape.n_lang = n_lang;
    for (Eigen::Index i = 0; i < n_lang; ++i) {
        x.row(tape.lang_offset + i) = p.lang_embed.row(tape.lang_ids[static_cast<std::size_t>(i)]) + p.lang_pos.row(i);
    }

    tape.proprio_in = proprio_input(obs.joints);
    x.row(x.rows() - 1) = (p.proprio.weight * tape.proprio_in).transpose() + p.proprio.bias;
    return x;
}

ActionChunk run(const Observation& obs, const PolicyConfig& cfg, const PolicyParams& p,
                const ForwardOptions& opts, Tape& tape, bool keep_cache) {
    Mat x = build_sequence(obs, cfg, p, opts, tape);
    if (keep_cache) tape.blocks.resize(p.blocks.size());
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const bool last = l + 1 == p.blocks.size();
        const Eigen::Index m = last ? 1 : x.rows();
        x = block_fwd(p.blocks[l], x, m, cfg.n_heads, keep_cache ? &tape.blocks[l] : nullptr);
    }
    tape.head_in = norm_fwd(p.head_norm, x, tape.head_norm);
    tape.logits = linear_fwd(p.head, tape.head_in, nullptr);

    ActionChunk chunk(cfg.chunk);
    for (std::size_t t = 0; t < cfg.chunk; ++t) {
        for (std::size_t i = 0; i < kActionDim; ++i) {
            const double z = tape.logits(0, static_cast<Eigen::Index>(t * kActionDim + i));
            chunk[t][i] = i == kGripper ? logistic(z) : std::tanh(z);
        }
    }
    tape.actions = chunk;
    return chunk;
}

Linear make_linear(std::size_t out, std::size_t in, std::mt19937_64& rng, double std) {
    Linear l;
    l.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    std::normal_distribution<double> n(0.0, std);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = n(rng);
    l.bias = Mat::Zero(1, static_cast<Eigen::Index>(out));
    return l;
}

Norm make_norm(std::size_t d) {
    return Norm{Mat::Ones(1, static_cast<Eigen::Index>(d)), Mat::Zero(1, static_cast<Eigen::Index>(d))};
}

Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double std) {
    Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    std::normal_distribution<double> n(0.0, std);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

template <class P, class Ref>
std::vector<Ref> list_impl(P& p) {
    std::vector<Ref> out;
    auto add = [&](std::string name, auto& m, ParamGroup g, bool decay) {
        out.push_back(Ref{std::move(name), &m, g, decay});
    };
    auto add_linear = [&](const std::string& name, auto& l, ParamGroup g, ParamGroup lora_group) {
        add(name + ".weight", l.weight, g, true);
        add(name + ".bias", l.bias, g, false);
        if (l.lora) {
            add(name + ".lora_A", l.lora->A, lora_group, true);
            add(name + ".lora_B", l.lora->B, lora_group, true);
        }
    };
    auto add_norm = [&](const std::string& name, auto& n, ParamGroup g) {
        add(name + ".gain", n.gain, g, false);
        add(name + ".bias", n.bias, g, false);
    };
    add_linear("vision.top.proj", p.top.proj, ParamGroup::Vision, ParamGroup::Vision);
    add("vision.top.pos", p.top.pos, ParamGroup::Vision, false);
    add_linear("vision.wrist.proj", p.wrist.proj, ParamGroup::Vision, ParamGroup::Vision);
    add("vision.wrist.pos", p.wrist.pos, ParamGroup::Vision, false);
    add("lang.embed", p.lang_embed, ParamGroup::Language, true);
    add("lang.pos", p.lang_pos, ParamGroup::Language, false);
    add_linear("proprio.proj", p.proprio, ParamGroup::Proprio, ParamGroup::Proprio);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto& b = p.blocks[l];
        const std::string pre = "trunk." + std::to_string(l) + ".";
        add_norm(pre + "ln1", b.ln1, ParamGroup::TrunkBase);
        add_linear(pre + "attn.q", b.q, ParamGroup::TrunkBase, ParamGroup::TrunkLora);
        add_linear(pre + "attn.k", b.k, ParamGroup::TrunkBase, ParamGroup::TrunkLora);
        add_linear(pre + "attn.v", b.v, ParamGroup::TrunkBase, ParamGroup::TrunkLora);
        add_linear(pre + "attn.o", b.o, ParamGroup::TrunkBase, ParamGroup::TrunkLora);
        add_norm(pre + "ln2", b.ln2, ParamGroup::TrunkBase);
        add_linear(pre + "ffn.fc1", b.fc1, ParamGroup::TrunkBase, ParamGroup::TrunkLora);
        add_linear(pre + "ffn.fc2", b.fc2, ParamGroup::TrunkBase, ParamGroup::TrunkLora);
    }
    add_norm("head.norm", p.head_norm, ParamGroup::Head);
    add_linear("head.proj", p.head, ParamGroup::Head, ParamGroup::Head);
    return out;
}

Linear zeros_linear(const Linear& l) {
    Linear z;
    z.weight = Mat::Zero(l.weight.rows(), l.weight.cols());
    z.bias = Mat::Zero(l.bias.rows(), l.bias.cols());
    if (l.lora) {
        z.lora = *l.lora;
        z.lora->A.setZero();
        z.lora->B.setZero();
    }
    return z;
}

Norm zeros_norm(const Norm& n) {
    return Norm{Mat::Zero(n.gain.rows(), n.gain.cols()), Mat::Zero(n.bias.rows(), n.bias.cols())};
}

}  // namespace

// ---------------------------------------------------------------------------

Image image_from_rgb8(std::uint32_t height, std::uint32_t width, std::span<const std::uint8_t> pixels) {
    Image img(height, width);
    if (pixels.size() != img.data.size()) throw ShapeError("image_from_rgb8: pixel buffer does not match geometry");
    for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0;
    return img;
}

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Vision: return "vision";
        case ParamGroup::Language: return "language";
        case ParamGroup::Proprio: return "proprio";
        case ParamGroup::TrunkBase: return "trunk_base";
        case ParamGroup::TrunkLora: return "trunk_lora";
        case ParamGroup::Head: return "head";
    }
    return "?";
}

void PolicyConfig::validate() const {
    if (n_heads == 0 || d_model % n_heads != 0) throw ConfigError("policy: d_model must be divisible by head count");
    if (chunk < 1) throw ConfigError("policy: chunk length must be >= 1");
    if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("policy: p_drop must lie in [0,1)");
    if (patch == 0 || top_height % patch || top_width % patch || wrist_height % patch || wrist_width % patch) {
        throw ConfigError("policy: image sizes must be multiples of the patch size");
    }
    if (n_layers < 1 || d_ff < 1 || vocab < 2 || n_lang < 1) throw ConfigError("policy: invalid trunk size");
    if (lora_rank < 1 || lora_rank > d_model) throw ConfigError("policy: LoRA rank outside [1, d_model]");
    if (!(lora_alpha > 0.0)) throw ConfigError("policy: LoRA alpha must be positive");
}

std::vector<TensorRef> list_tensors(PolicyParams& p) { return list_impl<PolicyParams, TensorRef>(p); }

std::vector<ConstTensorRef> list_tensors(const PolicyParams& p) {
    return list_impl<const PolicyParams, ConstTensorRef>(p);
}

PolicyParams init_params(const PolicyConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.d_model;
    PolicyParams p;
    const double patch_std = 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim()));
    p.top.proj = make_linear(d, cfg.patch_dim(), rng, patch_std);
    p.top.pos = random_mat(cfg.top_tokens(), d, rng, 0.5);
    p.wrist.proj = make_linear(d, cfg.patch_dim(), rng, patch_std);
    p.wrist.pos = random_mat(cfg.wrist_tokens(), d, rng, 0.5);
    p.lang_embed = random_mat(cfg.vocab, d, rng, 0.5);
    p.lang_pos = random_mat(cfg.n_lang, d, rng, 0.5);
    p.proprio = make_linear(d, kActionDim, rng, 1.0);

    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    std::uint64_t lora_seed = seed ^ 0x9e3779b97f4a7c15ULL;
    auto attach = [&](Linear& l, bool on) {
        if (on) l.lora = lora::init_adapter(l.weight.rows(), l.weight.cols(), cfg.lora_rank, cfg.lora_alpha, lora_seed++);
    };
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        Block b;
        b.ln1 = make_norm(d);
        b.ln2 = make_norm(d);
        b.q = make_linear(d, d, rng, inv);
        b.k = make_linear(d, d, rng, inv);
        b.v = make_linear(d, d, rng, inv);
        b.o = make_linear(d, d, rng, inv);
        b.fc1 = make_linear(cfg.d_ff, d, rng, inv);
        b.fc2 = make_linear(d, cfg.d_ff, rng, 1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
        attach(b.q, cfg.lora_targets.q);
        attach(b.k, cfg.lora_targets.k);
        attach(b.v, cfg.lora_targets.v);
        attach(b.o, cfg.lora_targets.o);
        p.blocks.push_back(std::move(b));
    }
    p.head_norm = make_norm(d);
    p.head = make_linear(cfg.action_outputs(), d, rng, 0.02);
    return p;
}

PolicyParams zeros_like(const PolicyParams& p) {
    PolicyParams z;
    z.top.proj = zeros_linear(p.top.proj);
    z.top.pos = Mat::Zero(p.top.pos.rows(), p.top.pos.cols());
    z.wrist.proj = zeros_linear(p.wrist.proj);
    z.wrist.pos = Mat::Zero(p.wrist.pos.rows(), p.wrist.pos.cols());
    z.lang_embed = Mat::Zero(p.lang_embed.rows(), p.lang_embed.cols());
    z.lang_pos = Mat::Zero(p.lang_pos.rows(), p.lang_pos.cols());
    z.proprio = zeros_linear(p.proprio);
    for (const auto& b : p.blocks) {
        Block zb;
        zb.ln1 = zeros_norm(b.ln1);
        zb.ln2 = zeros_norm(b.ln2);
        zb.q = zeros_linear(b.q);
        zb.k = zeros_linear(b.k);
        zb.v = zeros_linear(b.v);
        zb.o = zeros_linear(b.o);
        zb.fc1 = zeros_linear(b.fc1);
        zb.fc2 = zeros_linear(b.fc2);
        z.blocks.push_back(std::move(zb));
    }
    z.head_norm = zeros_norm(p.head_norm);
    z.head = zeros_linear(p.head);
    return z;
}

bool group_trainable(const PolicyConfig& cfg, ParamGroup g) {
    switch (g) {
        case ParamGroup::TrunkLora:
        case ParamGroup::Head: return true;
        case ParamGroup::Vision: return !cfg.freeze_vision;
        default: return false;
    }
}

TrainableSet trainable_parameters(const PolicyConfig& cfg, const PolicyParams& params) {
    TrainableSet s;
    for (const auto& t : list_tensors(params)) {
        if (!group_trainable(cfg, t.group)) continue;
        s.names.push_back(t.name);
        const auto n = static_cast<std::size_t>(t.value->size());
        s.counts[t.group] += n;
        s.total += n;
    }
    return s;
}

std::vector<std::uint32_t> encode_task(const std::string& text, const PolicyConfig& cfg) {
    std::vector<std::uint32_t> ids;
    std::istringstream in(text);
    std::string word;
    while (ids.size() < cfg.n_lang && in >> word) {
        const auto h = io::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(word.data()), word.size()));
        ids.push_back(1 + static_cast<std::uint32_t>(h % (cfg.vocab - 1)));
    }
    ids.resize(cfg.n_lang, 0);
    return ids;
}

void check_observation(const Observation& obs, const PolicyConfig& cfg) {
    if (!obs.top && !obs.wrist) throw InputError("policy: both camera views missing");
    auto check = [](const Image& img, std::uint32_t h, std::uint32_t w, const char* name) {
        if (img.height != h || img.width != w || img.data.size() != std::size_t(h) * w * 3) {
            throw ShapeError(std::string("policy: ") + name + " image is " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) + ", expected " + std::to_string(h) + "x" + std::to_string(w));
        }
    };
    if (obs.top) check(*obs.top, cfg.top_height, cfg.top_width, "top");
    if (obs.wrist) check(*obs.wrist, cfg.wrist_height, cfg.wrist_width, "wrist");
}

Mat encode_views(const Observation& obs, const PolicyConfig& cfg, const PolicyParams& params,
                 const ForwardOptions& opts) {
    check_observation(obs, cfg);
    const Eigen::Index n_top = obs.top ? static_cast<Eigen::Index>(cfg.top_tokens()) : 0;
    const Eigen::Index n_wrist = obs.wrist ? static_cast<Eigen::Index>(cfg.wrist_tokens()) : 0;
    Mat x(n_top + n_wrist, cfg.d_model);
    std::mt19937_64 rng(opts.dropout_seed);
    ViewCache a, b;
    if (obs.top) embed_view(*obs.top, params.top, cfg, opts.train_mode, rng, a, x, 0);
    if (obs.wrist) embed_view(*obs.wrist, params.wrist, cfg, opts.train_mode, rng, b, x, n_top);
    return x;
}

ActionChunk forward(const Observation& obs, const PolicyConfig& cfg, const PolicyParams& params,
                    const ForwardOptions& opts) {
    Tape tape;
    return run(obs, cfg, params, opts, tape, false);
}

double loss_and_grad(const Observation& obs, const ActionChunk& target, const PolicyConfig& cfg,
                     const PolicyParams& params, PolicyParams& grads, double grad_scale,
                     const ForwardOptions& opts) {
    if (target.size() != cfg.chunk) throw ShapeError("loss_and_grad: target length != chunk");
    Tape tape;
    const ActionChunk pred = run(obs, cfg, params, opts, tape, true);

    const double T = static_cast<double>(cfg.chunk);
    double loss = 0.0;
    Mat dlogits(1, static_cast<Eigen::Index>(cfg.action_outputs()));
    for (std::size_t t = 0; t < cfg.chunk; ++t) {
        for (std::size_t i = 0; i < kActionDim; ++i) {
            const double a = pred[t][i];
            const double diff = a - target[t][i];
            loss += diff * diff;
            const double dsquash = i == kGripper ? a * (1.0 - a) : 1.0 - a * a;
            dlogits(0, static_cast<Eigen::Index>(t * kActionDim + i)) = grad_scale * 2.0 * diff / T * dsquash;
        }
    }
    loss /= T;

    const bool head = group_trainable(cfg, ParamGroup::Head);
    const bool lora = group_trainable(cfg, ParamGroup::TrunkLora);
    const bool base = group_trainable(cfg, ParamGroup::TrunkBase);
    const bool vision = group_trainable(cfg, ParamGroup::Vision);

    Mat dz;
    linear_bwd(params.head, tape.head_in, Mat(), dlogits, &grads.head, head, false, &dz);
    Mat dx = norm_bwd(params.head_norm, tape.head_norm, dz, head ? &grads.head_norm : nullptr);

    for (std::size_t l = params.blocks.size(); l-- > 0;) {
        const bool need_dx = l > 0 || vision;
        dx = block_bwd(params.blocks[l], tape.blocks[l], dx, cfg.n_heads, &grads.blocks[l], GradFlags{base, lora}, need_dx);
        if (!need_dx) break;
    }

    if (vision) {
        auto view_grad = [&](const ViewCache& vc, ViewEncoder& g) {
            if (!vc.present) return;
            Mat de = dx.middleRows(vc.offset, vc.count);
            for (Eigen::Index t = 0; t < vc.count; ++t) de.row(t) *= vc.keep[static_cast<std::size_t>(t)];
            g.pos += de;
            g.proj.weight.noalias() += de.transpose() * vc.patches;
            g.proj.bias.noalias() += de.colwise().sum();
        };
        view_grad(tape.top, grads.top);
        view_grad(tape.wrist, grads.wrist);
    }
    return loss;
}

void quantize_trunk(PolicyParams& params, std::size_t block_size, bool double_quant, std::size_t group_size) {
    const auto levels = quant::build_nf4_levels();
    for (auto& b : params.blocks) {
        for (Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2}) {
            l->quantized = quant::quantize(l->weight, block_size, levels, double_quant, group_size);
            l->weight = quant::dequantize(*l->quantized, levels);
        }
    }
}

}  // namespace vla::policy
