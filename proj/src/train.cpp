#include "vla/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "vla/checkpoint.hpp"
#include "vla/error.hpp"

namespace vla::train {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Typed accessors shared by both config structs.
struct Binder {
    const KeyValues& kv;
    std::string prefix;
    std::vector<std::string> known;

    template <class T>
    void operator()(const char* key, T& field) {
        const std::string k = prefix + key;
        known.push_back(k);
        if (!kv.has(k)) return;
        if constexpr (std::is_same_v<T, bool>) {
            field = kv.get_bool(k);
        } else if constexpr (std::is_floating_point_v<T>) {
            field = kv.get_double(k);
        } else {
            const long long v = kv.get_int(k);
            if (v < 0) throw ConfigError(k + " must be non-negative");
            field = static_cast<T>(v);
        }
    }

    void reject_unknown() const {
        for (const auto& k : kv.keys()) {
            if (k.rfind(prefix, 0) == 0 && std::find(known.begin(), known.end(), k) == known.end()) {
                throw ConfigError("unknown configuration key '" + k + "'");
            }
        }
    }
};

struct Writer {
    KeyValues& kv;
    std::string prefix;
    template <class T>
    void operator()(const char* key, const T& field) {
        if constexpr (std::is_same_v<T, bool>) {
            kv.set(prefix + key, field ? "true" : "false");
        } else if constexpr (std::is_floating_point_v<T>) {
            kv.set(prefix + key, num(field));
        } else {
            kv.set(prefix + key, std::to_string(field));
        }
    }
};

template <class F, class C>
void visit_fields(F& f, C& c) {
    f("batch", c.batch);
    f("accum", c.accum);
    f("steps", c.steps);
    f("lr_max", c.lr_max);
    f("lr_min", c.lr_min);
    f("beta1", c.beta1);
    f("beta2", c.beta2);
    f("eps", c.eps);
    f("weight_decay", c.weight_decay);
    f("clip", c.clip);
    f("checkpoint_interval", c.checkpoint_interval);
    f("val_fraction", c.val_fraction);
    f("val_stride", c.val_stride);
    f("seed", c.seed);
    f("freeze_vision", c.freeze_vision);
    f("quantize_base", c.quantize_base);
    f("quant_block", c.quant_block);
    f("double_quant", c.double_quant);
}

template <class F, class C>
void visit_policy(F& f, C& c) {
    f("top_height", c.top_height);
    f("top_width", c.top_width);
    f("wrist_height", c.wrist_height);
    f("wrist_width", c.wrist_width);
    f("patch", c.patch);
    f("d_model", c.d_model);
    f("n_layers", c.n_layers);
    f("n_heads", c.n_heads);
    f("d_ff", c.d_ff);
    f("vocab", c.vocab);
    f("n_lang", c.n_lang);
    f("chunk", c.chunk);
    f("lora_rank", c.lora_rank);
    f("lora_alpha", c.lora_alpha);
    f("p_drop", c.p_drop);
    f("freeze_vision", c.freeze_vision);
    f("lora_q", c.lora_targets.q);
    f("lora_k", c.lora_targets.k);
    f("lora_v", c.lora_targets.v);
    f("lora_o", c.lora_targets.o);
}

bool finite(const Mat& m) { return m.allFinite(); }

}  // namespace

void TrainConfig::validate() const {
    if (batch < 1 || accum < 1) throw ConfigError("train: batch and accum must be >= 1");
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (!(lr_max > lr_min && lr_min > 0)) throw ConfigError("train: need lr_max > lr_min > 0");
    if (!(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1)) throw ConfigError("train: betas must lie in (0,1)");
    if (!(eps > 0)) throw ConfigError("train: eps must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be non-negative");
    if (!(clip > 0)) throw ConfigError("train: clip threshold must be positive");
    if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("train: val_fraction must lie in (0,1)");
    if (val_stride < 1) throw ConfigError("train: val_stride must be >= 1");
    if (checkpoint_interval < 1) throw ConfigError("train: checkpoint_interval must be >= 1");
}

TrainConfig desk_defaults() {
    TrainConfig c;
    c.steps = 16000;
    c.lr_max = 3e-3;
    c.lr_min = 3e-5;
    c.checkpoint_interval = 2000;
    c.val_stride = 5;
    return c;
}

policy::PolicyConfig desk_policy() {
    policy::PolicyConfig c;
    c.lora_rank = 16;
    c.lora_alpha = 32.0;
    c.p_drop = 0.0;
    return c;
}

void apply_config(const KeyValues& kv, TrainConfig& cfg) {
    Binder b{kv, "train.", {}};
    visit_fields(b, cfg);
    b.known.push_back("train.clip_norm");
    if (auto s = kv.find("train.clip_norm")) {
        if (*s == "l2") cfg.clip_norm = ClipNorm::L2;
        else if (*s == "inf") cfg.clip_norm = ClipNorm::Inf;
        else throw ConfigError("train.clip_norm must be l2 or inf, got '" + *s + "'");
    }
    b.reject_unknown();
}

void apply_config(const KeyValues& kv, policy::PolicyConfig& cfg) {
    Binder b{kv, "policy.", {}};
    visit_policy(b, cfg);
    b.reject_unknown();
}

KeyValues to_key_values(const TrainConfig& cfg) {
    KeyValues kv;
    Writer w{kv, "train."};
    visit_fields(w, cfg);
    kv.set("train.clip_norm", cfg.clip_norm == ClipNorm::L2 ? "l2" : "inf");
    return kv;
}

KeyValues to_key_values(const policy::PolicyConfig& cfg) {
    KeyValues kv;
    Writer w{kv, "policy."};
    visit_policy(w, cfg);
    return kv;
}

double action_loss(const policy::ActionChunk& pred, const policy::ActionChunk& target) {
    if (pred.size() != target.size()) throw ShapeError("action_loss: length mismatch");
    if (pred.empty()) throw ShapeError("action_loss: empty chunk");
    double s = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        for (std::size_t i = 0; i < kActionDim; ++i) {
            const double d = pred[t][i] - target[t][i];
            s += d * d;
        }
    }
    return s / static_cast<double>(pred.size());
}

double lr_at(double t, const TrainConfig& cfg) {
    const double T = static_cast<double>(cfg.steps);
    if (!(t >= 0 && t <= T)) throw RangeError("lr_at: step " + num(t) + " outside [0, " + num(T) + "]");
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(kPi * t / T)) / 2.0;
}

double clip_gradients(const std::vector<policy::TensorRef>& grads, double threshold, ClipNorm norm) {
    if (!(threshold > 0)) throw RangeError("clip_gradients: threshold must be positive");
    double acc = 0.0;
    for (const auto& g : grads) {
        if (!finite(*g.value)) throw NumericError("clip_gradients: non-finite gradient in " + g.name);
        if (norm == ClipNorm::L2) acc += g.value->squaredNorm();
        else if (g.value->size() > 0) acc = std::max(acc, g.value->cwiseAbs().maxCoeff());
    }
    const double n = norm == ClipNorm::L2 ? std::sqrt(acc) : acc;
    if (n > threshold) {
        const double s = threshold / n;
        for (const auto& g : grads) *g.value *= s;
    }
    return n;
}

void adamw_update(Mat& param, const Mat& grad, Mat& m, Mat& v, std::uint64_t t, double lr, const TrainConfig& cfg,
                  bool decay) {
    if (grad.rows() != param.rows() || grad.cols() != param.cols() || m.rows() != param.rows() ||
        m.cols() != param.cols() || v.rows() != param.rows() || v.cols() != param.cols()) {
        throw ShapeError("adamw_update: shape mismatch");
    }
    if (t < 1) throw RangeError("adamw_update: step must be >= 1");
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    if (decay && cfg.weight_decay > 0) param *= (1.0 - lr * cfg.weight_decay);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
}

void adamw_step(policy::PolicyParams& params, const policy::PolicyParams& grads, AdamState& state, std::uint64_t t,
                const TrainConfig& cfg, const policy::PolicyConfig& pcfg) {
    const double lr = lr_at(static_cast<double>(t), cfg);
    auto ps = policy::list_tensors(params);
    const auto gs = policy::list_tensors(grads);
    if (ps.size() != gs.size()) throw ShapeError("adamw_step: parameter and gradient structures differ");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (!policy::group_trainable(pcfg, ps[i].group)) continue;
        Mat& p = *ps[i].value;
        auto& m = state.m[ps[i].name];
        auto& v = state.v[ps[i].name];
        if (m.size() == 0) m = Mat::Zero(p.rows(), p.cols());
        if (v.size() == 0) v = Mat::Zero(p.rows(), p.cols());
        adamw_update(p, *gs[i].value, m, v, t, lr, cfg, ps[i].decay);
    }
    state.step = t;
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto m = data::read_manifest(dir);
    Dataset ds;
    ds.reserve(m.episodes.size());
    for (const auto& e : m.episodes) ds.push_back(EpisodeData{data::read_episode(dir, m, e.id), e.task});
    return ds;
}

Split split_episodes(std::size_t episodes, double val_fraction) {
    if (episodes < 2) throw InputError("split: need at least two episodes for a train/validation split");
    auto n_val = static_cast<std::size_t>(std::lround(static_cast<double>(episodes) * val_fraction));
    n_val = std::clamp<std::size_t>(n_val, 1, episodes - 1);
    Split s;
    for (std::size_t i = 0; i < episodes; ++i) (i < episodes - n_val ? s.train : s.val).push_back(i);
    return s;
}

policy::Observation make_observation(const EpisodeData& ep, std::size_t frame) {
    const auto& e = ep.episode;
    if (frame >= e.size()) throw RangeError("make_observation: frame out of range");
    const auto& t = e.top[frame];
    const auto& w = e.wrist[frame];
    policy::Observation o;
    o.top = policy::image_from_rgb8(t.height, t.width, t.pixels);
    o.wrist = policy::image_from_rgb8(w.height, w.width, w.pixels);
    o.joints = e.states[frame];
    o.task = ep.task;
    return o;
}

policy::ActionChunk make_target(const data::Episode& ep, std::size_t frame, std::size_t chunk,
                                const JointLimits& limits) {
    if (ep.size() == 0) throw InputError("make_target: empty episode");
    policy::ActionChunk out;
    out.reserve(chunk);
    for (std::size_t k = 0; k < chunk; ++k) {
        const std::size_t f = std::min(frame + k, ep.size() - 1);
        out.push_back(normalize_action(clamp_joints(ep.actions[f], limits), limits));
    }
    return out;
}

double evaluate(const Dataset& ds, const std::vector<std::size_t>& episodes, const policy::PolicyConfig& pcfg,
                const policy::PolicyParams& params, const JointLimits& limits, std::uint32_t stride) {
    if (stride < 1) throw RangeError("evaluate: stride must be >= 1");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t e : episodes) {
        if (e >= ds.size()) throw RangeError("evaluate: episode index out of range");
        const auto& ep = ds[e];
        for (std::size_t f = 0; f < ep.episode.size(); f += stride) {
            const auto pred = policy::forward(make_observation(ep, f), pcfg, params);
            sum += action_loss(pred, make_target(ep.episode, f, pcfg.chunk, limits));
            ++n;
        }
    }
    if (n == 0) throw InputError("evaluate: empty split");
    return sum / static_cast<double>(n);
}

TrainResult train_loop(const Dataset& ds, policy::PolicyConfig pcfg, const TrainConfig& cfg, const TrainHooks& hooks,
                       const JointLimits& limits) {
    cfg.validate();
    if (ds.empty()) throw InputError("train: empty dataset");
    pcfg.freeze_vision = cfg.freeze_vision;
    pcfg.validate();
    const Split split = split_episodes(ds.size(), cfg.val_fraction);

    struct SampleRef {
        std::uint32_t episode, frame;
    };
    std::vector<SampleRef> pool;
    for (std::size_t e : split.train) {
        for (std::size_t f = 0; f < ds[e].episode.size(); ++f) {
            pool.push_back({static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(f)});
        }
    }
    if (pool.empty()) throw InputError("train: training split has no frames");

    policy::PolicyParams params = policy::init_params(pcfg, cfg.seed);
    if (cfg.quantize_base) policy::quantize_trunk(params, cfg.quant_block, cfg.double_quant, 256);

    // Sample stream: consecutive seeded permutations of the pool, consumed in
    // order, so it depends only on the seed and not on how B and G split B_eff.
    std::mt19937_64 order_rng(data::derive_seed(cfg.seed, 0x5eed));
    std::vector<std::uint32_t> perm(pool.size());
    std::size_t cursor = perm.size();
    std::uint64_t drawn = 0;
    auto next_sample = [&]() {
        if (cursor == perm.size()) {
            std::iota(perm.begin(), perm.end(), 0u);
            std::shuffle(perm.begin(), perm.end(), order_rng);
            cursor = 0;
        }
        return std::pair{pool[perm[cursor++]], drawn++};
    };

    Checkpoint ck;
    ck.policy = pcfg;
    ck.train = cfg;
    TrainResult res;
    std::optional<double> best_val;
    AdamState opt;
    policy::PolicyParams grads = policy::zeros_like(params);
    const double scale = 1.0 / static_cast<double>(cfg.effective_batch());

    for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
        for (auto& g : policy::list_tensors(grads)) g.value->setZero();
        double loss = 0.0;
        for (std::uint32_t micro = 0; micro < cfg.accum; ++micro) {
            for (std::uint32_t b = 0; b < cfg.batch; ++b) {
                const auto [s, index] = next_sample();
                const auto& ep = ds[s.episode];
                policy::ForwardOptions fo;
                fo.train_mode = true;
                fo.dropout_seed = data::derive_seed(cfg.seed ^ 0xd50f, index);
                loss += scale * policy::loss_and_grad(make_observation(ep, s.frame),
                                                      make_target(ep.episode, s.frame, pcfg.chunk, limits), pcfg,
                                                      params, grads, scale, fo);
            }
        }
        if (!std::isfinite(loss)) throw NumericError("train: non-finite loss at step " + std::to_string(step));

        std::vector<policy::TensorRef> trainable;
        for (auto& g : policy::list_tensors(grads)) {
            if (policy::group_trainable(pcfg, g.group)) trainable.push_back(g);
        }
        clip_gradients(trainable, cfg.clip, cfg.clip_norm);
        adamw_step(params, grads, opt, step, cfg, pcfg);

        LossRecord rec{step, loss, std::nullopt, lr_at(static_cast<double>(step), cfg)};
        const bool boundary = step % cfg.checkpoint_interval == 0 || step == cfg.steps;
        if (boundary) {
            rec.val_loss = evaluate(ds, split.val, pcfg, params, limits, cfg.val_stride);
        }
        res.history.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);

        if (boundary) {
            ck.params = params;
            ck.optimizer = opt;
            ck.step = step;
            ck.history = res.history;
            if (hooks.checkpoint_dir) {
                char name[32];
                std::snprintf(name, sizeof name, "step_%06llu.vlac", static_cast<unsigned long long>(step));
                std::filesystem::create_directories(*hooks.checkpoint_dir);
                save_checkpoint(*hooks.checkpoint_dir / name, ck);
            }
            if (!best_val || *rec.val_loss < *best_val) {
                best_val = rec.val_loss;
                res.best = ck;
            }
        }
    }
    res.last = ck;
    res.best.history = res.history;
    return res;
}

std::string loss_csv(const std::vector<LossRecord>& history) {
    std::ostringstream o;
    o << "step,train_loss,val_loss,lr\n";
    char buf[128];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%llu,%.6g,", static_cast<unsigned long long>(r.step), r.train_loss);
        o << buf;
        if (r.val_loss) {
            std::snprintf(buf, sizeof buf, "%.6g", *r.val_loss);
            o << buf;
        }
        std::snprintf(buf, sizeof buf, ",%.6g\n", r.lr);
        o << buf;
    }
    return o.str();
}

}  // namespace vla::train
