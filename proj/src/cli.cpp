#include "vla/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "vla/binary_io.hpp"
#include "vla/checkpoint.hpp"
#include "vla/data.hpp"
#include "vla/diag.hpp"
#include "vla/error.hpp"
#include "vla/kv_config.hpp"
#include "vla/runtime.hpp"
#include "vla/train.hpp"

namespace fs = std::filesystem;

namespace vla::cli {

namespace {

std::string g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

const std::vector<std::string> kPrefixes{"train.", "policy.", "sim.", "runtime."};

KeyValues load_config(const std::string& path) {
    if (path.empty()) return {};
    auto kv = KeyValues::load(path);
    for (const auto& k : kv.keys()) {
        const bool known = std::any_of(kPrefixes.begin(), kPrefixes.end(),
                                       [&](const std::string& p) { return k.rfind(p, 0) == 0; });
        if (!known) throw ConfigError(path + ": unknown configuration key '" + k + "'");
    }
    return kv;
}

template <class F>
void bind_keys(const KeyValues& kv, const std::string& prefix, F&& visit) {
    std::vector<std::string> known;
    auto field = [&](const char* key, auto& v) {
        const std::string k = prefix + key;
        known.push_back(k);
        if (!kv.has(k)) return;
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, bool>) v = kv.get_bool(k);
        else if constexpr (std::is_floating_point_v<T>) v = kv.get_double(k);
        else v = static_cast<T>(kv.get_int(k));
    };
    visit(field);
    for (const auto& k : kv.keys()) {
        if (k.rfind(prefix, 0) == 0 && std::find(known.begin(), known.end(), k) == known.end()) {
            throw ConfigError("unknown configuration key '" + k + "'");
        }
    }
}

void apply_sim(const KeyValues& kv, sim::SimConfig& c) {
    bind_keys(kv, "sim.", [&](auto&& f) {
        f("x_min", c.x_min);
        f("x_max", c.x_max);
        f("y_min", c.y_min);
        f("y_max", c.y_max);
        f("press_depth", c.press_depth);
        f("success_radius", c.success_radius);
        f("pixel_noise_std", c.pixel_noise_std);
        f("joint_noise_std_deg", c.joint_noise_std_deg);
    });
}

void apply_runtime(const KeyValues& kv, runtime::RuntimeConfig& c) {
    bind_keys(kv, "runtime.", [&](auto&& f) {
        f("control_hz", c.control_hz);
        f("budget_ms", c.budget_ms);
        f("smoothing", c.smoothing);
        f("pre_ms", c.injected.pre_ms);
        f("forward_ms", c.injected.forward_ms);
        f("post_ms", c.injected.post_ms);
        f("max_ticks", c.max_ticks);
    });
}

sim::CameraFailure parse_failure(const std::string& spec, sim::View view) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw ConfigError("camera failure must be START:END ticks, got '" + spec + "'");
    try {
        return sim::CameraFailure{view, std::stoull(spec.substr(0, colon)), std::stoull(spec.substr(colon + 1))};
    } catch (const std::exception&) {
        throw ConfigError("camera failure must be START:END ticks, got '" + spec + "'");
    }
}

std::string id6(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06zu", i);
    return buf;
}

std::vector<std::size_t> split_indices(const std::string& split, std::size_t n, double val_fraction) {
    if (split == "all") {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    const auto s = train::split_episodes(n, val_fraction);
    if (split == "val") return s.val;
    if (split == "train") return s.train;
    throw ConfigError("split must be val, train or all, got '" + split + "'");
}

struct Context {
    std::ostream& out;
    std::ostream& err;
};

// ---- dataset ---------------------------------------------------------------

struct DatasetGen {
    std::string out_dir, config, task = data::kDefaultTask;
    std::uint32_t episodes = 20;
    double fps = 30.0;
    std::uint64_t seed = 0;

    void run(Context& ctx) const {
        const auto kv = load_config(config);
        sim::SimConfig sc;
        apply_sim(kv, sc);
        data::GenerateOptions o;
        o.episodes = episodes;
        o.seed = seed;
        o.fps = fps;
        o.task = task;
        const auto m = data::generate_demos(out_dir, o, sc);
        std::size_t frames = 0, ok = 0;
        for (const auto& e : m.episodes) {
            frames += e.frames;
            ok += e.success ? 1 : 0;
        }
        ctx.out << "episodes=" << m.episodes.size() << " frames=" << frames << " successes=" << ok << "\n";
    }
};

struct DatasetStatsCmd {
    std::string dir, out_csv;

    void run(Context& ctx) const {
        const auto st = data::dataset_stats(dir);
        std::ostringstream csv;
        csv << "kind,joint,mean,std,min,max\n";
        auto rows = [&](const char* kind, const data::JointStats& js) {
            for (std::size_t i = 0; i < kActionDim; ++i) {
                csv << kind << "," << kJointNames[i] << "," << g6(js.mean[i]) << "," << g6(js.stddev[i]) << ","
                    << g6(js.min[i]) << "," << g6(js.max[i]) << "\n";
            }
        };
        rows("state", st.states);
        rows("action", st.actions);
        std::ostringstream hist;
        hist << "bin_start,bin_end,episodes\n";
        for (std::size_t b = 0; b < st.length_histogram.size(); ++b) {
            hist << g6(b * st.histogram_bin) << "," << g6((b + 1) * st.histogram_bin) << "," << st.length_histogram[b]
                 << "\n";
        }
        ctx.out << "episodes=" << st.episodes << " frames=" << st.frames << "\n" << csv.str() << hist.str();
        if (!out_csv.empty()) {
            fs::path p(out_csv);
            io::write_text(p, csv.str());
            auto h = p;
            h.replace_filename(p.stem().string() + "_lengths.csv");
            io::write_text(h, hist.str());
        }
    }
};

struct DatasetValidate {
    std::string dir, out_csv;

    int run(Context& ctx) const {
        const auto rep = data::validate_dataset(dir);
        std::ostringstream csv;
        csv << "episode,frame,message\n";
        for (const auto& v : rep.violations) {
            csv << (v.episode ? std::to_string(*v.episode) : "") << "," << (v.frame ? std::to_string(*v.frame) : "")
                << ",\"" << v.message << "\"\n";
        }
        if (!out_csv.empty()) io::write_text(out_csv, csv.str());
        if (rep.ok()) {
            ctx.out << "ok: no violations\n";
            return kExitOk;
        }
        ctx.err << rep.violations.size() << " violation(s)\n" << csv.str();
        return kExitDomain;
    }
};

// ---- train / eval / quantize ------------------------------------------------

struct TrainCmd {
    std::string episodes_dir, out_dir, config;
    std::uint64_t seed = 0, steps = 0, interval = 0;
    double lr_max = 0, lr_min = 0;
    std::uint32_t batch = 0, accum = 0;
    bool freeze = false, unfreeze = false, quantize_base = false;
    CLI::App* app = nullptr;

    void run(Context& ctx) const {
        const auto kv = load_config(config);
        auto tc = train::desk_defaults();
        auto pc = train::desk_policy();
        train::apply_config(kv, tc);
        train::apply_config(kv, pc);
        tc.seed = seed;
        if (app->count("--steps")) tc.steps = steps;
        if (app->count("--lr-max")) tc.lr_max = lr_max;
        if (app->count("--lr-min")) tc.lr_min = lr_min;
        if (app->count("--batch")) tc.batch = batch;
        if (app->count("--accum")) tc.accum = accum;
        if (app->count("--checkpoint-interval")) tc.checkpoint_interval = interval;
        if (freeze) tc.freeze_vision = true;
        if (unfreeze) tc.freeze_vision = false;
        if (quantize_base) tc.quantize_base = true;
        tc.checkpoint_interval = std::min(tc.checkpoint_interval, tc.steps);

        const auto ds = train::load_dataset(episodes_dir);
        train::TrainHooks hooks;
        hooks.checkpoint_dir = fs::path(out_dir) / "checkpoints";
        const auto res = train::train_loop(ds, pc, tc, hooks);
        fs::create_directories(out_dir);
        train::save_checkpoint(fs::path(out_dir) / "best", res.best);
        train::save_checkpoint(fs::path(out_dir) / "last", res.last);
        io::write_text(fs::path(out_dir) / "loss.csv", train::loss_csv(res.history));
        const auto& last = res.history.back();
        ctx.out << "steps=" << tc.steps << " effective_batch=" << tc.effective_batch()
                << " final_train_loss=" << g6(last.train_loss) << " best_step=" << res.best.step
                << " best_val_loss=" << g6(*res.best.history[res.best.step - 1].val_loss) << "\n";
    }
};

struct EvalCmd {
    std::string checkpoint, episodes_dir, split = "val", out_csv;
    std::uint32_t stride = 1;

    void run(Context& ctx) const {
        const auto ck = train::load_checkpoint(checkpoint);
        const auto ds = train::load_dataset(episodes_dir);
        const auto idx = split_indices(split, ds.size(), ck.train.val_fraction);
        const double loss = train::evaluate(ds, idx, ck.policy, ck.params, JointLimits::so101(), stride);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", loss);
        ctx.out << "split=" << split << " episodes=" << idx.size() << " loss=" << buf << "\n";
        if (!out_csv.empty()) io::write_text(out_csv, "checkpoint,split,loss\n" + checkpoint + "," + split + "," + buf + "\n");
    }
};

struct QuantizeCmd {
    std::string in, out, report;
    std::uint32_t block = 64, group = 256;
    bool no_double_quant = false;

    void run(Context& ctx) const {
        auto ck = train::load_checkpoint(in);
        const bool dq = !no_double_quant;
        policy::quantize_trunk(ck.params, block, dq, group);
        train::save_checkpoint(out, ck);
        std::ostringstream csv;
        csv << "tensor,rows,cols,block,double_quant,bits_per_weight,reduction_vs_fp32\n";
        for (std::size_t l = 0; l < ck.params.blocks.size(); ++l) {
            const auto& b = ck.params.blocks[l];
            const std::pair<const char*, const policy::Linear*> items[] = {
                {"attn.q", &b.q}, {"attn.k", &b.k}, {"attn.v", &b.v}, {"attn.o", &b.o}, {"ffn.fc1", &b.fc1}, {"ffn.fc2", &b.fc2}};
            for (const auto& [name, lin] : items) {
                const auto rows = static_cast<std::size_t>(lin->weight.rows());
                const auto cols = static_cast<std::size_t>(lin->weight.cols());
                const auto fp = quant::memory_footprint(rows, cols, block, group, dq);
                csv << "trunk." << l << "." << name << "," << rows << "," << cols << "," << block << ","
                    << (dq ? 1 : 0) << "," << g6(fp.total_bits) << "," << g6(fp.reduction_vs_fp32) << "\n";
            }
        }
        ctx.out << csv.str();
        if (!report.empty()) io::write_text(report, csv.str());
    }
};

// ---- deploy / diagnose / report ---------------------------------------------

struct DeployCmd {
    std::string checkpoint, out_dir = "deploy", config;
    std::vector<std::string> fail_top, fail_wrist;
    std::uint32_t episodes = 100;
    std::uint64_t seed = 0, max_ticks = 0;
    double pre_ms = 0, forward_ms = 0, post_ms = 0, budget_ms = 0, smoothing = 0;
    CLI::App* app = nullptr;

    void run(Context& ctx) const {
        const auto ck = train::load_checkpoint(checkpoint);
        const auto kv = load_config(config);
        sim::SimConfig sc;
        apply_sim(kv, sc);
        for (const auto& f : fail_top) sc.camera_failures.push_back(parse_failure(f, sim::View::Top));
        for (const auto& f : fail_wrist) sc.camera_failures.push_back(parse_failure(f, sim::View::Wrist));
        auto rc = runtime::RuntimeConfig::from_limits(sc.limits);
        apply_runtime(kv, rc);
        if (app->count("--max-ticks")) rc.max_ticks = max_ticks;
        if (app->count("--pre-ms")) rc.injected.pre_ms = pre_ms;
        if (app->count("--forward-ms")) rc.injected.forward_ms = forward_ms;
        if (app->count("--post-ms")) rc.injected.post_ms = post_ms;
        if (app->count("--budget-ms")) rc.budget_ms = budget_ms;
        if (app->count("--smoothing")) rc.smoothing = smoothing;

        const fs::path out(out_dir);
        fs::create_directories(out / "logs");
        std::ostringstream eps;
        eps << "episode,reset_seed,button_x,button_y,success,ticks,min_distance,deadline_misses,refills,estop\n";
        std::size_t successes = 0, misses = 0, estops = 0, success_ticks = 0;
        double forward_ms_sum = 0;
        std::size_t forward_n = 0;
        for (std::uint32_t i = 0; i < episodes; ++i) {
            const std::uint64_t reset_seed = data::derive_seed(seed, i);
            auto ec = sc;
            ec.seed = data::derive_seed(seed ^ 0x5133, i);
            const auto start = sim::reset(ec, reset_seed);
            const auto log = runtime::control_loop(ck.policy, ck.params, ec, start, rc);
            std::size_t ep_miss = 0;
            double min_d = std::numeric_limits<double>::infinity();
            std::ostringstream trace;
            trace << "tick,distance_m\n";
            for (const auto& t : log.ticks) {
                ep_miss += t.deadline_miss ? 1 : 0;
                min_d = std::min(min_d, t.distance_to_button);
                trace << t.tick << "," << g6(t.distance_to_button) << "\n";
            }
            for (double ms : log.measured_forward_ms) forward_ms_sum += ms;
            forward_n += log.measured_forward_ms.size();
            successes += log.success ? 1 : 0;
            misses += ep_miss;
            estops += log.estopped ? 1 : 0;
            if (log.success) success_ticks += log.ticks.size();
            eps << i << "," << reset_seed << "," << g6(start.button[0]) << "," << g6(start.button[1]) << ","
                << (log.success ? 1 : 0) << "," << log.ticks.size() << "," << g6(log.ticks.empty() ? 0.0 : min_d) << ","
                << ep_miss << "," << log.refill_ticks.size() << "," << (log.estopped ? 1 : 0) << "\n";
            io::write_text(out / "logs" / ("episode_" + id6(i) + ".csv"), log.to_csv());
            io::write_text(out / "logs" / ("episode_" + id6(i) + ".trace.csv"), trace.str());
        }
        std::ostringstream summary;
        const double rate = episodes ? static_cast<double>(successes) / episodes : 0.0;
        summary << "episodes,successes,success_rate,deadline_misses,estops,mean_ticks_to_success\n"
                << episodes << "," << successes << "," << g6(rate) << "," << misses << "," << estops << ","
                << g6(successes ? static_cast<double>(success_ticks) / successes : 0.0) << "\n";
        io::write_text(out / "summary.csv", summary.str());
        io::write_text(out / "episodes.csv", eps.str());
        ctx.out << summary.str();
        // Wall-clock figures vary run to run, so they stay out of the files.
        if (forward_n) ctx.err << "measured forward latency: " << g6(forward_ms_sum / forward_n) << " ms mean\n";
    }
};

struct DiagnoseVision {
    std::string checkpoint, episodes_dir, split = "val", label, out_csv;
    std::uint32_t stride = 1;

    void run(Context& ctx) const {
        const auto ck = train::load_checkpoint(checkpoint);
        const auto ds = train::load_dataset(episodes_dir);
        diag::InfluenceRun run{label.empty() ? fs::path(checkpoint).filename().string() : label, {}};
        for (auto i : split_indices(split, ds.size(), ck.train.val_fraction)) {
            run.episodes.push_back(diag::vision_influence(ck.policy, ck.params, ds[i], stride));
        }
        diag::emit_report({run}, out_csv);
        ctx.out << diag::summary_csv({run});
    }
};

struct DiagnoseOscillation {
    std::string run_dir, out_csv;
    std::size_t window = 5, threshold = 6;

    void run(Context& ctx) const {
        const fs::path dir(run_dir);
        const auto kv_text = io::read_text(dir / "episodes.csv");
        std::istringstream lines(kv_text);
        std::string line;
        std::getline(lines, line);  // header
        std::ostringstream csv;
        csv << "episode,success,reversals,oscillatory\n";
        std::size_t flagged = 0, n = 0;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            std::vector<std::string> cols;
            std::stringstream ls(line);
            for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
            if (cols.size() < 5) throw FormatError((dir / "episodes.csv").string() + ": malformed row");
            const std::size_t ep = std::stoul(cols[0]);
            const bool success = cols[4] == "1";
            std::istringstream trace(io::read_text(dir / "logs" / ("episode_" + id6(ep) + ".trace.csv")));
            std::vector<double> d;
            std::getline(trace, line);
            while (std::getline(trace, line)) {
                const auto comma = line.find(',');
                if (comma != std::string::npos) d.push_back(std::stod(line.substr(comma + 1)));
            }
            const auto rep = diag::detect_oscillation(d, success, {window, threshold});
            flagged += rep.oscillatory ? 1 : 0;
            ++n;
            csv << ep << "," << (success ? 1 : 0) << "," << rep.reversals << "," << (rep.oscillatory ? 1 : 0) << "\n";
        }
        io::write_text(out_csv, csv.str());
        ctx.out << "episodes=" << n << " oscillatory=" << flagged << "\n";
    }
};

struct ReportCmd {
    std::string episodes_dir, split = "val", out_csv;
    std::vector<std::string> runs;
    std::uint32_t stride = 1;

    void run(Context& ctx) const {
        const auto ds = train::load_dataset(episodes_dir);
        std::vector<diag::InfluenceRun> out;
        for (const auto& spec : runs) {
            const auto eq = spec.find('=');
            if (eq == std::string::npos) throw ConfigError("--run expects LABEL=CHECKPOINT, got '" + spec + "'");
            const auto ck = train::load_checkpoint(spec.substr(eq + 1));
            diag::InfluenceRun r{spec.substr(0, eq), {}};
            for (auto i : split_indices(split, ds.size(), ck.train.val_fraction)) {
                r.episodes.push_back(diag::vision_influence(ck.policy, ck.params, ds[i], stride));
            }
            out.push_back(std::move(r));
        }
        diag::emit_report(out, out_csv);
        ctx.out << diag::summary_csv(out);
    }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Desk-scale vision-language-action pipeline: data, training, quantization, deployment, diagnostics"};
    app.name("vla");
    app.require_subcommand(1);
    Context ctx{out, err};

    auto* dataset = app.add_subcommand("dataset", "Synthetic demonstration datasets");
    dataset->require_subcommand(1);

    DatasetGen gen;
    auto* c_gen = dataset->add_subcommand("gen", "Generate scripted-expert demonstrations");
    c_gen->add_option("--out", gen.out_dir, "Output dataset directory")->required();
    c_gen->add_option("--episodes", gen.episodes, "Number of episodes")->capture_default_str();
    c_gen->add_option("--fps", gen.fps, "Recording rate (Hz)")->capture_default_str();
    c_gen->add_option("--task", gen.task, "Task instruction")->capture_default_str();
    c_gen->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
    c_gen->add_option("--config", gen.config, "key=value configuration file");

    DatasetStatsCmd stats;
    auto* c_stats = dataset->add_subcommand("stats", "Per-joint statistics and episode-length histogram");
    c_stats->add_option("--dir", stats.dir, "Dataset directory")->required();
    c_stats->add_option("--out", stats.out_csv, "CSV path for the statistics");

    DatasetValidate validate;
    auto* c_val = dataset->add_subcommand("validate", "Check a dataset for format and content violations");
    c_val->add_option("--dir", validate.dir, "Dataset directory")->required();
    c_val->add_option("--out", validate.out_csv, "CSV path for the violation list");

    TrainCmd tr;
    auto* c_train = app.add_subcommand("train", "Fine-tune the policy on a dataset");
    tr.app = c_train;
    c_train->add_option("--episodes", tr.episodes_dir, "Dataset directory")->required();
    c_train->add_option("--out", tr.out_dir, "Output directory (best, last, loss.csv, checkpoints/)")->required();
    c_train->add_option("--steps", tr.steps, "Optimizer steps");
    c_train->add_option("--lr-max", tr.lr_max, "Peak learning rate");
    c_train->add_option("--lr-min", tr.lr_min, "Final learning rate");
    c_train->add_option("--batch", tr.batch, "Micro-batch size");
    c_train->add_option("--accum", tr.accum, "Gradient accumulation steps");
    c_train->add_option("--checkpoint-interval", tr.interval, "Steps between checkpoints");
    auto* f_freeze = c_train->add_flag("--freeze-vision", tr.freeze, "Keep the vision encoder fixed (default)");
    c_train->add_flag("--unfreeze-vision", tr.unfreeze, "Train the vision encoder")->excludes(f_freeze);
    c_train->add_flag("--quantize-base", tr.quantize_base, "Store the trunk base weights as NF4 while training");
    c_train->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
    c_train->add_option("--config", tr.config, "key=value configuration file");

    EvalCmd ev;
    auto* c_eval = app.add_subcommand("eval", "Mean chunk loss of a checkpoint on a dataset split");
    c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
    c_eval->add_option("--episodes", ev.episodes_dir, "Dataset directory")->required();
    c_eval->add_option("--split", ev.split, "val, train or all")->capture_default_str();
    c_eval->add_option("--stride", ev.stride, "Evaluate every n-th frame")->capture_default_str();
    c_eval->add_option("--out", ev.out_csv, "CSV path for the result");
    std::uint64_t unused_seed = 0;
    c_eval->add_option("--seed", unused_seed, "Accepted for uniformity; evaluation is deterministic");

    QuantizeCmd q;
    auto* c_q = app.add_subcommand("quantize", "Store the trunk base weights as blockwise NF4");
    c_q->add_option("--in", q.in, "Input checkpoint")->required();
    c_q->add_option("--out", q.out, "Output checkpoint")->required();
    c_q->add_option("--block", q.block, "Weights per quantization block")->capture_default_str();
    c_q->add_option("--group", q.group, "Blocks per double-quantization group")->capture_default_str();
    c_q->add_flag("--no-double-quant", q.no_double_quant, "Keep per-block scales in float32");
    c_q->add_option("--report", q.report, "CSV path for the per-tensor footprint");
    c_q->add_option("--seed", unused_seed, "Accepted for uniformity; quantization is deterministic");

    DeployCmd dep;
    auto* c_dep = app.add_subcommand("deploy-sim", "Closed-loop deployment in the simulator");
    dep.app = c_dep;
    c_dep->add_option("--checkpoint", dep.checkpoint, "Checkpoint file")->required();
    c_dep->add_option("--episodes", dep.episodes, "Number of seeded resets")->capture_default_str();
    c_dep->add_option("--out", dep.out_dir, "Output directory")->capture_default_str();
    c_dep->add_option("--max-ticks", dep.max_ticks, "Tick limit per episode");
    c_dep->add_option("--pre-ms", dep.pre_ms, "Injected preprocessing latency (ms)");
    c_dep->add_option("--forward-ms", dep.forward_ms, "Injected forward-pass latency (ms)");
    c_dep->add_option("--post-ms", dep.post_ms, "Injected postprocessing latency (ms)");
    c_dep->add_option("--budget-ms", dep.budget_ms, "Latency budget (ms)");
    c_dep->add_option("--smoothing", dep.smoothing, "Weight of the previous command in the low-pass filter");
    c_dep->add_option("--fail-top", dep.fail_top, "Blank the top camera for ticks START:END");
    c_dep->add_option("--fail-wrist", dep.fail_wrist, "Blank the wrist camera for ticks START:END");
    c_dep->add_option("--seed", dep.seed, "Random seed")->capture_default_str();
    c_dep->add_option("--config", dep.config, "key=value configuration file");

    auto* diagnose = app.add_subcommand("diagnose", "Vision influence and failure-mode analysis");
    diagnose->require_subcommand(1);

    DiagnoseVision dv;
    auto* c_dv = diagnose->add_subcommand("vision", "Action change when images are zeroed");
    c_dv->add_option("--checkpoint", dv.checkpoint, "Checkpoint file")->required();
    c_dv->add_option("--episodes", dv.episodes_dir, "Dataset directory")->required();
    c_dv->add_option("--split", dv.split, "val, train or all")->capture_default_str();
    c_dv->add_option("--stride", dv.stride, "Use every n-th frame")->capture_default_str();
    c_dv->add_option("--label", dv.label, "Configuration label in the report");
    c_dv->add_option("--out", dv.out_csv, "Summary CSV path (detail written beside it)")->required();
    c_dv->add_option("--seed", unused_seed, "Accepted for uniformity; the analysis is deterministic");

    DiagnoseOscillation dosc;
    auto* c_do = diagnose->add_subcommand("oscillation", "Approach/retreat reversals in deployment traces");
    c_do->add_option("--run", dosc.run_dir, "deploy-sim output directory")->required();
    c_do->add_option("--window", dosc.window, "Moving-average window (ticks)")->capture_default_str();
    c_do->add_option("--threshold", dosc.threshold, "Reversals that flag an episode")->capture_default_str();
    c_do->add_option("--out", dosc.out_csv, "CSV path")->required();
    c_do->add_option("--seed", unused_seed, "Accepted for uniformity; the analysis is deterministic");

    ReportCmd rep;
    auto* c_rep = app.add_subcommand("report", "Vision-influence table across several checkpoints");
    c_rep->add_option("--episodes", rep.episodes_dir, "Dataset directory")->required();
    c_rep->add_option("--run", rep.runs, "LABEL=CHECKPOINT, repeatable")->required();
    c_rep->add_option("--split", rep.split, "val, train or all")->capture_default_str();
    c_rep->add_option("--stride", rep.stride, "Use every n-th frame")->capture_default_str();
    c_rep->add_option("--out", rep.out_csv, "Summary CSV path (detail written beside it)")->required();
    c_rep->add_option("--seed", unused_seed, "Accepted for uniformity; the analysis is deterministic");

    std::vector<std::string> argv_store{"vla"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (c_gen->parsed()) gen.run(ctx);
        else if (c_stats->parsed()) stats.run(ctx);
        else if (c_val->parsed()) return validate.run(ctx);
        else if (c_train->parsed()) tr.run(ctx);
        else if (c_eval->parsed()) ev.run(ctx);
        else if (c_q->parsed()) q.run(ctx);
        else if (c_dep->parsed()) dep.run(ctx);
        else if (c_dv->parsed()) dv.run(ctx);
        else if (c_do->parsed()) dosc.run(ctx);
        else if (c_rep->parsed()) rep.run(ctx);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomain;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitDomain;
    }
    return kExitOk;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace vla::cli
