#include "vla/diag.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "vla/binary_io.hpp"
#include "vla/error.hpp"

namespace vla::diag {

const char* label_name(InfluenceLabel l) {
    switch (l) {
        case InfluenceLabel::Weak: return "Weak";
        case InfluenceLabel::Moderate: return "Moderate";
        case InfluenceLabel::Strong: return "Strong";
        case InfluenceLabel::VeryStrong: return "VeryStrong";
    }
    return "?";
}

InfluenceLabel classify_influence(double delta) {
    if (!(delta >= 0)) throw RangeError("classify_influence: delta must be non-negative");
    if (delta < 1.0) return InfluenceLabel::Weak;
    if (delta <= 3.0) return InfluenceLabel::Moderate;
    if (delta <= 6.0) return InfluenceLabel::Strong;
    return InfluenceLabel::VeryStrong;
}

policy::Observation mask_images(const policy::Observation& obs) {
    policy::Observation m = obs;
    if (m.top) std::fill(m.top->data.begin(), m.top->data.end(), 0.0);
    if (m.wrist) std::fill(m.wrist->data.begin(), m.wrist->data.end(), 0.0);
    return m;
}

VisionInfluenceReport vision_influence(const policy::PolicyConfig& pcfg, const policy::PolicyParams& params,
                                       const std::vector<policy::Observation>& steps, const JointLimits& limits) {
    if (steps.empty()) throw InputError("vision_influence: episode has no steps");
    VisionInfluenceReport r;
    double norm_sum = 0.0;
    for (const auto& obs : steps) {
        const auto with = denormalize_action(policy::forward(obs, pcfg, params).front(), limits);
        const auto without = denormalize_action(policy::forward(mask_images(obs), pcfg, params).front(), limits);
        double d2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < kActionDim; ++i) {
            d2 += (with[i] - without[i]) * (with[i] - without[i]);
            n2 += with[i] * with[i];
        }
        r.step_diffs.push_back(std::sqrt(d2));
        norm_sum += std::sqrt(n2);
    }
    const double n = static_cast<double>(steps.size());
    r.delta = std::accumulate(r.step_diffs.begin(), r.step_diffs.end(), 0.0) / n;
    const double mean_norm = norm_sum / n;
    r.percent = mean_norm > 0 ? 100.0 * r.delta / mean_norm : 0.0;
    r.label = classify_influence(r.delta);
    return r;
}

VisionInfluenceReport vision_influence(const policy::PolicyConfig& pcfg, const policy::PolicyParams& params,
                                       const train::EpisodeData& episode, std::uint32_t stride,
                                       const JointLimits& limits) {
    if (stride < 1) throw RangeError("vision_influence: stride must be >= 1");
    std::vector<policy::Observation> steps;
    for (std::size_t f = 0; f < episode.episode.size(); f += stride) steps.push_back(train::make_observation(episode, f));
    return vision_influence(pcfg, params, steps, limits);
}

OscillationReport detect_oscillation(const std::vector<double>& d, bool success, const OscillationConfig& cfg) {
    if (cfg.window < 1) throw RangeError("detect_oscillation: window must be >= 1");
    if (d.size() < cfg.window) throw InputError("detect_oscillation: trace shorter than the smoothing window");
    std::vector<double> avg;
    double run = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        run += d[i];
        if (i >= cfg.window) run -= d[i - cfg.window];
        if (i + 1 >= cfg.window) avg.push_back(run / static_cast<double>(cfg.window));
    }
    OscillationReport r;
    int last = 0;
    for (std::size_t i = 1; i < avg.size(); ++i) {
        const double dv = avg[i] - avg[i - 1];
        const int s = dv > 1e-9 ? 1 : (dv < -1e-9 ? -1 : 0);
        if (s == 0) continue;
        if (last != 0 && s != last) {
            ++r.reversals;
            r.reversal_ticks.push_back(i - 1 + cfg.window - 1);
        }
        last = s;
    }
    r.oscillatory = !success && r.reversals >= cfg.threshold;
    return r;
}

OscillationReport detect_oscillation(const runtime::EpisodeLog& log, const OscillationConfig& cfg) {
    std::vector<double> d;
    d.reserve(log.ticks.size());
    for (const auto& t : log.ticks) d.push_back(t.distance_to_button);
    return detect_oscillation(d, log.success, cfg);
}

InfluenceSummary summarize(const InfluenceRun& run) {
    InfluenceSummary s;
    s.config = run.config;
    s.episodes = run.episodes.size();
    if (s.episodes == 0) return s;
    double sum = 0.0;
    for (const auto& e : run.episodes) sum += e.delta;
    s.delta_mean = sum / static_cast<double>(s.episodes);
    if (s.episodes > 1) {
        double ss = 0.0;
        for (const auto& e : run.episodes) ss += (e.delta - s.delta_mean) * (e.delta - s.delta_mean);
        s.delta_std = std::sqrt(ss / static_cast<double>(s.episodes - 1));
    }
    s.label = classify_influence(s.delta_mean);
    return s;
}

std::string summary_csv(const std::vector<InfluenceRun>& runs) {
    std::ostringstream o;
    o << "config,episodes,delta_mean,delta_std,label\n";
    char buf[64];
    for (const auto& run : runs) {
        const auto s = summarize(run);
        std::snprintf(buf, sizeof buf, ",%zu,%.6g,%.6g,", s.episodes, s.delta_mean, s.delta_std);
        o << s.config << buf << label_name(s.label) << "\n";
    }
    return o.str();
}

std::string detail_csv(const std::vector<InfluenceRun>& runs) {
    std::ostringstream o;
    o << "config,episode,delta,percent,label\n";
    char buf[64];
    for (const auto& run : runs) {
        for (std::size_t i = 0; i < run.episodes.size(); ++i) {
            const auto& e = run.episodes[i];
            std::snprintf(buf, sizeof buf, ",%zu,%.6g,%.6g,", i, e.delta, e.percent);
            o << run.config << buf << label_name(e.label) << "\n";
        }
    }
    return o.str();
}

void emit_report(const std::vector<InfluenceRun>& runs, const std::filesystem::path& path) {
    auto detail = path;
    detail.replace_filename(path.stem().string() + "_episodes.csv");
    io::write_text(path, summary_csv(runs));
    io::write_text(detail, detail_csv(runs));
}

}  // namespace vla::diag
