#include "vla/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vla/binary_io.hpp"
#include "vla/error.hpp"
#include "vla/expert.hpp"
#include "vla/kv_config.hpp"

namespace fs = std::filesystem;

namespace vla::data {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string id_str(std::uint32_t id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06u", id);
    return buf;
}

struct FramesHeader {
    std::uint32_t width = 0, height = 0, channels = 0, count = 0;
};

std::vector<std::uint8_t> encode_frames(const std::vector<sim::Rgb8Image>& frames, std::uint32_t w, std::uint32_t h) {
    io::ByteWriter out;
    out.u32(w);
    out.u32(h);
    out.u32(3);
    out.u32(static_cast<std::uint32_t>(frames.size()));
    for (const auto& f : frames) {
        if (f.width != w || f.height != h) throw ShapeError("write_episode: frame size differs within a view");
        out.bytes(f.pixels);
    }
    return out.take();
}

FramesHeader read_frames_header(io::ByteReader& r) {
    FramesHeader h;
    h.width = r.u32();
    h.height = r.u32();
    h.channels = r.u32();
    h.count = r.u32();
    return h;
}

std::vector<sim::Rgb8Image> decode_frames(const fs::path& path) {
    const auto bytes = io::read_file(path);
    io::ByteReader r(bytes, path.string());
    const FramesHeader h = read_frames_header(r);
    if (h.channels != 3) throw FormatError(path.string() + ": expected 3 channels, header says " + std::to_string(h.channels));
    const std::size_t frame_bytes = std::size_t(h.width) * h.height * 3;
    if (r.remaining() != frame_bytes * h.count) {
        throw FormatError(path.string() + ": payload size does not match header");
    }
    std::vector<sim::Rgb8Image> frames;
    frames.reserve(h.count);
    for (std::uint32_t i = 0; i < h.count; ++i) {
        sim::Rgb8Image img;
        img.width = h.width;
        img.height = h.height;
        auto b = r.bytes(frame_bytes);
        img.pixels.assign(b.begin(), b.end());
        frames.push_back(std::move(img));
    }
    return frames;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string DatasetManifest::to_text() const {
    std::ostringstream o;
    o << "format_version=" << version << "\n";
    o << "fps=" << fmt_double(fps) << "\n";
    o << "top_width=" << top_width << "\n";
    o << "top_height=" << top_height << "\n";
    o << "wrist_width=" << wrist_width << "\n";
    o << "wrist_height=" << wrist_height << "\n";
    o << "episode_count=" << episodes.size() << "\n";
    for (const auto& e : episodes) {
        const std::string k = "episode." + id_str(e.id) + ".";
        o << k << "task=" << e.task << "\n";
        o << k << "frames=" << e.frames << "\n";
        o << k << "success=" << (e.success ? 1 : 0) << "\n";
        o << k << "start_time=" << fmt_double(e.start_time) << "\n";
        o << k << "end_time=" << fmt_double(e.end_time) << "\n";
    }
    return o.str();
}

DatasetManifest DatasetManifest::parse(const std::string& text, const std::string& context) {
    const auto kv = KeyValues::parse(text, context);
    DatasetManifest m;
    m.version = static_cast<std::uint32_t>(kv.get_int("format_version"));
    if (m.version != kFormatVersion) throw FormatError(context + ": unsupported format version " + std::to_string(m.version));
    m.fps = kv.get_double("fps");
    m.top_width = static_cast<std::uint32_t>(kv.get_int("top_width"));
    m.top_height = static_cast<std::uint32_t>(kv.get_int("top_height"));
    m.wrist_width = static_cast<std::uint32_t>(kv.get_int("wrist_width"));
    m.wrist_height = static_cast<std::uint32_t>(kv.get_int("wrist_height"));
    const auto n = kv.get_int("episode_count");
    if (n < 0) throw FormatError(context + ": negative episode count");
    // Episodes are listed by id; a gap surfaces as a missing key.
    for (long long i = 0; i < n; ++i) {
        EpisodeMeta e;
        e.id = static_cast<std::uint32_t>(i);
        const std::string k = "episode." + id_str(e.id) + ".";
        e.task = kv.get(k + "task");
        e.frames = static_cast<std::uint32_t>(kv.get_int(k + "frames"));
        e.success = kv.get_bool(k + "success");
        e.start_time = kv.get_double(k + "start_time");
        e.end_time = kv.get_double(k + "end_time");
        m.episodes.push_back(std::move(e));
    }
    return m;
}

fs::path manifest_path(const fs::path& dir) { return dir / "manifest.txt"; }

fs::path joints_path(const fs::path& dir, std::uint32_t id) {
    return dir / ("episode_" + id_str(id) + ".joints");
}

fs::path frames_path(const fs::path& dir, std::uint32_t id, sim::View view) {
    return dir / ("episode_" + id_str(id) + (view == sim::View::Top ? ".top.frames" : ".wrist.frames"));
}

DatasetManifest read_manifest(const fs::path& dir) {
    const fs::path p = manifest_path(dir);
    if (!fs::exists(p)) throw FormatError(p.string() + ": manifest missing");
    return DatasetManifest::parse(io::read_text(p), p.string());
}

void write_manifest(const fs::path& dir, const DatasetManifest& m) { io::write_text(manifest_path(dir), m.to_text()); }

void write_episode(const fs::path& dir, const Episode& ep, EpisodeMeta meta, DatasetManifest& manifest) {
    const std::size_t n = ep.size();
    if (n == 0) throw InputError("write_episode: empty episode");
    if (ep.states.size() != n || ep.actions.size() != n || ep.top.size() != n || ep.wrist.size() != n) {
        throw ShapeError("write_episode: per-frame arrays differ in length");
    }
    fs::create_directories(dir);
    io::ByteWriter j;
    j.u32(static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i) {
        j.f64(ep.timestamps[i]);
        for (double v : ep.states[i].v) j.f64(v);
        for (double v : ep.actions[i].v) j.f64(v);
    }
    io::write_file(joints_path(dir, meta.id), j.data());
    io::write_file(frames_path(dir, meta.id, sim::View::Top), encode_frames(ep.top, manifest.top_width, manifest.top_height));
    io::write_file(frames_path(dir, meta.id, sim::View::Wrist),
                   encode_frames(ep.wrist, manifest.wrist_width, manifest.wrist_height));

    meta.frames = static_cast<std::uint32_t>(n);
    meta.start_time = ep.timestamps.front();
    meta.end_time = ep.timestamps.back();
    if (meta.id < manifest.episodes.size()) {
        manifest.episodes[meta.id] = meta;
    } else if (meta.id == manifest.episodes.size()) {
        manifest.episodes.push_back(meta);
    } else {
        throw RangeError("write_episode: episode ids must be contiguous (next id is " +
                         std::to_string(manifest.episodes.size()) + ")");
    }
    write_manifest(dir, manifest);
}

Episode read_episode(const fs::path& dir, std::uint32_t id) { return read_episode(dir, read_manifest(dir), id); }

Episode read_episode(const fs::path& dir, const DatasetManifest& m, std::uint32_t id) {
    if (id >= m.episodes.size()) {
        throw RangeError("read_episode: id " + std::to_string(id) + " beyond manifest (" +
                         std::to_string(m.episodes.size()) + " episodes)");
    }
    const fs::path jp = joints_path(dir, id);
    if (!fs::exists(jp)) throw FormatError(jp.string() + ": missing joints file");
    const auto bytes = io::read_file(jp);
    io::ByteReader r(bytes, jp.string());
    const std::uint32_t n = r.u32();
    if (r.remaining() != std::size_t(n) * 13 * 8) throw FormatError(jp.string() + ": payload size does not match count");
    Episode ep;
    ep.timestamps.resize(n);
    ep.states.resize(n);
    ep.actions.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        ep.timestamps[i] = r.f64();
        for (auto& v : ep.states[i].v) v = r.f64();
        for (auto& v : ep.actions[i].v) v = r.f64();
    }
    for (auto view : {sim::View::Top, sim::View::Wrist}) {
        const fs::path fp = frames_path(dir, id, view);
        if (!fs::exists(fp)) throw FormatError(fp.string() + ": missing frames file");
        auto frames = decode_frames(fp);
        if (frames.size() != n) throw FormatError(fp.string() + ": frame count differs from joints file");
        (view == sim::View::Top ? ep.top : ep.wrist) = std::move(frames);
    }
    return ep;
}

ValidationReport validate_dataset(const fs::path& dir, const JointLimits& limits) {
    if (!fs::is_directory(dir)) throw IoError("validate_dataset: cannot read directory " + dir.string());
    ValidationReport rep;
    auto add = [&](std::optional<std::uint32_t> ep, std::optional<std::size_t> frame, std::string msg) {
        rep.violations.push_back(Violation{ep, frame, std::move(msg)});
    };

    DatasetManifest m;
    try {
        m = read_manifest(dir);
    } catch (const Error& e) {
        add(std::nullopt, std::nullopt, e.what());
        return rep;
    }
    if (!(m.fps > 0)) add(std::nullopt, std::nullopt, "fps must be positive");

    for (std::size_t idx = 0; idx < m.episodes.size(); ++idx) {
        const auto& meta = m.episodes[idx];
        const std::uint32_t id = meta.id;
        if (meta.frames == 0) add(id, std::nullopt, "manifest frame count is zero");

        std::optional<std::uint32_t> joints_n, top_n, wrist_n;
        std::vector<double> ts;
        std::vector<JointVector> states, actions;
        try {
            const auto bytes = io::read_file(joints_path(dir, id));
            io::ByteReader r(bytes, joints_path(dir, id).string());
            const std::uint32_t n = r.u32();
            if (r.remaining() != std::size_t(n) * 13 * 8) throw FormatError("joints payload size does not match count");
            joints_n = n;
            for (std::uint32_t i = 0; i < n; ++i) {
                ts.push_back(r.f64());
                JointVector s, a;
                for (auto& v : s.v) v = r.f64();
                for (auto& v : a.v) v = r.f64();
                states.push_back(s);
                actions.push_back(a);
            }
        } catch (const Error& e) {
            add(id, std::nullopt, std::string("joints file: ") + e.what());
        }

        for (auto view : {sim::View::Top, sim::View::Wrist}) {
            const fs::path fp = frames_path(dir, id, view);
            const bool top = view == sim::View::Top;
            try {
                const auto bytes = io::read_file(fp);
                io::ByteReader r(bytes, fp.string());
                const FramesHeader h = read_frames_header(r);
                const std::uint32_t ew = top ? m.top_width : m.wrist_width;
                const std::uint32_t eh = top ? m.top_height : m.wrist_height;
                if (h.width != ew || h.height != eh || h.channels != 3) {
                    add(id, std::nullopt, fp.filename().string() + ": header geometry does not match manifest");
                } else if (r.remaining() != std::size_t(h.width) * h.height * 3 * h.count) {
                    add(id, std::nullopt, fp.filename().string() + ": payload size does not match header");
                }
                (top ? top_n : wrist_n) = h.count;
            } catch (const Error& e) {
                add(id, std::nullopt, e.what());
            }
        }

        const bool agree = joints_n && top_n && wrist_n && *joints_n == meta.frames && *top_n == meta.frames &&
                           *wrist_n == meta.frames;
        if (joints_n && top_n && wrist_n && !agree) {
            add(id, std::nullopt,
                "frame count disagreement: manifest=" + std::to_string(meta.frames) + " joints=" +
                    std::to_string(*joints_n) + " top=" + std::to_string(*top_n) + " wrist=" + std::to_string(*wrist_n));
        }

        for (std::size_t i = 1; i < ts.size(); ++i) {
            if (!(ts[i] > ts[i - 1])) add(id, i, "timestamp not strictly increasing");
        }
        if (ts.size() >= 2 && m.fps > 0) {
            const double mean_dt = (ts.back() - ts.front()) / static_cast<double>(ts.size() - 1);
            const double expect = 1.0 / m.fps;
            if (std::abs(mean_dt - expect) > 0.1 * expect) {
                add(id, std::nullopt, "mean frame spacing " + std::to_string(mean_dt) + " s deviates >10% from 1/fps");
            }
        }
        for (std::size_t i = 0; i < states.size(); ++i) {
            if (!states[i].within(limits)) add(id, i, "joint state outside limits");
            if (!actions[i].within(limits)) add(id, i, "commanded action outside limits");
        }
    }
    return rep;
}

std::optional<std::pair<Episode, EpisodeMeta>> generate_episode(const sim::SimConfig& base_cfg, double fps,
                                                                std::uint64_t seed, const std::string& task) {
    sim::SimConfig cfg = base_cfg;
    cfg.tick_hz = fps;
    sim::SimState state = sim::reset(cfg, seed);
    std::mt19937_64 rng(derive_seed(seed, 1));
    const auto plan = ExpertTrajectory::plan(state, cfg, ExpertTiming{}, rng);
    if (!plan) return std::nullopt;

    const auto frames = static_cast<std::size_t>(std::lround(plan->duration() * fps));
    Episode ep;
    ep.timestamps.reserve(frames);
    for (std::size_t k = 0; k < frames; ++k) {
        auto [top, wrist] = sim::render_views(state, cfg, rng);
        ep.timestamps.push_back(static_cast<double>(k) / fps);
        ep.states.push_back(sim::observe_joints(state, cfg, rng));
        const JointVector cmd = clamp_joints(plan->at(static_cast<double>(k + 1) / fps), cfg.limits);
        ep.actions.push_back(cmd);
        ep.top.push_back(std::move(top));
        ep.wrist.push_back(std::move(wrist));
        state = sim::step(state, cmd, cfg);
    }
    EpisodeMeta meta;
    meta.task = task;
    meta.frames = static_cast<std::uint32_t>(frames);
    meta.success = sim::check_success(state);
    meta.start_time = ep.timestamps.front();
    meta.end_time = ep.timestamps.back();
    return std::make_pair(std::move(ep), meta);
}

DatasetManifest generate_demos(const fs::path& dir, const GenerateOptions& opts, sim::SimConfig sim_cfg) {
    if (opts.episodes < 1) throw InputError("generate_demos: need at least one episode");
    sim_cfg.validate();
    fs::create_directories(dir);
    DatasetManifest m;
    m.fps = opts.fps;
    m.top_width = sim_cfg.top_width;
    m.top_height = sim_cfg.top_height;
    m.wrist_width = sim_cfg.wrist_width;
    m.wrist_height = sim_cfg.wrist_height;
    for (std::uint32_t i = 0; i < opts.episodes; ++i) {
        std::optional<std::pair<Episode, EpisodeMeta>> ep;
        for (std::uint32_t attempt = 0; attempt < opts.max_resamples && !ep; ++attempt) {
            ep = generate_episode(sim_cfg, opts.fps, derive_seed(opts.seed, std::uint64_t(i) * 1000 + attempt), opts.task);
        }
        if (!ep) throw RangeError("generate_demos: no reachable button after " + std::to_string(opts.max_resamples) + " samples");
        ep->second.id = i;
        write_episode(dir, ep->first, ep->second, m);
    }
    return m;
}

DatasetStats compute_stats(const std::vector<Episode>& episodes) {
    if (episodes.empty()) throw InputError("dataset_stats: empty dataset");
    DatasetStats st;
    st.episodes = episodes.size();
    std::array<double, kActionDim> ms{}, ma{}, m2s{}, m2a{};
    for (std::size_t i = 0; i < kActionDim; ++i) {
        st.states.min[i] = st.actions.min[i] = std::numeric_limits<double>::infinity();
        st.states.max[i] = st.actions.max[i] = -std::numeric_limits<double>::infinity();
    }
    std::size_t n = 0;
    for (const auto& ep : episodes) {
        const auto bin = static_cast<std::size_t>(static_cast<double>(ep.size()) / st.histogram_bin);
        if (st.length_histogram.size() <= bin) st.length_histogram.resize(bin + 1, 0);
        ++st.length_histogram[bin];
        for (std::size_t f = 0; f < ep.size(); ++f) {
            ++n;
            for (std::size_t i = 0; i < kActionDim; ++i) {
                // Welford update
                const double s = ep.states[f][i];
                const double ds = s - ms[i];
                ms[i] += ds / static_cast<double>(n);
                m2s[i] += ds * (s - ms[i]);
                const double a = ep.actions[f][i];
                const double da = a - ma[i];
                ma[i] += da / static_cast<double>(n);
                m2a[i] += da * (a - ma[i]);
                st.states.min[i] = std::min(st.states.min[i], s);
                st.states.max[i] = std::max(st.states.max[i], s);
                st.actions.min[i] = std::min(st.actions.min[i], a);
                st.actions.max[i] = std::max(st.actions.max[i], a);
            }
        }
    }
    if (n == 0) throw InputError("dataset_stats: dataset has no frames");
    st.frames = n;
    for (std::size_t i = 0; i < kActionDim; ++i) {
        st.states.mean[i] = ms[i];
        st.actions.mean[i] = ma[i];
        st.states.stddev[i] = std::sqrt(m2s[i] / static_cast<double>(n));
        st.actions.stddev[i] = std::sqrt(m2a[i] / static_cast<double>(n));
    }
    return st;
}

DatasetStats dataset_stats(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("dataset_stats: cannot read directory " + dir.string());
    const auto m = read_manifest(dir);
    if (m.episodes.empty()) throw InputError("dataset_stats: empty dataset");
    std::vector<Episode> eps;
    for (const auto& e : m.episodes) eps.push_back(read_episode(dir, m, e.id));
    return compute_stats(eps);
}

}  // namespace vla::data
