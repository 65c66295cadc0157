#include <fstream>
#include <regex>

#include "doctest.h"
#include "test_util.hpp"
#include "vla/binary_io.hpp"
#include "vla/data.hpp"
#include "vla/error.hpp"

using namespace vla;
using namespace vla::data;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> directory_bytes(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    io::ByteWriter w;
    for (const auto& f : files) {
        w.str(f.filename().string());
        w.bytes(io::read_file(f));
    }
    return w.take();
}

Episode tiny_episode(std::size_t n, double fps) {
    Episode e;
    for (std::size_t i = 0; i < n; ++i) {
        e.timestamps.push_back(static_cast<double>(i) / fps);
        JointVector s;
        s[0] = static_cast<double>(i);
        s[kGripper] = 0.25;
        e.states.push_back(s);
        JointVector a = s;
        a[1] = -10.0;
        e.actions.push_back(a);
        sim::Rgb8Image top(64, 64), wrist(32, 32);
        top.pixels[i % top.pixels.size()] = static_cast<std::uint8_t>(i + 1);
        wrist.pixels[7] = 200;
        e.top.push_back(top);
        e.wrist.push_back(wrist);
    }
    return e;
}

}  // namespace

TEST_CASE("episode write/read round trip is byte exact") {
    const auto dir = test::temp_dir("data_rt");
    DatasetManifest m;
    const auto ep = tiny_episode(12, 30.0);
    EpisodeMeta meta;
    meta.id = 0;
    meta.frames = 12;
    meta.success = true;
    meta.end_time = 11.0 / 30.0;
    write_episode(dir, ep, meta, m);
    const auto real = test::small_dataset(1, 3)[0].episode;
    EpisodeMeta meta1 = meta;
    meta1.id = 1;
    meta1.frames = static_cast<std::uint32_t>(real.size());
    write_episode(dir, real, meta1, m);

    CHECK(read_episode(dir, 0) == ep);
    CHECK(read_episode(dir, 1) == real);
    CHECK(read_manifest(dir) == m);
    CHECK(DatasetManifest::parse(m.to_text(), "mem") == m);
    CHECK_THROWS_AS(read_episode(dir, 2), RangeError);

    const auto frame_bytes = io::read_file(frames_path(dir, 0, sim::View::Top));
    io::ByteReader hdr(frame_bytes);
    CHECK(hdr.u32() == 64);
    CHECK(hdr.u32() == 64);
    CHECK(hdr.u32() == 3);
    CHECK(hdr.u32() == 12);
    CHECK(joints_path(dir, 1).filename() == "episode_000001.joints");
    CHECK(frames_path(dir, 1, sim::View::Wrist).filename() == "episode_000001.wrist.frames");

    fs::remove(frames_path(dir, 1, sim::View::Wrist));
    try {
        read_episode(dir, 1);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("episode_000001.wrist.frames") != std::string::npos);
    }
    CHECK_THROWS_AS(read_manifest(test::temp_dir("data_empty")), FormatError);
}

TEST_CASE("generator scale, validity and determinism") {
    const auto a = test::temp_dir("gen_a");
    const auto b = test::temp_dir("gen_b");
    GenerateOptions opts;
    opts.episodes = 20;
    opts.seed = 4;
    const auto m = generate_demos(a, opts);
    generate_demos(b, opts);
    CHECK(m.episodes.size() == 20);
    std::size_t frames = 0;
    for (const auto& e : m.episodes) {
        frames += e.frames;
        CHECK(e.success);
        CHECK(e.task == kDefaultTask);
    }
    CHECK(frames >= 0.8 * 5944);
    CHECK(frames <= 1.2 * 5944);
    CHECK(validate_dataset(a).ok());
    CHECK(directory_bytes(a) == directory_bytes(b));

    const auto ep = read_episode(a, 0);
    const double span = ep.timestamps.back() - ep.timestamps.front();
    CHECK(std::abs(span - (ep.size() - 1) / 30.0) < 1e-9);
    const auto lim = JointLimits::so101();
    for (const auto& e : m.episodes) {
        const auto x = read_episode(a, e.id);
        for (std::size_t i = 0; i < x.size(); ++i) {
            REQUIRE(x.states[i].within(lim));
            REQUIRE(x.actions[i].within(lim));
            if (i > 0) {
                for (std::size_t j = 0; j < kArmJoints; ++j) {
                    REQUIRE(std::abs(x.states[i][j] - x.states[i - 1][j]) <= lim.max_vel_deg_s[j] / 30.0 + 1e-9);
                }
            }
        }
    }

    opts.seed = 5;
    const auto c = test::temp_dir("gen_c");
    generate_demos(c, opts);
    CHECK_FALSE(directory_bytes(a) == directory_bytes(c));
}

TEST_CASE("297 frames at 30 fps span about 9.9 s") {
    const double fps = 30.0;
    CHECK(std::abs(297.0 / fps - 9.9) < 1e-12);
    const auto ds = test::small_dataset(5, 1);
    for (const auto& e : ds) {
        const double secs = static_cast<double>(e.episode.size()) / fps;
        CHECK(secs > 9.9 * 0.8);
        CHECK(secs < 9.9 * 1.2);
    }
}

TEST_CASE("validate_dataset fault injection") {
    const auto dir = test::temp_dir("validate");
    GenerateOptions opts;
    opts.episodes = 3;
    opts.seed = 2;
    const auto m = generate_demos(dir, opts);
    REQUIRE(validate_dataset(dir).ok());

    SUBCASE("manifest frame count") {
        std::string text = io::read_text(manifest_path(dir));
        const std::string key = "episode.000001.frames=" + std::to_string(m.episodes[1].frames);
        const auto pos = text.find(key);
        REQUIRE(pos != std::string::npos);
        text.replace(pos, key.size(), "episode.000001.frames=" + std::to_string(m.episodes[1].frames - 1));
        io::write_text(manifest_path(dir), text);
        const auto rep = validate_dataset(dir);
        REQUIRE(rep.violations.size() == 1);
        CHECK(rep.violations[0].episode == 1u);
    }
    SUBCASE("out-of-limit joint") {
        auto ep = read_episode(dir, 2);
        ep.states[17][1] = 120.0;
        DatasetManifest mm = read_manifest(dir);
        write_episode(dir, ep, mm.episodes[2], mm);
        const auto rep = validate_dataset(dir);
        REQUIRE(rep.violations.size() == 1);
        CHECK(rep.violations[0].episode == 2u);
        CHECK(rep.violations[0].frame == 17u);
    }
    SUBCASE("timestamps") {
        auto ep = read_episode(dir, 0);
        ep.timestamps[5] = ep.timestamps[4];
        DatasetManifest mm = read_manifest(dir);
        write_episode(dir, ep, mm.episodes[0], mm);
        const auto rep = validate_dataset(dir);
        REQUIRE(rep.violations.size() == 1);
        CHECK(rep.violations[0].frame == 5u);
    }
    SUBCASE("missing directory") {
        CHECK_THROWS_AS(validate_dataset(dir / "nope"), IoError);
    }
}

TEST_CASE("dataset statistics") {
    std::vector<Episode> eps{tiny_episode(40, 30.0), tiny_episode(70, 30.0)};
    const auto s = compute_stats(eps);
    CHECK(s.frames == 110);
    CHECK(s.episodes == 2);
    CHECK(s.actions.stddev[1] == 0.0);
    CHECK(s.actions.mean[1] == -10.0);
    CHECK(s.states.stddev[kGripper] == 0.0);

    double sum = 0.0, sq = 0.0;
    for (const auto& e : eps) for (const auto& st : e.states) sum += st[0];
    const double mean = sum / 110.0;
    for (const auto& e : eps) for (const auto& st : e.states) sq += (st[0] - mean) * (st[0] - mean);
    CHECK(s.states.mean[0] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(s.states.stddev[0] == doctest::Approx(std::sqrt(sq / 110.0)).epsilon(1e-12));
    CHECK(s.states.min[0] == 0.0);
    CHECK(s.states.max[0] == 69.0);
    REQUIRE(s.length_histogram.size() == 3);
    CHECK(s.length_histogram[1] == 1);
    CHECK(s.length_histogram[2] == 1);
    CHECK_THROWS_AS(compute_stats({}), InputError);

    const auto dir = test::temp_dir("stats");
    GenerateOptions opts;
    opts.episodes = 2;
    generate_demos(dir, opts);
    const auto ds = dataset_stats(dir);
    const auto lim = JointLimits::so101();
    for (std::size_t j = 0; j < kActionDim; ++j) {
        CHECK(ds.states.min[j] >= lim.lower(j));
        CHECK(ds.states.max[j] <= lim.upper(j));
    }
}

TEST_CASE("derive_seed spreads indices") {
    CHECK(derive_seed(1, 0) == derive_seed(1, 0));
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}
