#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "evtrk/event.hpp"
#include "evtrk/representation.hpp"
#include "evtrk/tensor.hpp"

using namespace evtrk;

namespace {

Event ev(int x, int y, std::int64_t t, int p) {
    Event e;
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.t = t;
    e.polarity = static_cast<std::int8_t>(p);
    return e;
}

std::vector<Event> random_window(Rng& rng, int w, int h, std::int64_t t0, std::int64_t win,
                                 int count) {
    std::vector<Event> events;
    for (int i = 0; i < count; ++i)
        events.push_back(ev(static_cast<int>(rng.uniform_int(0, w - 1)),
                            static_cast<int>(rng.uniform_int(0, h - 1)),
                            t0 + rng.uniform_int(0, win - 1), rng.uniform(0, 1) < 0.5 ? -1 : 1));
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    return events;
}

// Brute-force per-pixel scan: for every (polarity, bin, pixel) find the last
// event by (t, slice order) and normalize its within-bin timestamp.
PatchTensor sbt_max_oracle(std::span<const Event> slice, std::int64_t t0,
                           const RepresentationConfig& cfg, int cx, int cy) {
    int side = 2 * cfg.patch_radius + 1;
    int bins = cfg.bins_per_polarity;
    PatchTensor out(2 * bins, side, side, ChannelSemantics::sbt_max);
    double bin_w = static_cast<double>(cfg.window_us) / bins;
    for (int ch = 0; ch < 2 * bins; ++ch) {
        int pol = ch < bins ? 1 : -1;
        int bin = ch % bins;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                int sx = cx - cfg.patch_radius + x;
                int sy = cy - cfg.patch_radius + y;
                double best = 0.0;
                std::int64_t best_t = INT64_MIN;
                for (const Event& e : slice) {
                    if (e.x != sx || e.y != sy || e.polarity != pol) continue;
                    std::int64_t dt = e.t - t0;
                    if (dt < 0 || dt >= cfg.window_us) continue;
                    int b = std::min(bins - 1, static_cast<int>(dt / bin_w));
                    if (b != bin) continue;
                    if (e.t >= best_t) {  // later in slice wins ties
                        best_t = e.t;
                        best = (dt - b * bin_w) / bin_w;
                    }
                }
                out.at(ch, y, x) = best;
            }
    }
    return out;
}

PatchTensor sbt_oracle(std::span<const Event> slice, std::int64_t t0,
                       const RepresentationConfig& cfg, int cx, int cy, bool normalize) {
    int side = 2 * cfg.patch_radius + 1;
    int bins = cfg.bins_per_polarity;
    PatchTensor out(2 * bins, side, side,
                    normalize ? ChannelSemantics::sbt : ChannelSemantics::sbt_no_norm);
    double bin_w = static_cast<double>(cfg.window_us) / bins;
    std::int64_t total = 0;
    for (const Event& e : slice) {
        std::int64_t dt = e.t - t0;
        if (dt < 0 || dt >= cfg.window_us) continue;
        int px = e.x - (cx - cfg.patch_radius), py = e.y - (cy - cfg.patch_radius);
        if (px < 0 || py < 0 || px >= side || py >= side) continue;
        int b = std::min(bins - 1, static_cast<int>(dt / bin_w));
        out.at((e.polarity > 0 ? 0 : bins) + b, py, px) += 1.0;
        ++total;
    }
    if (normalize && total > 0)
        for (double& v : out.data) v /= static_cast<double>(total);
    return out;
}

PatchTensor voxel_oracle(std::span<const Event> slice, std::int64_t t0,
                         const RepresentationConfig& cfg, int cx, int cy) {
    int side = 2 * cfg.patch_radius + 1;
    int bins = cfg.bins_per_polarity;
    PatchTensor out(bins, side, side, ChannelSemantics::voxel_grid);
    for (const Event& e : slice) {
        std::int64_t dt = e.t - t0;
        if (dt < 0 || dt >= cfg.window_us) continue;
        int px = e.x - (cx - cfg.patch_radius), py = e.y - (cy - cfg.patch_radius);
        if (px < 0 || py < 0 || px >= side || py >= side) continue;
        double p = e.polarity > 0 ? 1.0 : -1.0;
        double ts = static_cast<double>(dt) / static_cast<double>(cfg.window_us) * (bins - 1);
        int k0 = std::min(bins - 2, static_cast<int>(std::floor(ts)));
        out.at(k0, py, px) += p * (1.0 - (ts - k0));
        out.at(k0 + 1, py, px) += p * (ts - k0);
    }
    return out;
}

double max_abs_diff(const PatchTensor& a, const PatchTensor& b) {
    REQUIRE(a.data.size() == b.data.size());
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("sbt_max single event normalized timestamp") {
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 5;
    cfg.window_us = 10000;
    cfg.patch_radius = 15;
    // 70% through bin 0: bin width 2000us -> t = 1400
    std::vector<Event> events = {ev(2, 3, 1400, 1)};
    auto p = build_sbt_max(events, 0, cfg, 15, 15, 64, 64);
    // event at sensor (2,3); patch origin (0,0) with center (15,15), radius 15
    CHECK(p.at(0, 3, 2) == Catch::Approx(0.7).epsilon(1e-12));
    double sum = 0.0;
    for (double v : p.data) sum += std::abs(v);
    CHECK(sum == Catch::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("sbt_max most recent event wins") {
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 1;
    cfg.window_us = 1000;
    cfg.patch_radius = 2;
    std::vector<Event> events = {ev(5, 5, 300, 1), ev(5, 5, 600, 1)};
    auto p = build_sbt_max(events, 0, cfg, 5, 5, 16, 16);
    CHECK(p.at(0, 2, 2) == Catch::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("sbt_max equal-timestamp tie goes to the later event; earlier events never change output") {
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 2;
    cfg.window_us = 1000;
    cfg.patch_radius = 1;
    // bins=2, window 1000 -> bin 0 covers [0, 500)
    std::vector<Event> base = {ev(4, 4, 450, 1)};
    auto p0 = build_sbt_max(base, 0, cfg, 4, 4, 8, 8);
    // an additional earlier event in the same (pixel, polarity, bin): no change
    std::vector<Event> with_earlier = {ev(4, 4, 400, 1), ev(4, 4, 450, 1)};
    auto p1 = build_sbt_max(with_earlier, 0, cfg, 4, 4, 8, 8);
    CHECK(max_abs_diff(p0, p1) == 0.0);
    // permuting equal-timestamp events leaves the output unchanged
    std::vector<Event> tie = {ev(4, 4, 450, 1), ev(4, 4, 450, 1)};
    auto p2 = build_sbt_max(tie, 0, cfg, 4, 4, 8, 8);
    CHECK(max_abs_diff(p0, p2) == 0.0);
}

TEST_CASE("sbt_max oracle equality and range on random streams") {
    Rng rng(42);
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 5;
    cfg.window_us = 10000;
    cfg.patch_radius = 7;
    for (int trial = 0; trial < 20; ++trial) {
        auto events = random_window(rng, 32, 32, 0, cfg.window_us, 1000);
        int cx = static_cast<int>(rng.uniform_int(7, 24));
        int cy = static_cast<int>(rng.uniform_int(7, 24));
        auto got = build_sbt_max(events, 0, cfg, cx, cy, 32, 32);
        auto want = sbt_max_oracle(events, 0, cfg, cx, cy);
        CHECK(max_abs_diff(got, want) < 1e-15);
        for (double v : got.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("sbt counting and normalization") {
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 1;
    cfg.window_us = 1000;
    cfg.patch_radius = 3;
    std::vector<Event> events = {ev(10, 10, 1, 1), ev(10, 10, 2, 1), ev(10, 10, 3, 1),
                                 ev(11, 10, 4, -1), ev(12, 10, 5, -1), ev(9, 10, 6, -1)};
    auto raw = build_sbt(events, 0, cfg, 10, 10, 32, 32, SbtNormalize::none);
    CHECK(raw.at(0, 3, 3) == 3.0);
    auto norm = build_sbt(events, 0, cfg, 10, 10, 32, 32, SbtNormalize::per_event_count);
    CHECK(norm.at(0, 3, 3) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sbt histogram oracle on random streams") {
    Rng rng(7);
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 4;
    cfg.window_us = 5000;
    cfg.patch_radius = 6;
    for (int trial = 0; trial < 20; ++trial) {
        auto events = random_window(rng, 24, 24, 0, cfg.window_us, 500);
        int cx = static_cast<int>(rng.uniform_int(6, 17));
        int cy = static_cast<int>(rng.uniform_int(6, 17));
        for (bool norm : {false, true}) {
            auto got = build_sbt(events, 0, cfg, cx, cy, 24, 24,
                                 norm ? SbtNormalize::per_event_count : SbtNormalize::none);
            auto want = sbt_oracle(events, 0, cfg, cx, cy, norm);
            CHECK(max_abs_diff(got, want) < 1e-15);
        }
    }
}

TEST_CASE("voxel grid bin interpolation") {
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 5;
    cfg.window_us = 4000;
    cfg.patch_radius = 2;
    // bin centers at dt = 0, 1000, 2000, 3000, 4000
    std::vector<Event> at_center = {ev(8, 8, 2000, 1)};
    auto p = build_voxel_grid(at_center, 0, cfg, 8, 8, 16, 16);
    CHECK(p.at(2, 2, 2) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(p.at(1, 2, 2) == 0.0);
    CHECK(p.at(3, 2, 2) == 0.0);

    std::vector<Event> midway = {ev(8, 8, 1500, 1)};
    auto q = build_voxel_grid(midway, 0, cfg, 8, 8, 16, 16);
    CHECK(q.at(1, 2, 2) == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(q.at(2, 2, 2) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("voxel grid matches deposit oracle on random streams") {
    Rng rng(11);
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 5;
    cfg.window_us = 10000;
    cfg.patch_radius = 5;
    for (int trial = 0; trial < 20; ++trial) {
        auto events = random_window(rng, 24, 24, 0, cfg.window_us, 800);
        int cx = static_cast<int>(rng.uniform_int(5, 18));
        int cy = static_cast<int>(rng.uniform_int(5, 18));
        auto got = build_voxel_grid(events, 0, cfg, cx, cy, 24, 24);
        auto want = voxel_oracle(events, 0, cfg, cx, cy);
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("representations reject unsorted slices, accept empty ones") {
    RepresentationConfig cfg;
    cfg.bins_per_polarity = 2;
    cfg.window_us = 1000;
    cfg.patch_radius = 2;
    std::vector<Event> unsorted = {ev(1, 1, 500, 1), ev(1, 1, 100, 1)};
    CHECK_THROWS_AS(build_sbt_max(unsorted, 0, cfg, 4, 4, 8, 8), std::invalid_argument);
    CHECK_THROWS_AS(build_sbt(unsorted, 0, cfg, 4, 4, 8, 8), std::invalid_argument);
    CHECK_THROWS_AS(build_voxel_grid(unsorted, 0, cfg, 4, 4, 8, 8), std::invalid_argument);
    std::vector<Event> empty;
    auto p = build_sbt_max(empty, 0, cfg, 4, 4, 8, 8);
    for (double v : p.data) CHECK(v == 0.0);
}

TEST_CASE("extract_patch constant field and bilinear midpoint") {
    Image img(8, 8, 7.0);
    auto p = extract_patch(img, 4, 4, 2);
    for (double v : p.data) CHECK(v == 7.0);

    Image ramp(4, 4, 0.0);
    for (int y = 0; y < 4; ++y) ramp.at(y, 1) = 1.0;  // I(u=0)=0, I(u=1)=1
    auto q = extract_patch(ramp, 0.5, 1.0, 1);
    CHECK(q.at(0, 1, 1) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("extract_patch pointwise bilinear oracle and linearity") {
    Rng rng(3);
    Image a(16, 16), b(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            a.at(y, x) = rng.uniform(0, 1);
            b.at(y, x) = rng.uniform(0, 1);
        }
    double cu = rng.uniform(3, 12), cv = rng.uniform(3, 12);
    int r = 3;
    auto pa = extract_patch(a, cu, cv, r);
    // independent scalar bilinear check per sample
    for (int y = 0; y < 2 * r + 1; ++y)
        for (int x = 0; x < 2 * r + 1; ++x) {
            double su = cu + x - r, sv = cv + y - r;
            int x0 = static_cast<int>(std::floor(su)), y0 = static_cast<int>(std::floor(sv));
            double fx = su - x0, fy = sv - y0;
            auto px = [&](int yy, int xx) {
                return (xx < 0 || yy < 0 || xx >= 16 || yy >= 16) ? 0.0 : a.at(yy, xx);
            };
            double want = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                          fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
            CHECK(pa.at(0, y, x) == Catch::Approx(want).margin(1e-15));
        }
    // linearity: extract(2a + 3b) = 2 extract(a) + 3 extract(b)
    Image mix(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) mix.at(y, x) = 2 * a.at(y, x) + 3 * b.at(y, x);
    auto pm = extract_patch(mix, cu, cv, r);
    auto pb = extract_patch(b, cu, cv, r);
    for (size_t i = 0; i < pm.data.size(); ++i)
        CHECK(pm.data[i] == Catch::Approx(2 * pa.data[i] + 3 * pb.data[i]).margin(1e-12));

    CHECK_THROWS_AS(extract_patch(a, 100.0, 4.0, 3), std::out_of_range);
}

TEST_CASE("event stream file round trips") {
    Rng rng(99);
    auto events = random_window(rng, 64, 48, 1000, 50000, 300);
    EventStream stream(events, 64, 48);
    auto tmp = std::filesystem::temp_directory_path();
    auto txt = (tmp / "evtrk_events_test.txt").string();
    auto bin = (tmp / "evtrk_events_test.bin").string();
    save_events_text(stream, txt);
    save_events_binary(stream, bin);
    for (const auto& loaded : {load_events_text(txt), load_events_binary(bin)}) {
        REQUIRE(loaded.size() == stream.size());
        CHECK(loaded.width() == 64);
        CHECK(loaded.height() == 48);
        for (size_t i = 0; i < stream.size(); ++i) {
            CHECK(loaded.events()[i].t == stream.events()[i].t);
            CHECK(loaded.events()[i].x == stream.events()[i].x);
            CHECK(loaded.events()[i].y == stream.events()[i].y);
            CHECK(loaded.events()[i].polarity == stream.events()[i].polarity);
        }
    }
    std::filesystem::remove(txt);
    std::filesystem::remove(bin);
}

TEST_CASE("event stream window slicing and validation") {
    std::vector<Event> events = {ev(0, 0, 10, 1), ev(1, 1, 20, -1), ev(2, 2, 30, 1)};
    EventStream s(events, 4, 4);
    auto w = s.window(15, 30);
    REQUIRE(w.size() == 1);
    CHECK(w[0].t == 20);
    std::vector<Event> bad = {ev(9, 0, 10, 1)};
    CHECK_THROWS_AS(EventStream(bad, 4, 4), std::invalid_argument);
}
