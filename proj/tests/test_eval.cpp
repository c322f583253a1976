#include <catch2/catch_amalgamated.hpp>

#include "evtrk/metrics.hpp"
#include "evtrk/runtime.hpp"
#include "evtrk/tensor.hpp"

using namespace evtrk;

namespace {

// Exhaustive (track, threshold, timestep) scan, written independently of the
// production path: per-track ages first, then the per-threshold aggregation.
MetricReport metrics_oracle(const std::vector<FeatureTrack>& pred,
                            const std::vector<FeatureTrack>& gt, int lo = 1, int hi = 31) {
    MetricReport rep;
    double sfa = 0, sexp = 0, sir = 0;
    for (int eps = lo; eps <= hi; ++eps) {
        ThresholdMetrics tm;
        tm.threshold_px = eps;
        double fa_acc = 0.0;
        for (const FeatureTrack& g : gt) {
            const FeatureTrack* p = nullptr;
            for (const FeatureTrack& cand : pred)
                if (cand.feature_id == g.feature_id) p = &cand;
            std::vector<double> dist;
            for (const TrackSample& gs : g.samples) {
                double d = std::numeric_limits<double>::infinity();
                if (p != nullptr)
                    for (const TrackSample& ps : p->samples)
                        if (ps.t_us == gs.t_us) {
                            double du = ps.u - gs.u, dv = ps.v - gs.v;
                            d = std::sqrt(du * du + dv * dv);
                        }
                dist.push_back(d);
            }
            if (!(dist[1] <= eps)) continue;
            ++tm.stable_tracks;
            size_t k = 0;
            while (k < dist.size() && dist[k] <= eps) ++k;
            double fa = 1.0;
            if (k < dist.size())
                fa = static_cast<double>(g.samples[k].t_us - g.samples.front().t_us) /
                     static_cast<double>(g.samples.back().t_us - g.samples.front().t_us);
            fa_acc += fa;
        }
        tm.inlier_ratio = static_cast<double>(tm.stable_tracks) / static_cast<double>(gt.size());
        tm.feature_age = tm.stable_tracks > 0 ? fa_acc / tm.stable_tracks : 0.0;
        tm.expected_fa = tm.feature_age * tm.inlier_ratio;
        rep.per_threshold.push_back(tm);
        sfa += tm.feature_age;
        sexp += tm.expected_fa;
        sir += tm.inlier_ratio;
    }
    int n = hi - lo + 1;
    rep.feature_age = sfa / n;
    rep.expected_fa = sexp / n;
    rep.inlier_ratio = sir / n;
    return rep;
}

std::vector<FeatureTrack> random_track_set(Rng& rng, int n_tracks, int n_steps,
                                           std::vector<FeatureTrack>* pred_out) {
    std::vector<FeatureTrack> gt;
    std::vector<FeatureTrack> pred;
    for (int i = 0; i < n_tracks; ++i) {
        FeatureTrack g, p;
        g.feature_id = p.feature_id = i * 3 + 1;  // non-contiguous ids
        double u = rng.uniform(10, 50), v = rng.uniform(10, 50);
        double pu = u, pv = v;
        for (int k = 0; k < n_steps; ++k) {
            std::int64_t t = 1000 * k;
            g.append(t, u, v);
            if (!(i % 4 == 0 && k > n_steps / 2))  // some predictions end early
                p.append(t, pu, pv);
            u += rng.uniform(-2, 2);
            v += rng.uniform(-2, 2);
            double sigma = rng.uniform(0, 8);
            pu = u + rng.normal(0, sigma);
            pv = v + rng.normal(0, sigma);
        }
        gt.push_back(g);
        pred.push_back(p);
    }
    *pred_out = pred;
    return gt;
}

}  // namespace

TEST_CASE("interpolate_track: knots, midpoint, omitted targets") {
    FeatureTrack tr;
    tr.feature_id = 4;
    tr.append(0, 0, 0);
    tr.append(10000, 10, 0);
    std::vector<std::int64_t> targets = {0, 5000, 10000, 20000};
    int omitted = 0;
    FeatureTrack out = interpolate_track(tr, targets, &omitted);
    CHECK(omitted == 1);
    REQUIRE(out.samples.size() == 3);
    CHECK(out.samples[0].u == 0.0);
    CHECK(out.samples[1].u == Catch::Approx(5.0));
    CHECK(out.samples[1].v == 0.0);
    CHECK(out.samples[2].u == 10.0);
}

TEST_CASE("interpolate_track matches closed-form segment oracle") {
    Rng rng(13);
    FeatureTrack tr;
    tr.feature_id = 0;
    std::vector<std::int64_t> knots;
    std::int64_t t = 0;
    for (int k = 0; k < 10; ++k) {
        tr.append(t, rng.uniform(-5, 5), rng.uniform(-5, 5));
        knots.push_back(t);
        t += rng.uniform_int(500, 2000);
    }
    for (int trial = 0; trial < 100; ++trial) {
        std::int64_t target = rng.uniform_int(0, tr.t_end());
        FeatureTrack out = interpolate_track(tr, std::span<const std::int64_t>(&target, 1));
        REQUIRE(out.samples.size() == 1);
        size_t seg = 0;
        while (seg + 1 < knots.size() && knots[seg + 1] < target) ++seg;
        if (knots[seg + 1] == target) ++seg;
        double want_u, want_v;
        if (knots[seg] == target) {
            want_u = tr.samples[seg].u;
            want_v = tr.samples[seg].v;
        } else {
            double a = static_cast<double>(target - knots[seg]) /
                       static_cast<double>(knots[seg + 1] - knots[seg]);
            want_u = tr.samples[seg].u + a * (tr.samples[seg + 1].u - tr.samples[seg].u);
            want_v = tr.samples[seg].v + a * (tr.samples[seg + 1].v - tr.samples[seg].v);
        }
        CHECK(out.samples[0].u == Catch::Approx(want_u).margin(1e-12));
        CHECK(out.samples[0].v == Catch::Approx(want_v).margin(1e-12));
    }
}

TEST_CASE("compute_metrics: perfect tracking") {
    Rng rng(1);
    std::vector<FeatureTrack> gt;
    for (int i = 0; i < 4; ++i) {
        FeatureTrack tr;
        tr.feature_id = i;
        for (int k = 0; k < 10; ++k)
            tr.append(1000 * k, 10 + i + 0.5 * k, 20 - 0.25 * k);
        gt.push_back(tr);
    }
    MetricReport rep = compute_metrics(gt, gt);
    CHECK(rep.feature_age == 1.0);
    CHECK(rep.expected_fa == 1.0);
    CHECK(rep.inlier_ratio == 1.0);
    for (const auto& tm : rep.per_threshold) {
        CHECK(tm.feature_age == 1.0);
        CHECK(tm.inlier_ratio == 1.0);
        CHECK(tm.expected_fa == 1.0);
    }
    REQUIRE(rep.tne_defined);
    CHECK(rep.normalized_track_error == 0.0);
}

TEST_CASE("compute_metrics: 10 px step deviation from the halfway timestep") {
    // 11 samples at t = 0..10 ms; deviation of exactly 10 px from t=5 ms on.
    FeatureTrack gt, pred;
    gt.feature_id = pred.feature_id = 7;
    for (int k = 0; k <= 10; ++k) {
        gt.append(1000 * k, 100, 100);
        pred.append(1000 * k, k >= 5 ? 110.0 : 100.0, 100);
    }
    MetricReport rep = compute_metrics({pred}, {gt});
    for (const auto& tm : rep.per_threshold) {
        if (tm.threshold_px <= 9) {
            CHECK(tm.feature_age == Catch::Approx(0.5));
            CHECK(tm.inlier_ratio == 1.0);
        } else {
            // deviation equals 10 px: thresholds >= 10 are never exceeded
            CHECK(tm.feature_age == 1.0);
        }
    }
    // exceedance strictly above the threshold: eps = 10 still counts as inside
    CHECK(rep.expected_fa == Catch::Approx((9 * 0.5 + 22 * 1.0) / 31.0));
}

TEST_CASE("compute_metrics: early-lost track is excluded at every threshold") {
    FeatureTrack gt, pred;
    gt.feature_id = pred.feature_id = 0;
    for (int k = 0; k <= 10; ++k) {
        gt.append(1000 * k, 50, 50);
        pred.append(1000 * k, k >= 1 ? 90.0 : 50.0, 50);  // 40 px off at second step
    }
    MetricReport rep = compute_metrics({pred}, {gt});
    CHECK(rep.inlier_ratio == 0.0);
    CHECK(rep.expected_fa == 0.0);
    CHECK(rep.feature_age == 0.0);
    CHECK_FALSE(rep.tne_defined);
}

TEST_CASE("compute_metrics equals the exhaustive oracle on random track sets") {
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<FeatureTrack> pred;
        auto gt = random_track_set(rng, 1 + trial % 10, 5 + trial % 16, &pred);
        MetricReport a = compute_metrics(pred, gt);
        MetricReport b = metrics_oracle(pred, gt);
        REQUIRE(a.per_threshold.size() == b.per_threshold.size());
        for (size_t i = 0; i < a.per_threshold.size(); ++i) {
            CHECK(a.per_threshold[i].feature_age == b.per_threshold[i].feature_age);
            CHECK(a.per_threshold[i].inlier_ratio == b.per_threshold[i].inlier_ratio);
            CHECK(a.per_threshold[i].expected_fa == b.per_threshold[i].expected_fa);
            CHECK(a.per_threshold[i].stable_tracks == b.per_threshold[i].stable_tracks);
        }
        CHECK(a.feature_age == b.feature_age);
        CHECK(a.expected_fa == b.expected_fa);

        // per-track age is monotone in the threshold, and so is FA * IR
        for (size_t i = 1; i < a.per_threshold.size(); ++i)
            CHECK(a.per_threshold[i].expected_fa >= a.per_threshold[i - 1].expected_fa - 1e-15);
        // expected FA never exceeds FA
        for (const auto& tm : a.per_threshold) CHECK(tm.expected_fa <= tm.feature_age + 1e-15);
        CHECK(a.expected_fa <= a.feature_age + 1e-15);
    }
}

TEST_CASE("compute_metrics: invariant to ordering and id relabeling") {
    Rng rng(101);
    std::vector<FeatureTrack> pred;
    auto gt = random_track_set(rng, 6, 12, &pred);
    MetricReport base = compute_metrics(pred, gt);

    std::vector<FeatureTrack> pred2 = {pred[3], pred[0], pred[5], pred[1], pred[4], pred[2]};
    std::vector<FeatureTrack> gt2 = {gt[3], gt[0], gt[5], gt[1], gt[4], gt[2]};
    MetricReport shuffled = compute_metrics(pred2, gt2);
    CHECK(shuffled.expected_fa == Catch::Approx(base.expected_fa).margin(1e-12));
    CHECK(shuffled.feature_age == Catch::Approx(base.feature_age).margin(1e-12));

    for (auto& tr : pred2) tr.feature_id += 1000;
    for (auto& tr : gt2) tr.feature_id += 1000;
    MetricReport relabeled = compute_metrics(pred2, gt2);
    CHECK(relabeled.expected_fa == Catch::Approx(base.expected_fa).margin(1e-12));

    CHECK_THROWS_AS(compute_metrics({}, gt), std::invalid_argument);
    std::vector<FeatureTrack> empty_gt;
    CHECK_THROWS_AS(compute_metrics(pred, empty_gt), std::invalid_argument);
}

TEST_CASE("runtime report: ratio, aggregation, validation") {
    RuntimeReport r = make_runtime_report(2.0, 4.0);
    CHECK(r.real_time_factor == 0.5);
    CHECK_THROWS_AS(make_runtime_report(1.0, 0.0), std::invalid_argument);
    RuntimeReport mean = aggregate_runtime({make_runtime_report(2, 4), make_runtime_report(6, 4)});
    CHECK(mean.real_time_factor == Catch::Approx((0.5 + 1.5) / 2));
}

TEST_CASE("metrics json has the fixed key names") {
    FeatureTrack gt;
    gt.feature_id = 0;
    gt.append(0, 1, 1);
    gt.append(1000, 2, 2);
    MetricReport rep = compute_metrics({gt}, {gt});
    std::string json = metrics_to_json(rep);
    for (const char* key : {"\"fa\"", "\"expected_fa\"", "\"inlier_ratio\"", "\"tne\"",
                            "\"per_threshold\""})
        CHECK(json.find(key) != std::string::npos);
}
