#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtrk/track.hpp"

namespace evtrk {

struct ThresholdMetrics {
    int threshold_px = 0;
    double feature_age = 0.0;   // mean over stable tracks; 0 when none is stable
    double inlier_ratio = 0.0;  // stable tracks / ground-truth tracks
    double expected_fa = 0.0;   // feature_age * inlier_ratio
    int stable_tracks = 0;
};

struct MetricReport {
    double feature_age = 0.0;  // mean over thresholds
    double expected_fa = 0.0;
    double inlier_ratio = 0.0;
    double normalized_track_error = 0.0;
    bool tne_defined = false;
    std::vector<ThresholdMetrics> per_threshold;
};

namespace detail {

// Distances from the prediction to ground truth at every gt timestep;
// missing predicted samples count as infinitely far.
inline std::vector<double> track_distances(const FeatureTrack& pred, const FeatureTrack& gt) {
    std::map<std::int64_t, const TrackSample*> at;
    for (const TrackSample& s : pred.samples) at[s.t_us] = &s;
    std::vector<double> dist;
    dist.reserve(gt.samples.size());
    for (const TrackSample& g : gt.samples) {
        auto it = at.find(g.t_us);
        if (it == at.end()) {
            dist.push_back(std::numeric_limits<double>::infinity());
        } else {
            double du = it->second->u - g.u;
            double dv = it->second->v - g.v;
            dist.push_back(std::sqrt(du * du + dv * dv));
        }
    }
    return dist;
}

// Normalized age at threshold eps: tracked duration until the first
// exceedance over the gt duration, 1 if the threshold is never exceeded.
inline double feature_age_at(const std::vector<double>& dist, const FeatureTrack& gt,
                             double eps) {
    size_t k = 0;
    while (k < dist.size() && dist[k] <= eps) ++k;
    if (k == dist.size()) return 1.0;
    return static_cast<double>(gt.samples[k].t_us - gt.samples.front().t_us) /
           static_cast<double>(gt.samples.back().t_us - gt.samples.front().t_us);
}

}  // namespace detail

// Multi-threshold feature-age evaluation. Predictions must already be
// sampled at the ground-truth timestamps (see interpolate_track); timestamps
// absent from a prediction count as lost from that point on. A track is
// stable at a threshold when its prediction at the second gt timestep is
// within that threshold.
inline MetricReport compute_metrics(const std::vector<FeatureTrack>& pred_tracks,
                                    const std::vector<FeatureTrack>& gt_tracks,
                                    int threshold_min = 1, int threshold_max = 31) {
    if (gt_tracks.empty()) throw std::invalid_argument("compute_metrics: no ground-truth tracks");
    if (threshold_min < 1 || threshold_max < threshold_min)
        throw std::invalid_argument("compute_metrics: bad threshold range");
    std::map<int, const FeatureTrack*> pred_by_id;
    for (const FeatureTrack& p : pred_tracks) pred_by_id[p.feature_id] = &p;
    bool any_pair = false;
    std::vector<std::vector<double>> dists(gt_tracks.size());
    for (size_t i = 0; i < gt_tracks.size(); ++i) {
        const FeatureTrack& gt = gt_tracks[i];
        if (gt.samples.size() < 2)
            throw std::invalid_argument("compute_metrics: gt track with fewer than 2 samples");
        auto it = pred_by_id.find(gt.feature_id);
        if (it != pred_by_id.end()) {
            any_pair = true;
            dists[i] = detail::track_distances(*it->second, gt);
        } else {
            dists[i].assign(gt.samples.size(), std::numeric_limits<double>::infinity());
        }
    }
    if (!any_pair) throw std::invalid_argument("compute_metrics: no paired tracks");

    MetricReport report;
    double sum_fa = 0.0, sum_exp = 0.0, sum_ir = 0.0;
    for (int eps = threshold_min; eps <= threshold_max; ++eps) {
        ThresholdMetrics tm;
        tm.threshold_px = eps;
        double fa_acc = 0.0;
        for (size_t i = 0; i < gt_tracks.size(); ++i) {
            if (dists[i][1] > eps) continue;  // second-timestep stability gate
            ++tm.stable_tracks;
            fa_acc += detail::feature_age_at(dists[i], gt_tracks[i], eps);
        }
        tm.inlier_ratio = static_cast<double>(tm.stable_tracks) /
                          static_cast<double>(gt_tracks.size());
        tm.feature_age = tm.stable_tracks > 0 ? fa_acc / tm.stable_tracks : 0.0;
        tm.expected_fa = tm.feature_age * tm.inlier_ratio;
        sum_fa += tm.feature_age;
        sum_exp += tm.expected_fa;
        sum_ir += tm.inlier_ratio;
        report.per_threshold.push_back(tm);
    }
    int count = threshold_max - threshold_min + 1;
    report.feature_age = sum_fa / count;
    report.expected_fa = sum_exp / count;
    report.inlier_ratio = sum_ir / count;

    // normalized tracking error at the 5 px termination threshold
    double tne_acc = 0.0;
    int tne_tracks = 0;
    for (size_t i = 0; i < gt_tracks.size(); ++i) {
        if (dists[i][1] > 5.0) continue;
        size_t k = 0;
        double err = 0.0;
        while (k < dists[i].size() && dists[i][k] <= 5.0) {
            err += dists[i][k];
            ++k;
        }
        tne_acc += err / static_cast<double>(k);
        ++tne_tracks;
    }
    if (tne_tracks > 0) {
        report.normalized_track_error = tne_acc / tne_tracks;
        report.tne_defined = true;
    }
    return report;
}

// JSON rendering with fixed key names.
inline std::string metrics_to_json(const MetricReport& r) {
    std::string s;
    char buf[256];
    auto add = [&](const char* fmt, auto... args) {
        std::snprintf(buf, sizeof(buf), fmt, args...);
        s += buf;
    };
    add("{\n  \"fa\": %.17g,\n  \"expected_fa\": %.17g,\n  \"inlier_ratio\": %.17g,\n",
        r.feature_age, r.expected_fa, r.inlier_ratio);
    if (r.tne_defined)
        add("  \"tne\": %.17g,\n", r.normalized_track_error);
    else
        s += "  \"tne\": null,\n";
    s += "  \"per_threshold\": [\n";
    for (size_t i = 0; i < r.per_threshold.size(); ++i) {
        const ThresholdMetrics& t = r.per_threshold[i];
        add("    {\"eps\": %d, \"fa\": %.17g, \"inlier_ratio\": %.17g, \"expected_fa\": %.17g}%s\n",
            t.threshold_px, t.feature_age, t.inlier_ratio, t.expected_fa,
            i + 1 < r.per_threshold.size() ? "," : "");
    }
    s += "  ]\n}\n";
    return s;
}

}  // namespace evtrk
