#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evtrk {

struct TrackSample {
    std::int64_t t_us = 0;
    double u = 0.0;
    double v = 0.0;
    bool alive = true;
};

// Per-feature time series of positions; timestamps strictly increasing.
struct FeatureTrack {
    int feature_id = 0;
    std::vector<TrackSample> samples;

    void append(std::int64_t t_us, double u, double v, bool alive = true) {
        if (!samples.empty() && t_us <= samples.back().t_us)
            throw std::invalid_argument("FeatureTrack: timestamps must strictly increase");
        samples.push_back({t_us, u, v, alive});
    }
    std::int64_t t_begin() const { return samples.front().t_us; }
    std::int64_t t_end() const { return samples.back().t_us; }
    double duration_s() const {
        return static_cast<double>(t_end() - t_begin()) / 1e6;
    }
};

// --- text format: one "feature_id t_us u v alive" per line ----------------

inline void save_tracks(const std::vector<FeatureTrack>& tracks, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    for (const FeatureTrack& tr : tracks)
        for (const TrackSample& s : tr.samples)
            out << tr.feature_id << " " << s.t_us << " " << s.u << " " << s.v << " "
                << (s.alive ? 1 : 0) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<FeatureTrack> load_tracks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::map<int, FeatureTrack> by_id;
    int id, alive;
    std::int64_t t;
    double u, v;
    while (in >> id >> t >> u >> v >> alive) {
        auto& tr = by_id[id];
        tr.feature_id = id;
        tr.append(t, u, v, alive != 0);
    }
    std::vector<FeatureTrack> tracks;
    tracks.reserve(by_id.size());
    for (auto& [key, tr] : by_id) tracks.push_back(std::move(tr));
    return tracks;
}

// Piecewise-linear resampling at target timestamps. Targets outside the
// track's span are omitted and counted, never extrapolated.
inline FeatureTrack interpolate_track(const FeatureTrack& track,
                                      std::span<const std::int64_t> targets,
                                      int* omitted = nullptr) {
    if (track.samples.empty()) throw std::invalid_argument("interpolate_track: empty track");
    FeatureTrack out;
    out.feature_id = track.feature_id;
    int skipped = 0;
    for (std::int64_t t : targets) {
        if (t < track.t_begin() || t > track.t_end()) {
            ++skipped;
            continue;
        }
        auto hi = std::lower_bound(
            track.samples.begin(), track.samples.end(), t,
            [](const TrackSample& s, std::int64_t tt) { return s.t_us < tt; });
        if (hi->t_us == t) {
            out.append(t, hi->u, hi->v, hi->alive);
            continue;
        }
        auto lo = hi - 1;
        double a = static_cast<double>(t - lo->t_us) / static_cast<double>(hi->t_us - lo->t_us);
        out.append(t, lo->u + a * (hi->u - lo->u), lo->v + a * (hi->v - lo->v),
                   lo->alive && hi->alive);
    }
    if (omitted != nullptr) *omitted = skipped;
    return out;
}

}  // namespace evtrk
