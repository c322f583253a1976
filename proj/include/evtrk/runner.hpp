#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <span>
#include <vector>

#include "evtrk/event.hpp"
#include "evtrk/image.hpp"
#include "evtrk/klt.hpp"
#include "evtrk/representation.hpp"
#include "evtrk/runtime.hpp"
#include "evtrk/track.hpp"
#include "evtrk/tracker_net.hpp"

namespace evtrk {

enum class EventRepresentation { sbt_max, sbt, sbt_nonorm, voxel };

inline EventRepresentation representation_by_name(const std::string& name) {
    if (name == "sbt_max") return EventRepresentation::sbt_max;
    if (name == "sbt") return EventRepresentation::sbt;
    if (name == "sbt_nonorm") return EventRepresentation::sbt_nonorm;
    if (name == "voxel") return EventRepresentation::voxel;
    throw std::invalid_argument("unknown representation: " + name);
}

inline int representation_channels(EventRepresentation rep, int bins) {
    return rep == EventRepresentation::voxel ? bins : 2 * bins;
}

inline PatchTensor build_event_patch(EventRepresentation rep, std::span<const Event> slice,
                                     std::int64_t t_start, const RepresentationConfig& cfg,
                                     double u, double v, int sensor_w, int sensor_h) {
    switch (rep) {
        case EventRepresentation::sbt_max:
            return build_sbt_max(slice, t_start, cfg, u, v, sensor_w, sensor_h);
        case EventRepresentation::sbt:
            return build_sbt(slice, t_start, cfg, u, v, sensor_w, sensor_h,
                             SbtNormalize::per_event_count);
        case EventRepresentation::sbt_nonorm:
            return build_sbt(slice, t_start, cfg, u, v, sensor_w, sensor_h,
                             SbtNormalize::none);
        case EventRepresentation::voxel:
            return build_voxel_grid(slice, t_start, cfg, u, v, sensor_w, sensor_h);
    }
    throw std::logic_error("unreachable");
}

// Per-feature tracker state as seen by the runner; the batched network state
// lives alongside in NetState.
struct TrackerState {
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    bool alive = true;
};

struct TrackRunConfig {
    EventRepresentation representation = EventRepresentation::sbt_max;
    std::int64_t window_us = 10000;
    int bins_per_polarity = 5;

    RepresentationConfig rep_config(int patch_radius) const {
        RepresentationConfig rc;
        rc.bins_per_polarity = bins_per_polarity;
        rc.window_us = window_us;
        rc.patch_radius = patch_radius;
        return rc;
    }
};

struct TrackRunResult {
    std::vector<FeatureTrack> tracks;
    RuntimeReport runtime;
};

namespace detail {

inline bool slice_touches_patch(std::span<const Event> slice, double u, double v, int r) {
    std::int64_t cx = std::llround(u), cy = std::llround(v);
    for (const Event& e : slice)
        if (std::abs(static_cast<std::int64_t>(e.x) - cx) <= r &&
            std::abs(static_cast<std::int64_t>(e.y) - cy) <= r)
            return true;
    return false;
}

inline Tensor4 gather_rows(const Tensor4& src, std::span<const int> idx) {
    Tensor4 out(static_cast<int>(idx.size()), src.c(), src.h(), src.w());
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(src.slice(idx[i]), src.slice(idx[i]) + src.sample_size(), out.slice(i));
    return out;
}

inline void scatter_rows(const Tensor4& src, std::span<const int> idx, Tensor4& dst) {
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(src.slice(i), src.slice(i) + src.sample_size(), dst.slice(idx[i]));
}

}  // namespace detail

// Runs the tracker over an event stream. Each window advances every living
// feature whose patch saw events; zero-event patches leave the feature and
// its recurrent state untouched. A feature whose patch center comes within
// the patch radius of the border is frozen and leaves the attention set.
inline TrackRunResult track_sequence(TrackerNet& net, const Image& frame0, std::int64_t t0,
                                     std::span<const Eigen::Vector2d> features,
                                     const EventStream& stream, const TrackRunConfig& cfg,
                                     std::int64_t t_end = 0) {
    if (features.empty()) throw std::invalid_argument("track_sequence: no features");
    if (frame0.width() != stream.width() || frame0.height() != stream.height())
        throw std::invalid_argument("track_sequence: frame/stream resolution mismatch");
    const int r = net.config().patch_radius();
    const int n = static_cast<int>(features.size());
    RepresentationConfig rc = cfg.rep_config(r);
    if (representation_channels(cfg.representation, rc.bins_per_polarity) !=
        net.config().event_in_ch)
        throw std::invalid_argument("representation channels do not match the network");
    if (t_end <= t0) t_end = stream.t_end();

    Stopwatch watch;
    std::vector<TrackerState> states(n);
    std::vector<FeatureTrack> tracks(n);
    Tensor4 templates(n, 1, 2 * r + 1, 2 * r + 1);
    for (int i = 0; i < n; ++i) {
        states[i].position = features[i];
        states[i].alive = features[i].x() >= r && features[i].y() >= r &&
                          features[i].x() <= frame0.width() - 1 - r &&
                          features[i].y() <= frame0.height() - 1 - r;
        tracks[i].feature_id = i;
        tracks[i].append(t0, features[i].x(), features[i].y(), states[i].alive);
        PatchTensor p = extract_patch(frame0, features[i].x(), features[i].y(), r);
        std::copy(p.data.begin(), p.data.end(), templates.slice(i));
    }
    TemplateContext tmpl = net.encode_template(templates, Mode::eval);
    NetState net_state = net.zero_state(n);

    std::int64_t t_prev = t0;
    while (t_prev + cfg.window_us <= t_end) {
        std::int64_t t_cur = t_prev + cfg.window_us;
        auto slice = stream.window(t_prev, t_cur);
        std::vector<int> active;
        for (int i = 0; i < n; ++i)
            if (states[i].alive &&
                detail::slice_touches_patch(slice, states[i].position.x(),
                                            states[i].position.y(), r))
                active.push_back(i);
        if (!active.empty()) {
            Tensor4 patches(static_cast<int>(active.size()), net.config().event_in_ch,
                            2 * r + 1, 2 * r + 1);
            for (size_t k = 0; k < active.size(); ++k) {
                const auto& pos = states[active[k]].position;
                PatchTensor p = build_event_patch(cfg.representation, slice, t_prev, rc,
                                                  pos.x(), pos.y(), stream.width(),
                                                  stream.height());
                std::copy(p.data.begin(), p.data.end(), patches.slice(k));
            }
            TemplateContext sub;
            sub.feature_map = detail::gather_rows(tmpl.feature_map, active);
            sub.bottleneck = detail::gather_rows(tmpl.bottleneck, active);
            NetState sub_state;
            sub_state.lstm.hidden = detail::gather_rows(net_state.lstm.hidden, active);
            sub_state.lstm.cell = detail::gather_rows(net_state.lstm.cell, active);
            sub_state.attention = detail::gather_rows(net_state.attention, active);
            auto [disp, new_state] = net.step(sub, patches, sub_state, Mode::eval);
            detail::scatter_rows(new_state.lstm.hidden, active, net_state.lstm.hidden);
            detail::scatter_rows(new_state.lstm.cell, active, net_state.lstm.cell);
            detail::scatter_rows(new_state.attention, active, net_state.attention);
            for (size_t k = 0; k < active.size(); ++k) {
                double du = std::clamp(disp.at(static_cast<int>(k), 0, 0, 0),
                                       -static_cast<double>(r), static_cast<double>(r));
                double dv = std::clamp(disp.at(static_cast<int>(k), 1, 0, 0),
                                       -static_cast<double>(r), static_cast<double>(r));
                states[active[k]].position += Eigen::Vector2d(du, dv);
            }
        }
        for (int i = 0; i < n; ++i) {
            if (!states[i].alive) continue;
            const auto& pos = states[i].position;
            bool inside = pos.x() >= r && pos.y() >= r &&
                          pos.x() <= stream.width() - 1 - r &&
                          pos.y() <= stream.height() - 1 - r;
            if (!inside) states[i].alive = false;
            tracks[i].append(t_cur, pos.x(), pos.y(), states[i].alive);
        }
        t_prev = t_cur;
    }

    TrackRunResult result;
    result.tracks = std::move(tracks);
    double data_s = static_cast<double>(t_prev - t0) / 1e6;
    result.runtime = make_runtime_report(std::max(watch.seconds(), 1e-9), std::max(data_s, 1e-9));
    return result;
}

struct HybridConfig {
    TrackRunConfig track;
    KltConfig klt;
};

struct HybridRunResult {
    std::vector<FeatureTrack> tracks;
    std::vector<int> klt_ok_count;    // per feature
    std::vector<int> klt_lost_count;  // per feature
    RuntimeReport runtime;
};

// Event tracking between frames with KLT refinement at each frame arrival,
// seeded by the event tracker's displacement. A refined position overwrites
// the event-track state; when KLT reports the feature lost, the event
// position is kept and tracking continues.
inline HybridRunResult hybrid_track(TrackerNet& net,
                                    std::span<const std::pair<std::int64_t, Image>> frames,
                                    const EventStream& stream,
                                    std::span<const Eigen::Vector2d> features,
                                    const HybridConfig& cfg) {
    if (frames.size() < 2) throw std::invalid_argument("hybrid_track: need >= 2 frames");
    if (features.empty()) throw std::invalid_argument("hybrid_track: no features");
    for (size_t i = 1; i < frames.size(); ++i)
        if (frames[i].first <= frames[i - 1].first)
            throw std::invalid_argument("hybrid_track: frames not sorted");
    const int r = net.config().patch_radius();
    const int n = static_cast<int>(features.size());
    RepresentationConfig rc = cfg.track.rep_config(r);

    Stopwatch watch;
    const Image& frame0 = frames[0].second;
    std::vector<TrackerState> states(n);
    std::vector<FeatureTrack> tracks(n);
    Tensor4 templates(n, 1, 2 * r + 1, 2 * r + 1);
    for (int i = 0; i < n; ++i) {
        states[i].position = features[i];
        states[i].alive = true;
        tracks[i].feature_id = i;
        tracks[i].append(frames[0].first, features[i].x(), features[i].y());
        PatchTensor p = extract_patch(frame0, features[i].x(), features[i].y(), r);
        std::copy(p.data.begin(), p.data.end(), templates.slice(i));
    }
    TemplateContext tmpl = net.encode_template(templates, Mode::eval);
    NetState net_state = net.zero_state(n);
    HybridRunResult result;
    result.klt_ok_count.assign(n, 0);
    result.klt_lost_count.assign(n, 0);

    for (size_t f = 1; f < frames.size(); ++f) {
        std::int64_t t_prev_frame = frames[f - 1].first;
        std::int64_t t_frame = frames[f].first;
        std::vector<Eigen::Vector2d> anchor(n);
        for (int i = 0; i < n; ++i) anchor[i] = states[i].position;

        // advance with events in nominal windows, last one truncated
        std::int64_t t_prev = t_prev_frame;
        while (t_prev < t_frame) {
            std::int64_t t_cur = std::min<std::int64_t>(t_prev + cfg.track.window_us, t_frame);
            auto slice = stream.window(t_prev, t_cur);
            std::vector<int> active;
            for (int i = 0; i < n; ++i)
                if (states[i].alive &&
                    states[i].position.x() >= r && states[i].position.y() >= r &&
                    states[i].position.x() <= frame0.width() - 1 - r &&
                    states[i].position.y() <= frame0.height() - 1 - r &&
                    detail::slice_touches_patch(slice, states[i].position.x(),
                                                states[i].position.y(), r))
                    active.push_back(i);
            if (!active.empty()) {
                Tensor4 patches(static_cast<int>(active.size()), net.config().event_in_ch,
                                2 * r + 1, 2 * r + 1);
                for (size_t k = 0; k < active.size(); ++k) {
                    const auto& pos = states[active[k]].position;
                    PatchTensor p = build_event_patch(cfg.track.representation, slice, t_prev,
                                                      rc, pos.x(), pos.y(), stream.width(),
                                                      stream.height());
                    std::copy(p.data.begin(), p.data.end(), patches.slice(k));
                }
                TemplateContext sub;
                sub.feature_map = detail::gather_rows(tmpl.feature_map, active);
                sub.bottleneck = detail::gather_rows(tmpl.bottleneck, active);
                NetState sub_state;
                sub_state.lstm.hidden = detail::gather_rows(net_state.lstm.hidden, active);
                sub_state.lstm.cell = detail::gather_rows(net_state.lstm.cell, active);
                sub_state.attention = detail::gather_rows(net_state.attention, active);
                auto [disp, new_state] = net.step(sub, patches, sub_state, Mode::eval);
                detail::scatter_rows(new_state.lstm.hidden, active, net_state.lstm.hidden);
                detail::scatter_rows(new_state.lstm.cell, active, net_state.lstm.cell);
                detail::scatter_rows(new_state.attention, active, net_state.attention);
                for (size_t k = 0; k < active.size(); ++k) {
                    double du = std::clamp(disp.at(static_cast<int>(k), 0, 0, 0),
                                           -static_cast<double>(r), static_cast<double>(r));
                    double dv = std::clamp(disp.at(static_cast<int>(k), 1, 0, 0),
                                           -static_cast<double>(r), static_cast<double>(r));
                    states[active[k]].position += Eigen::Vector2d(du, dv);
                }
            }
            t_prev = t_cur;
        }

        // KLT refinement seeded by the event tracker's displacement
        std::vector<Eigen::Vector2d> points(n), guesses(n);
        for (int i = 0; i < n; ++i) {
            points[i] = anchor[i];
            guesses[i] = states[i].position - anchor[i];
        }
        auto refined = klt_track(frames[f - 1].second, frames[f].second, points, guesses,
                                 cfg.klt);
        for (int i = 0; i < n; ++i) {
            if (!states[i].alive) continue;
            if (refined[i].ok) {
                states[i].position = refined[i].pos;
                ++result.klt_ok_count[i];
            } else {
                ++result.klt_lost_count[i];
            }
            tracks[i].append(t_frame, states[i].position.x(), states[i].position.y());
        }
    }

    result.tracks = std::move(tracks);
    double data_s =
        static_cast<double>(frames.back().first - frames.front().first) / 1e6;
    result.runtime = make_runtime_report(std::max(watch.seconds(), 1e-9), std::max(data_s, 1e-9));
    return result;
}

}  // namespace evtrk
