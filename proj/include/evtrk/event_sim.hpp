#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "evtrk/event.hpp"
#include "evtrk/image.hpp"
#include "evtrk/scene.hpp"
#include "evtrk/tensor.hpp"

namespace evtrk {

struct EventSimConfig {
    double contrast_threshold = 0.2;
    std::int64_t refractory_us = 0;
    double noise_sigma_c = 0.0;       // relative per-pixel threshold jitter
    double background_rate_hz = 0.0;  // per-pixel uniform background activity
    std::uint64_t seed = 0;
};

// Ideal contrast-threshold event model: per pixel the log intensity is
// linearly interpolated between consecutive frames, and an event fires at
// every crossing of the next multiple of C away from the last event level.
inline EventStream events_from_frames(std::span<const std::pair<std::int64_t, Image>> frames,
                                      const EventSimConfig& cfg) {
    if (frames.size() < 2) throw std::invalid_argument("events_from_frames: need >= 2 frames");
    if (!(cfg.contrast_threshold > 0.0))
        throw std::invalid_argument("events_from_frames: contrast threshold must be positive");
    const int h = frames[0].second.height();
    const int w = frames[0].second.width();
    for (const auto& [t, img] : frames)
        if (img.height() != h || img.width() != w)
            throw std::invalid_argument("events_from_frames: frame sizes differ");

    Rng rng(cfg.seed);
    std::vector<double> threshold(static_cast<size_t>(h) * w, cfg.contrast_threshold);
    if (cfg.noise_sigma_c > 0.0)
        for (double& c : threshold)
            c = cfg.contrast_threshold * std::max(0.1, 1.0 + cfg.noise_sigma_c * rng.normal());

    auto log_of = [](double intensity) { return std::log(std::max(intensity, 1e-3)); };

    std::vector<Event> events;
    std::vector<double> level(static_cast<size_t>(h) * w);
    std::vector<std::int64_t> last_event_t(static_cast<size_t>(h) * w, INT64_MIN);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            level[static_cast<size_t>(y) * w + x] = log_of(frames[0].second.at(y, x));

    for (size_t k = 0; k + 1 < frames.size(); ++k) {
        std::int64_t t0 = frames[k].first;
        std::int64_t t1 = frames[k + 1].first;
        const Image& next = frames[k + 1].second;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                size_t idx = static_cast<size_t>(y) * w + x;
                double c = threshold[idx];
                double l0 = level[idx];
                double l1 = log_of(next.at(y, x));
                double delta = l1 - l0;
                if (delta == 0.0) continue;
                double sign = delta > 0.0 ? 1.0 : -1.0;
                // relative slack admits crossings landing exactly on the
                // interval end despite decimal rounding
                int count = static_cast<int>(std::floor(std::abs(delta) / c + 1e-9));
                for (int m = 1; m <= count; ++m) {
                    double target = l0 + sign * m * c;
                    double frac = std::min(1.0, (target - l0) / delta);
                    std::int64_t t =
                        t0 + static_cast<std::int64_t>(std::llround(frac * (t1 - t0)));
                    if (cfg.refractory_us > 0 && last_event_t[idx] != INT64_MIN &&
                        t - last_event_t[idx] < cfg.refractory_us)
                        continue;
                    Event e;
                    e.x = static_cast<std::uint16_t>(x);
                    e.y = static_cast<std::uint16_t>(y);
                    e.t = t;
                    e.polarity = sign > 0 ? 1 : -1;
                    events.push_back(e);
                    last_event_t[idx] = t;
                }
                level[idx] = l0 + sign * count * c;
            }
    }

    if (cfg.background_rate_hz > 0.0) {
        double span_s =
            static_cast<double>(frames.back().first - frames.front().first) / 1e6;
        double expected = cfg.background_rate_hz * span_s;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int count = 0;  // Poisson by inversion
                double p = std::exp(-expected), cdf = p, u = rng.uniform(0.0, 1.0);
                while (u > cdf && count < 64) {
                    ++count;
                    p *= expected / count;
                    cdf += p;
                }
                for (int m = 0; m < count; ++m) {
                    Event e;
                    e.x = static_cast<std::uint16_t>(x);
                    e.y = static_cast<std::uint16_t>(y);
                    e.t = frames.front().first +
                          rng.uniform_int(0, frames.back().first - frames.front().first - 1);
                    e.polarity = rng.uniform(0, 1) < 0.5 ? -1 : 1;
                    events.push_back(e);
                }
            }
    }

    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    return EventStream(std::move(events), w, h);
}

// Generates the full synthetic package: frames, poses, ground-truth tracks,
// and events simulated from micro-frames at the sim rate.
inline SyntheticSequence generate_sequence(const SceneConfig& cfg) {
    SyntheticSequence seq = render_sequence(cfg);
    PlanarScene scene(cfg);
    int n_sim = static_cast<int>(std::llround(cfg.duration_s * cfg.sim_rate_hz)) + 1;
    std::vector<std::pair<std::int64_t, Image>> micro;
    micro.reserve(n_sim);
    for (int j = 0; j < n_sim; ++j) {
        Pose p = scene.pose_at(j / cfg.sim_rate_hz);
        micro.emplace_back(p.t_us, scene.render(p));
    }
    EventSimConfig ec;
    ec.contrast_threshold = cfg.contrast_threshold;
    ec.noise_sigma_c = cfg.noise_sigma_c;
    ec.background_rate_hz = cfg.background_rate_hz;
    ec.seed = cfg.seed + 0x9e3779b97f4a7c15ull;
    seq.events = events_from_frames(micro, ec);
    return seq;
}

}  // namespace evtrk
