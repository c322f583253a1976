#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "evtrk/event.hpp"
#include "evtrk/image.hpp"

namespace evtrk {

enum class ChannelSemantics { grayscale, sbt_max, sbt, sbt_no_norm, voxel_grid };

// Dense multi-channel patch, CHW, odd spatial size.
struct PatchTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    ChannelSemantics semantics = ChannelSemantics::grayscale;
    std::vector<double> data;

    PatchTensor() = default;
    PatchTensor(int c, int h, int w, ChannelSemantics sem)
        : channels(c), height(h), width(w), semantics(sem),
          data(static_cast<size_t>(c) * h * w, 0.0) {
        if (c <= 0 || h <= 0 || w <= 0) throw std::invalid_argument("PatchTensor: bad shape");
        if (h % 2 == 0 || w % 2 == 0)
            throw std::invalid_argument("PatchTensor: spatial size must be odd");
    }

    double& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    size_t size() const { return data.size(); }
};

struct RepresentationConfig {
    int bins_per_polarity = 5;
    std::int64_t window_us = 10000;  // 10 ms default
    int patch_radius = 15;

    void validate() const {
        if (bins_per_polarity < 1) throw std::invalid_argument("bins_per_polarity must be >= 1");
        if (window_us <= 0) throw std::invalid_argument("window_us must be positive");
        if (patch_radius < 1) throw std::invalid_argument("patch_radius must be >= 1");
    }
    int sbt_channels() const { return 2 * bins_per_polarity; }
};

enum class SbtNormalize { per_event_count, none };

namespace detail {

inline void check_slice_sorted(std::span<const Event> slice) {
    for (size_t i = 1; i < slice.size(); ++i)
        if (slice[i].t < slice[i - 1].t)
            throw std::invalid_argument("event window slice is not sorted");
}

inline void check_center(double u, double v, int width, int height) {
    if (!(u >= 0.0 && u <= width - 1 && v >= 0.0 && v <= height - 1))
        throw std::invalid_argument("patch center outside sensor bounds");
}

// Resample `src` at integer grid offset by the fractional remainder of the
// center, bilinear with zero padding. Exact identity when the shift is zero.
inline PatchTensor fractional_shift(const PatchTensor& src, double fx, double fy) {
    if (fx == 0.0 && fy == 0.0) return src;
    PatchTensor out(src.channels, src.height, src.width, src.semantics);
    for (int c = 0; c < src.channels; ++c)
        for (int y = 0; y < src.height; ++y)
            for (int x = 0; x < src.width; ++x) {
                double sv = y + fy, su = x + fx;
                int x0 = static_cast<int>(std::floor(su));
                int y0 = static_cast<int>(std::floor(sv));
                double ax = su - x0, ay = sv - y0;
                auto px = [&](int yy, int xx) -> double {
                    if (xx < 0 || yy < 0 || xx >= src.width || yy >= src.height) return 0.0;
                    return src.at(c, yy, xx);
                };
                out.at(c, y, x) = (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) +
                                  ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
            }
    return out;
}

}  // namespace detail

// SBT-Max: per (polarity, temporal bin) channel, each pixel holds the
// normalized within-bin timestamp of the most recent event, 0 if none.
// Channels 0..bins-1 are positive polarity, bins..2*bins-1 negative.
// Equal timestamps: the event appearing later in the slice wins.
inline PatchTensor build_sbt_max(std::span<const Event> slice, std::int64_t t_start,
                                 const RepresentationConfig& cfg, double center_u,
                                 double center_v, int sensor_w, int sensor_h) {
    cfg.validate();
    detail::check_slice_sorted(slice);
    detail::check_center(center_u, center_v, sensor_w, sensor_h);
    const int r = cfg.patch_radius;
    const int side = 2 * r + 1;
    const int bins = cfg.bins_per_polarity;
    const std::int64_t cx = std::llround(center_u);
    const std::int64_t cy = std::llround(center_v);
    const double bin_w = static_cast<double>(cfg.window_us) / bins;

    PatchTensor patch(2 * bins, side, side, ChannelSemantics::sbt_max);
    std::vector<std::int64_t> last_t(patch.size(), INT64_MIN);
    std::vector<std::int64_t> last_seq(patch.size(), -1);
    std::int64_t seq = 0;
    for (const Event& e : slice) {
        ++seq;
        std::int64_t dt = e.t - t_start;
        if (dt < 0 || dt >= cfg.window_us) continue;
        std::int64_t px = static_cast<std::int64_t>(e.x) - (cx - r);
        std::int64_t py = static_cast<std::int64_t>(e.y) - (cy - r);
        if (px < 0 || py < 0 || px >= side || py >= side) continue;
        int bin = std::min(bins - 1, static_cast<int>(dt / bin_w));
        int ch = (e.polarity > 0 ? 0 : bins) + bin;
        size_t idx = (static_cast<size_t>(ch) * side + py) * side + px;
        if (e.t > last_t[idx] || (e.t == last_t[idx] && seq > last_seq[idx])) {
            last_t[idx] = e.t;
            last_seq[idx] = seq;
            patch.data[idx] = (dt - bin * bin_w) / bin_w;
        }
    }
    return detail::fractional_shift(patch, center_u - cx, center_v - cy);
}

// SBT: per (polarity, temporal bin) event counts; optionally normalized by
// the total event count inside the spatiotemporal patch window.
inline PatchTensor build_sbt(std::span<const Event> slice, std::int64_t t_start,
                             const RepresentationConfig& cfg, double center_u, double center_v,
                             int sensor_w, int sensor_h,
                             SbtNormalize normalize = SbtNormalize::per_event_count) {
    cfg.validate();
    detail::check_slice_sorted(slice);
    detail::check_center(center_u, center_v, sensor_w, sensor_h);
    const int r = cfg.patch_radius;
    const int side = 2 * r + 1;
    const int bins = cfg.bins_per_polarity;
    const std::int64_t cx = std::llround(center_u);
    const std::int64_t cy = std::llround(center_v);
    const double bin_w = static_cast<double>(cfg.window_us) / bins;

    PatchTensor patch(2 * bins, side, side,
                      normalize == SbtNormalize::none ? ChannelSemantics::sbt_no_norm
                                                      : ChannelSemantics::sbt);
    std::int64_t total = 0;
    for (const Event& e : slice) {
        std::int64_t dt = e.t - t_start;
        if (dt < 0 || dt >= cfg.window_us) continue;
        std::int64_t px = static_cast<std::int64_t>(e.x) - (cx - r);
        std::int64_t py = static_cast<std::int64_t>(e.y) - (cy - r);
        if (px < 0 || py < 0 || px >= side || py >= side) continue;
        int bin = std::min(bins - 1, static_cast<int>(dt / bin_w));
        int ch = (e.polarity > 0 ? 0 : bins) + bin;
        patch.at(ch, static_cast<int>(py), static_cast<int>(px)) += 1.0;
        ++total;
    }
    if (normalize == SbtNormalize::per_event_count && total > 0)
        for (double& v : patch.data) v /= static_cast<double>(total);
    return detail::fractional_shift(patch, center_u - cx, center_v - cy);
}

// Voxel grid: polarity-signed mass split bilinearly across the two temporal
// bins adjacent to the event's normalized timestamp; `bins` channels shared
// by both polarities.
inline PatchTensor build_voxel_grid(std::span<const Event> slice, std::int64_t t_start,
                                    const RepresentationConfig& cfg, double center_u,
                                    double center_v, int sensor_w, int sensor_h) {
    cfg.validate();
    detail::check_slice_sorted(slice);
    detail::check_center(center_u, center_v, sensor_w, sensor_h);
    const int r = cfg.patch_radius;
    const int side = 2 * r + 1;
    const int bins = cfg.bins_per_polarity;
    const std::int64_t cx = std::llround(center_u);
    const std::int64_t cy = std::llround(center_v);

    PatchTensor patch(bins, side, side, ChannelSemantics::voxel_grid);
    for (const Event& e : slice) {
        std::int64_t dt = e.t - t_start;
        if (dt < 0 || dt >= cfg.window_us) continue;
        std::int64_t px = static_cast<std::int64_t>(e.x) - (cx - r);
        std::int64_t py = static_cast<std::int64_t>(e.y) - (cy - r);
        if (px < 0 || py < 0 || px >= side || py >= side) continue;
        double p = e.polarity > 0 ? 1.0 : -1.0;
        int yy = static_cast<int>(py), xx = static_cast<int>(px);
        if (bins == 1) {
            patch.at(0, yy, xx) += p;
            continue;
        }
        double ts = static_cast<double>(dt) / static_cast<double>(cfg.window_us) * (bins - 1);
        int k0 = std::min(bins - 2, static_cast<int>(std::floor(ts)));
        double w1 = ts - k0;
        patch.at(k0, yy, xx) += p * (1.0 - w1);
        patch.at(k0 + 1, yy, xx) += p * w1;
    }
    return detail::fractional_shift(patch, center_u - cx, center_v - cy);
}

// Bilinear patch extraction at a continuous center; zero outside bounds.
// Throws when the patch footprint has no overlap with the image at all.
inline PatchTensor extract_patch(const Image& img, double center_u, double center_v,
                                 int radius) {
    if (img.empty()) throw std::invalid_argument("extract_patch: empty image");
    if (radius < 1) throw std::invalid_argument("extract_patch: radius must be >= 1");
    if (center_u + radius < 0 || center_u - radius > img.width() - 1 ||
        center_v + radius < 0 || center_v - radius > img.height() - 1)
        throw std::out_of_range("extract_patch: patch fully outside image");
    int side = 2 * radius + 1;
    PatchTensor out(1, side, side, ChannelSemantics::grayscale);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            out.at(0, y, x) = img.sample(center_u + x - radius, center_v + y - radius);
    return out;
}

}  // namespace evtrk
