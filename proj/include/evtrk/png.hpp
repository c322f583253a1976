#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtrk/image.hpp"
#include "evtrk/track.hpp"

namespace evtrk {

// Minimal RGB8 canvas for track overlays.
struct Canvas {
    int width = 0, height = 0;
    std::vector<unsigned char> rgb;

    Canvas(int h, int w) : width(w), height(h), rgb(static_cast<size_t>(3) * h * w, 0) {}

    static Canvas from_image(const Image& img) {
        Canvas c(img.height(), img.width());
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x) {
                auto v = static_cast<unsigned char>(
                    std::lround(std::clamp(img.at(y, x), 0.0, 1.0) * 255.0));
                size_t i = 3 * (static_cast<size_t>(y) * img.width() + x);
                c.rgb[i] = c.rgb[i + 1] = c.rgb[i + 2] = v;
            }
        return c;
    }

    void set(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
        if (x < 0 || y < 0 || x >= width || y >= height) return;
        size_t i = 3 * (static_cast<size_t>(y) * width + x);
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }

    void line(int x0, int y0, int x1, int y1, unsigned char r, unsigned char g,
              unsigned char b) {
        int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void cross(int x, int y, int arm, unsigned char r, unsigned char g, unsigned char b) {
        for (int d = -arm; d <= arm; ++d) {
            set(x + d, y, r, g, b);
            set(x, y + d, r, g, b);
        }
    }
};

inline void feature_color(int id, unsigned char& r, unsigned char& g, unsigned char& b) {
    double hue = std::fmod(id * 0.61803398875, 1.0) * 6.0;
    int i = static_cast<int>(hue);
    double f = hue - i;
    auto to8 = [](double v) { return static_cast<unsigned char>(std::lround(v * 255.0)); };
    double p = 0.15, q = 1.0 - 0.85 * f, t = 0.15 + 0.85 * f;
    switch (i % 6) {
        case 0: r = to8(1.0); g = to8(t); b = to8(p); break;
        case 1: r = to8(q); g = to8(1.0); b = to8(p); break;
        case 2: r = to8(p); g = to8(1.0); b = to8(t); break;
        case 3: r = to8(p); g = to8(q); b = to8(1.0); break;
        case 4: r = to8(t); g = to8(p); b = to8(1.0); break;
        default: r = to8(1.0); g = to8(p); b = to8(q); break;
    }
}

inline void save_png(const Canvas& canvas, const std::string& path) {
    // filter byte 0 per scanline, one zlib stream, standard chunk layout
    std::vector<unsigned char> raw;
    raw.reserve((static_cast<size_t>(canvas.width) * 3 + 1) * canvas.height);
    for (int y = 0; y < canvas.height; ++y) {
        raw.push_back(0);
        const unsigned char* row = canvas.rgb.data() + static_cast<size_t>(y) * canvas.width * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(canvas.width) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) !=
        Z_OK)
        throw std::runtime_error("png: deflate failed");
    compressed.resize(bound);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    auto be32 = [](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
        return std::string(reinterpret_cast<char*>(b), 4);
    };
    auto chunk = [&](const char type[5], const std::string& data) {
        out << be32(static_cast<std::uint32_t>(data.size()));
        std::string body = std::string(type, 4) + data;
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                          static_cast<uInt>(body.size()));
        out << be32(static_cast<std::uint32_t>(crc));
    };
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.write(reinterpret_cast<const char*>(sig), 8);
    std::string ihdr = be32(static_cast<std::uint32_t>(canvas.width)) +
                       be32(static_cast<std::uint32_t>(canvas.height));
    ihdr += static_cast<char>(8);  // bit depth
    ihdr += static_cast<char>(2);  // truecolor
    ihdr += static_cast<char>(0);
    ihdr += static_cast<char>(0);
    ihdr += static_cast<char>(0);
    chunk("IHDR", ihdr);
    chunk("IDAT", std::string(reinterpret_cast<char*>(compressed.data()), compressed.size()));
    chunk("IEND", "");
    if (!out) throw std::runtime_error("png write failed: " + path);
}

// Track history up to `t_until` drawn over a frame.
inline Canvas render_tracks(const Image& frame, const std::vector<FeatureTrack>& tracks,
                            std::int64_t t_until) {
    Canvas canvas = Canvas::from_image(frame);
    for (const FeatureTrack& tr : tracks) {
        unsigned char r, g, b;
        feature_color(tr.feature_id, r, g, b);
        const TrackSample* prev = nullptr;
        const TrackSample* last = nullptr;
        for (const TrackSample& s : tr.samples) {
            if (s.t_us > t_until) break;
            if (prev != nullptr)
                canvas.line(static_cast<int>(std::lround(prev->u)),
                            static_cast<int>(std::lround(prev->v)),
                            static_cast<int>(std::lround(s.u)),
                            static_cast<int>(std::lround(s.v)), r, g, b);
            prev = &s;
            last = &s;
        }
        if (last != nullptr)
            canvas.cross(static_cast<int>(std::lround(last->u)),
                         static_cast<int>(std::lround(last->v)), 2, r, g, b);
    }
    return canvas;
}

}  // namespace evtrk
