#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace evtrk {

// Grayscale image, double-valued, row-major.
class Image {
public:
    Image() = default;
    Image(int height, int width, double fill = 0.0)
        : h_(height), w_(width), data_(static_cast<size_t>(height) * width, fill) {
        if (height <= 0 || width <= 0) throw std::invalid_argument("Image: bad size");
    }

    int height() const { return h_; }
    int width() const { return w_; }
    double& at(int y, int x) { return data_[static_cast<size_t>(y) * w_ + x]; }
    double at(int y, int x) const { return data_[static_cast<size_t>(y) * w_ + x]; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }
    bool empty() const { return data_.empty(); }

    // Bilinear sample at continuous (u, v) = (column, row); zero outside.
    double sample(double u, double v) const {
        if (u <= -1.0 || v <= -1.0 || u >= w_ || v >= h_) return 0.0;
        int x0 = static_cast<int>(std::floor(u));
        int y0 = static_cast<int>(std::floor(v));
        double fx = u - x0, fy = v - y0;
        auto px = [&](int y, int x) -> double {
            if (x < 0 || y < 0 || x >= w_ || y >= h_) return 0.0;
            return at(y, x);
        };
        return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
               fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
    }

private:
    int h_ = 0, w_ = 0;
    std::vector<double> data_;
};

// --- PGM (P5, 8-bit) ----------------------------------------------------

inline void save_pgm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<unsigned char> row(img.width());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            double v = std::clamp(img.at(y, x), 0.0, 1.0);
            row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Image load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error("not a P5 PGM: " + path);
    auto next_int = [&]() {
        int v;
        while (in >> std::ws && in.peek() == '#') {
            std::string comment;
            std::getline(in, comment);
        }
        if (!(in >> v)) throw std::runtime_error("bad PGM header: " + path);
        return v;
    };
    int w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw std::runtime_error("unsupported PGM maxval: " + path);
    in.get();  // single whitespace after maxval
    Image img(h, w);
    std::vector<unsigned char> row(w);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), w);
        if (!in) throw std::runtime_error("truncated PGM: " + path);
        for (int x = 0; x < w; ++x) img.at(y, x) = row[x] / 255.0;
    }
    return img;
}

// --- filtering / pyramid ------------------------------------------------

// 5-tap binomial blur then 2:1 decimation.
inline Image downsample_half(const Image& src) {
    static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    int h = src.height(), w = src.width();
    Image tmp(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -2; i <= 2; ++i) {
                int xx = std::clamp(x + i, 0, w - 1);
                acc += k[i + 2] * src.at(y, xx);
            }
            tmp.at(y, x) = acc;
        }
    Image blurred(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -2; i <= 2; ++i) {
                int yy = std::clamp(y + i, 0, h - 1);
                acc += k[i + 2] * tmp.at(yy, x);
            }
            blurred.at(y, x) = acc;
        }
    Image out((h + 1) / 2, (w + 1) / 2);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) out.at(y, x) = blurred.at(2 * y, 2 * x);
    return out;
}

inline void sobel_gradients(const Image& img, Image& gx, Image& gy) {
    int h = img.height(), w = img.width();
    gx = Image(h, w);
    gy = Image(h, w);
    auto px = [&](int y, int x) { return img.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            gx.at(y, x) = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1) -
                           px(y - 1, x - 1) - 2 * px(y, x - 1) - px(y + 1, x - 1)) /
                          8.0;
            gy.at(y, x) = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1) -
                           px(y - 1, x - 1) - 2 * px(y - 1, x) - px(y - 1, x + 1)) /
                          8.0;
        }
}

inline Image gaussian_blur(const Image& src, double sigma) {
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    int h = src.height(), w = src.width();
    Image tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * src.at(y, std::clamp(x + i, 0, w - 1));
            tmp.at(y, x) = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * tmp.at(std::clamp(y + i, 0, h - 1), x);
            out.at(y, x) = acc;
        }
    return out;
}

// --- Harris corners ------------------------------------------------------

struct Corner {
    double u, v;
    double response;
};

// Harris response with k=0.04, Gaussian-smoothed structure tensor,
// non-max suppression, strongest first.
inline std::vector<Corner> harris_corners(const Image& img, int max_corners, int border_margin,
                                          double k = 0.04, int nms_radius = 5) {
    Image gx, gy;
    sobel_gradients(img, gx, gy);
    int h = img.height(), w = img.width();
    Image ixx(h, w), iyy(h, w), ixy(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double dx = gx.at(y, x), dy = gy.at(y, x);
            ixx.at(y, x) = dx * dx;
            iyy.at(y, x) = dy * dy;
            ixy.at(y, x) = dx * dy;
        }
    ixx = gaussian_blur(ixx, 1.5);
    iyy = gaussian_blur(iyy, 1.5);
    ixy = gaussian_blur(ixy, 1.5);
    Image resp(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double a = ixx.at(y, x), b = ixy.at(y, x), c = iyy.at(y, x);
            double det = a * c - b * b;
            double tr = a + c;
            resp.at(y, x) = det - k * tr * tr;
        }
    std::vector<Corner> all;
    for (int y = border_margin; y < h - border_margin; ++y)
        for (int x = border_margin; x < w - border_margin; ++x) {
            double r = resp.at(y, x);
            if (r <= 0.0) continue;
            bool maximal = true;
            for (int dy = -nms_radius; dy <= nms_radius && maximal; ++dy)
                for (int dx = -nms_radius; dx <= nms_radius; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
                    if (resp.at(yy, xx) > r) {
                        maximal = false;
                        break;
                    }
                }
            if (maximal) all.push_back({static_cast<double>(x), static_cast<double>(y), r});
        }
    std::sort(all.begin(), all.end(), [](const Corner& a, const Corner& b) {
        if (a.response != b.response) return a.response > b.response;
        return a.v != b.v ? a.v < b.v : a.u < b.u;
    });
    if (static_cast<int>(all.size()) > max_corners) all.resize(max_corners);
    return all;
}

}  // namespace evtrk
