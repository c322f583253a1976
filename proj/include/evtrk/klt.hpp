#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "evtrk/image.hpp"

namespace evtrk {

struct KltConfig {
    int levels = 3;
    int window = 21;  // finest-level window side, odd
    int max_iters = 30;
    double eps = 0.01;  // convergence threshold on the update norm, pixels
};

struct KltResult {
    Eigen::Vector2d pos = Eigen::Vector2d::Zero();
    bool ok = false;
    int iters = 0;
    double residual = 0.0;  // mean absolute error over the window at the end
};

namespace detail {

inline std::vector<Image> build_pyramid(const Image& img, int levels) {
    std::vector<Image> pyr;
    pyr.push_back(img);
    for (int l = 1; l < levels; ++l) pyr.push_back(downsample_half(pyr.back()));
    return pyr;
}

}  // namespace detail

// Pyramidal inverse-compositional Lucas-Kanade, translation only. The
// template window and its gradients come from the previous image, so the
// Hessian is fixed per level. Points whose window leaves the image are
// reported lost, never thrown.
inline std::vector<KltResult> klt_track(const Image& img_prev, const Image& img_next,
                                        std::span<const Eigen::Vector2d> points,
                                        std::span<const Eigen::Vector2d> initial_guess,
                                        const KltConfig& cfg = {}) {
    if (img_prev.height() != img_next.height() || img_prev.width() != img_next.width())
        throw std::invalid_argument("klt_track: image sizes differ");
    if (!initial_guess.empty() && initial_guess.size() != points.size())
        throw std::invalid_argument("klt_track: guess count mismatch");
    auto pyr_prev = detail::build_pyramid(img_prev, cfg.levels);
    auto pyr_next = detail::build_pyramid(img_next, cfg.levels);
    // window shrinks with the pyramid so its physical extent stays constant
    auto level_radius = [&](int level) { return std::max(2, (cfg.window / 2) >> level); };

    std::vector<KltResult> results(points.size());
    for (size_t pi = 0; pi < points.size(); ++pi) {
        Eigen::Vector2d p = points[pi];
        Eigen::Vector2d guess =
            initial_guess.empty() ? Eigen::Vector2d::Zero() : initial_guess[pi];
        double top_scale = std::pow(2.0, cfg.levels - 1);
        Eigen::Vector2d d = guess / top_scale;
        bool lost = false;
        bool converged = false;
        int iters_total = 0;
        double residual = 0.0;

        for (int level = cfg.levels - 1; level >= 0; --level) {
            const Image& prev = pyr_prev[level];
            const Image& next = pyr_next[level];
            double scale = std::pow(2.0, level);
            Eigen::Vector2d pl = p / scale;
            int r = level_radius(level);

            if (pl.x() - r - 1 < 0 || pl.y() - r - 1 < 0 || pl.x() + r + 1 > prev.width() - 1 ||
                pl.y() + r + 1 > prev.height() - 1) {
                lost = true;
                break;
            }

            int side = 2 * r + 1;
            std::vector<double> tmpl(side * side), gx(side * side), gy(side * side);
            Eigen::Matrix2d hessian = Eigen::Matrix2d::Zero();
            for (int y = -r; y <= r; ++y)
                for (int x = -r; x <= r; ++x) {
                    double u = pl.x() + x, v = pl.y() + y;
                    size_t i = static_cast<size_t>(y + r) * side + (x + r);
                    tmpl[i] = prev.sample(u, v);
                    gx[i] = 0.5 * (prev.sample(u + 1, v) - prev.sample(u - 1, v));
                    gy[i] = 0.5 * (prev.sample(u, v + 1) - prev.sample(u, v - 1));
                    hessian(0, 0) += gx[i] * gx[i];
                    hessian(0, 1) += gx[i] * gy[i];
                    hessian(1, 1) += gy[i] * gy[i];
                }
            hessian(1, 0) = hessian(0, 1);
            if (std::abs(hessian.determinant()) < 1e-12) {
                lost = true;
                break;
            }
            Eigen::Matrix2d hinv = hessian.inverse();

            converged = false;
            for (int it = 0; it < cfg.max_iters; ++it) {
                ++iters_total;
                Eigen::Vector2d target = pl + d;
                if (target.x() - r < 0 || target.y() - r < 0 ||
                    target.x() + r > next.width() - 1 || target.y() + r > next.height() - 1) {
                    lost = true;
                    break;
                }
                Eigen::Vector2d b = Eigen::Vector2d::Zero();
                double err_acc = 0.0;
                for (int y = -r; y <= r; ++y)
                    for (int x = -r; x <= r; ++x) {
                        size_t i = static_cast<size_t>(y + r) * side + (x + r);
                        double e = next.sample(target.x() + x, target.y() + y) - tmpl[i];
                        b.x() += gx[i] * e;
                        b.y() += gy[i] * e;
                        err_acc += std::abs(e);
                    }
                residual = err_acc / (side * side);
                Eigen::Vector2d delta = hinv * b;
                d -= delta;
                if (delta.norm() < cfg.eps) {
                    converged = true;
                    break;
                }
            }
            if (lost) break;
            if (level > 0) d *= 2.0;
        }

        KltResult res;
        res.iters = iters_total;
        res.residual = residual;
        if (!lost && converged) {
            res.pos = p + d;
            res.ok = true;
            if (res.pos.x() < 0 || res.pos.y() < 0 || res.pos.x() > img_next.width() - 1 ||
                res.pos.y() > img_next.height() - 1)
                res.ok = false;
        } else {
            res.pos = p + d;
            res.ok = false;
        }
        results[pi] = res;
    }
    return results;
}

}  // namespace evtrk
