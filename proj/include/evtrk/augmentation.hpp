#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "evtrk/representation.hpp"
#include "evtrk/tensor.hpp"

namespace evtrk {

struct AugmentationParams {
    double theta_r = 0.0;                              // radians, CCW in image coords
    Eigen::Vector2d theta_t = Eigen::Vector2d::Zero();  // pixels
    double theta_s = 1.0;                              // isotropic scale

    void validate() const {
        if (!(theta_s > 0.0)) throw std::invalid_argument("theta_s must be positive");
    }
};

// Sampling ranges; the defaults follow the R15 S10 T3 setting.
struct AugmentationRanges {
    double rot_deg = 15.0;
    double scale_pct = 10.0;
    double trans_px = 3.0;

    AugmentationParams sample(Rng& rng) const {
        AugmentationParams p;
        p.theta_r = rng.uniform(-rot_deg, rot_deg) * M_PI / 180.0;
        p.theta_s = 1.0 + rng.uniform(-scale_pct, scale_pct) / 100.0;
        p.theta_t = {rng.uniform(-trans_px, trans_px), rng.uniform(-trans_px, trans_px)};
        return p;
    }
    bool empty() const { return rot_deg == 0.0 && scale_pct == 0.0 && trans_px == 0.0; }
};

// Affine warp acting about the patch center: p' = A (p - c) + c + t with
// A = s R(theta_r). Displacements transform as center-origin points, so the
// translation is included in both directions.
struct AffineWarp {
    Eigen::Matrix2d a = Eigen::Matrix2d::Identity();
    Eigen::Vector2d t = Eigen::Vector2d::Zero();

    static AffineWarp from_params(const AugmentationParams& p) {
        p.validate();
        AffineWarp w;
        double c = std::cos(p.theta_r), s = std::sin(p.theta_r);
        w.a << p.theta_s * c, -p.theta_s * s, p.theta_s * s, p.theta_s * c;
        w.t = p.theta_t;
        if (std::abs(w.a.determinant()) <= 1e-9)
            throw std::invalid_argument("augmentation warp is not invertible");
        return w;
    }

    bool is_identity() const {
        return a.isIdentity(0.0) && t.x() == 0.0 && t.y() == 0.0;
    }

    Eigen::Vector2d forward_displacement(const Eigen::Vector2d& d) const { return a * d + t; }
    Eigen::Vector2d inverse_displacement(const Eigen::Vector2d& d) const {
        return a.inverse() * (d - t);
    }
};

enum class WarpDirection { forward, inverse };

inline Eigen::Vector2d map_displacement(const Eigen::Vector2d& d, const AffineWarp& warp,
                                        WarpDirection dir) {
    if (std::abs(warp.a.determinant()) <= 1e-9)
        throw std::invalid_argument("map_displacement: warp is not invertible");
    return dir == WarpDirection::forward ? warp.forward_displacement(d)
                                         : warp.inverse_displacement(d);
}

// Resamples the patch through the warp about its center, bilinear with zero
// padding. The identity warp returns the patch bit-exactly.
inline PatchTensor apply_augmentation(const PatchTensor& patch, const AugmentationParams& theta,
                                      AffineWarp* warp_out = nullptr) {
    AffineWarp warp = AffineWarp::from_params(theta);
    if (warp_out != nullptr) *warp_out = warp;
    if (warp.is_identity()) return patch;
    PatchTensor out(patch.channels, patch.height, patch.width, patch.semantics);
    Eigen::Matrix2d ainv = warp.a.inverse();
    double cx = 0.5 * (patch.width - 1);
    double cy = 0.5 * (patch.height - 1);
    for (int y = 0; y < patch.height; ++y)
        for (int x = 0; x < patch.width; ++x) {
            Eigen::Vector2d q(x - cx, y - cy);
            Eigen::Vector2d src = ainv * (q - warp.t);
            double su = src.x() + cx, sv = src.y() + cy;
            int x0 = static_cast<int>(std::floor(su));
            int y0 = static_cast<int>(std::floor(sv));
            double fx = su - x0, fy = sv - y0;
            for (int c = 0; c < patch.channels; ++c) {
                auto px = [&](int yy, int xx) -> double {
                    if (xx < 0 || yy < 0 || xx >= patch.width || yy >= patch.height) return 0.0;
                    return patch.at(c, yy, xx);
                };
                out.at(c, y, x) = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                                  fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
            }
        }
    return out;
}

}  // namespace evtrk
