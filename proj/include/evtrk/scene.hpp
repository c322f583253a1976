#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtrk/camera.hpp"
#include "evtrk/image.hpp"
#include "evtrk/tensor.hpp"
#include "evtrk/track.hpp"

namespace evtrk {

struct TextureConfig {
    int size = 192;      // texels per side
    int cell = 7;        // noise cell size in texels
    double lo = 0.08;
    double hi = 0.92;
    double blur = 0.8;
};

// Fronto-parallel camera path over the textured plane z = 0: sinusoidal
// translation, optional linear drift, and rotation about the optical axis.
struct TrajectoryConfig {
    double lin_x = 0.0, lin_y = 0.0;    // m/s
    double amp_x = 0.0, amp_y = 0.0, amp_z = 0.0;  // m
    double freq_x = 1.0, freq_y = 1.3, freq_z = 0.8;  // Hz
    double rot_amp_deg = 0.0;
    double rot_freq = 0.7;
};

struct SceneConfig {
    int width = 64, height = 64;
    double focal = 80.0;       // pixels
    double distance = 2.0;     // camera-to-plane distance, meters
    double duration_s = 0.3;
    double sim_rate_hz = 1000.0;   // micro-frame rate driving event generation
    double pose_rate_hz = 100.0;   // pose / ground-truth-track rate
    double frame_rate_hz = 100.0;  // stored grayscale frames
    double contrast_threshold = 0.2;
    std::uint64_t seed = 1;
    int n_features = 12;
    int feature_margin = 10;  // px from the border for seeded corners
    double plane_extent_factor = 3.0;  // texture extent over the initial view extent
    double noise_sigma_c = 0.0;        // per-pixel threshold jitter, relative
    double background_rate_hz = 0.0;   // per-pixel background activity
    TextureConfig texture;
    TrajectoryConfig trajectory;

    void validate() const {
        if (!(contrast_threshold > 0.0)) throw std::invalid_argument("contrast threshold > 0");
        if (!(duration_s > 0.0)) throw std::invalid_argument("duration > 0");
    }
};

struct SyntheticSequence {
    CameraModel cam;
    std::vector<Pose> poses;                           // at pose rate
    std::vector<std::pair<std::int64_t, Image>> frames;  // stored frames
    std::vector<FeatureTrack> gt_tracks;               // at pose timestamps
    std::vector<Eigen::Vector3d> scene_points;         // triangulated-from per track
    EventStream events;
};

namespace detail {

inline Image make_texture(const TextureConfig& cfg, Rng& rng) {
    int cells = (cfg.size + cfg.cell - 1) / cfg.cell + 2;
    std::vector<double> grid(static_cast<size_t>(cells) * cells);
    for (double& v : grid) v = rng.uniform(cfg.lo, cfg.hi);
    Image tex(cfg.size, cfg.size);
    for (int y = 0; y < cfg.size; ++y)
        for (int x = 0; x < cfg.size; ++x) {
            double gu = static_cast<double>(x) / cfg.cell;
            double gv = static_cast<double>(y) / cfg.cell;
            int x0 = static_cast<int>(gu), y0 = static_cast<int>(gv);
            double fx = gu - x0, fy = gv - y0;
            auto g = [&](int yy, int xx) { return grid[static_cast<size_t>(yy) * cells + xx]; };
            tex.at(y, x) = (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x0 + 1)) +
                           fy * ((1 - fx) * g(y0 + 1, x0) + fx * g(y0 + 1, x0 + 1));
        }
    if (cfg.blur > 0.0) tex = gaussian_blur(tex, cfg.blur);
    return tex;
}

}  // namespace detail

// Planar-scene renderer. The textured plane sits at z = 0; every frame is an
// exact homography warp of the texture, so rendered tracks and projected
// scene points agree to numerical precision.
class PlanarScene {
public:
    explicit PlanarScene(const SceneConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng(cfg.seed);
        texture_ = detail::make_texture(cfg.texture, rng);
        cam_.fx = cam_.fy = cfg.focal;
        cam_.cx = 0.5 * (cfg.width - 1);
        cam_.cy = 0.5 * (cfg.height - 1);
        cam_.width = cfg.width;
        cam_.height = cfg.height;
        double view_extent = cfg.width * cfg.distance / cfg.focal;
        extent_m_ = cfg.plane_extent_factor * view_extent;
        mpt_ = extent_m_ / cfg.texture.size;
    }

    const CameraModel& camera() const { return cam_; }

    Pose pose_at(double t_s) const {
        const TrajectoryConfig& tj = cfg_.trajectory;
        double two_pi = 2.0 * M_PI;
        Eigen::Vector3d center(
            tj.lin_x * t_s + tj.amp_x * std::sin(two_pi * tj.freq_x * t_s),
            tj.lin_y * t_s + tj.amp_y * std::sin(two_pi * tj.freq_y * t_s),
            -cfg_.distance + tj.amp_z * std::sin(two_pi * tj.freq_z * t_s));
        double theta = tj.rot_amp_deg * M_PI / 180.0 * std::sin(two_pi * tj.rot_freq * t_s);
        Eigen::Matrix3d rz = Eigen::AngleAxisd(theta, Eigen::Vector3d::UnitZ()).toRotationMatrix();
        Pose p;
        p.R = rz.transpose();
        p.T = -p.R * center;
        p.t_us = static_cast<std::int64_t>(std::llround(t_s * 1e6));
        return p;
    }

    Image render(const Pose& pose) const {
        Image frame(cfg_.height, cfg_.width);
        Eigen::Matrix3d rt = pose.R.transpose();
        Eigen::Vector3d c = pose.center();
        for (int v = 0; v < cfg_.height; ++v)
            for (int u = 0; u < cfg_.width; ++u) {
                Eigen::Vector3d dir((u - cam_.cx) / cam_.fx, (v - cam_.cy) / cam_.fy, 1.0);
                Eigen::Vector3d dw = rt * dir;
                if (dw.z() <= 1e-12)
                    throw std::runtime_error("plane leaves frustum at t_us=" +
                                             std::to_string(pose.t_us));
                double s = -c.z() / dw.z();
                Eigen::Vector3d x = c + s * dw;
                double tu = (x.x() + extent_m_ / 2) / mpt_;
                double tv = (x.y() + extent_m_ / 2) / mpt_;
                if (tu < 1 || tv < 1 || tu > texture_.width() - 2 || tv > texture_.height() - 2)
                    throw std::runtime_error("view leaves the textured plane at t_us=" +
                                             std::to_string(pose.t_us));
                frame.at(v, u) = texture_.sample(tu, tv);
            }
        return frame;
    }

    // World point on the plane backprojected from a pixel of a pose.
    Eigen::Vector3d backproject(const Pose& pose, double u, double v) const {
        Eigen::Vector3d dir((u - cam_.cx) / cam_.fx, (v - cam_.cy) / cam_.fy, 1.0);
        Eigen::Vector3d dw = pose.R.transpose() * dir;
        Eigen::Vector3d c = pose.center();
        double s = -c.z() / dw.z();
        return c + s * dw;
    }

private:
    SceneConfig cfg_;
    Image texture_;
    CameraModel cam_;
    double extent_m_ = 0.0;
    double mpt_ = 0.0;  // meters per texel
};

// Frames + poses + ground-truth tracks (events are generated separately).
// Ground-truth tracks are exact projections of fixed plane points picked by
// Harris corners in the first frame.
inline SyntheticSequence render_sequence(const SceneConfig& cfg) {
    PlanarScene scene(cfg);
    SyntheticSequence seq;
    seq.cam = scene.camera();

    int n_poses = static_cast<int>(std::llround(cfg.duration_s * cfg.pose_rate_hz)) + 1;
    for (int j = 0; j < n_poses; ++j) seq.poses.push_back(scene.pose_at(j / cfg.pose_rate_hz));

    int n_frames = static_cast<int>(std::llround(cfg.duration_s * cfg.frame_rate_hz)) + 1;
    for (int j = 0; j < n_frames; ++j) {
        Pose p = scene.pose_at(j / cfg.frame_rate_hz);
        seq.frames.emplace_back(p.t_us, scene.render(p));
    }

    const Image& first = seq.frames.front().second;
    auto corners = harris_corners(first, cfg.n_features, cfg.feature_margin);
    int id = 0;
    for (const Corner& c : corners) {
        Eigen::Vector3d x = scene.backproject(seq.poses.front(), c.u, c.v);
        FeatureTrack track;
        track.feature_id = id++;
        for (const Pose& pose : seq.poses) {
            Eigen::Vector2d uv = project(seq.cam, pose, x);
            track.append(pose.t_us, uv.x(), uv.y());
        }
        seq.gt_tracks.push_back(std::move(track));
        seq.scene_points.push_back(x);
    }
    return seq;
}

}  // namespace evtrk
