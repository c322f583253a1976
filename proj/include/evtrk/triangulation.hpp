#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evtrk/camera.hpp"
#include "evtrk/track.hpp"

namespace evtrk {

struct DegenerateTriangulation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Observation {
    int pose_index = 0;
    Eigen::Vector2d uv = Eigen::Vector2d::Zero();
};

namespace detail {

// Fixed isotropic conditioning derived from the intrinsics: shift by the
// principal point, scale by the mean focal length. Constant per camera, so
// gradients pass through it unchanged up to the scale factor.
struct DltNormalization {
    double f_mean;
    double cx, cy;

    explicit DltNormalization(const CameraModel& cam)
        : f_mean(0.5 * (cam.fx + cam.fy)), cx(cam.cx), cy(cam.cy) {}

    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d t;
        t << 1.0 / f_mean, 0, -cx / f_mean, 0, 1.0 / f_mean, -cy / f_mean, 0, 0, 1;
        return t;
    }
    Eigen::Vector2d apply(const Eigen::Vector2d& uv) const {
        return {(uv.x() - cx) / f_mean, (uv.y() - cy) / f_mean};
    }
};

}  // namespace detail

// Homogeneous DLT linear system for one point: two rows per observation,
// (u*m3 - m1) and (v*m3 - m2), in intrinsics-normalized coordinates; solved
// through the right singular vector of the smallest singular value.
// Keeps everything needed to push gradients back to the observations.
class DltSystem {
public:
    DltSystem(std::span<const Observation> observations, std::span<const Pose> poses,
              const CameraModel& cam)
        : norm_(cam) {
        if (observations.size() < 2)
            throw std::invalid_argument("triangulation needs at least 2 observations");
        cam.validate();
        Eigen::Matrix3d t = norm_.matrix();
        bool distinct_centers = false;
        Eigen::Vector3d first_center = poses[observations[0].pose_index].center();
        a_.resize(2 * observations.size(), 4);
        m3_.reserve(observations.size());
        for (size_t i = 0; i < observations.size(); ++i) {
            const Observation& obs = observations[i];
            if (obs.pose_index < 0 || static_cast<size_t>(obs.pose_index) >= poses.size())
                throw std::invalid_argument("observation references unknown pose");
            const Pose& pose = poses[obs.pose_index];
            if ((pose.center() - first_center).norm() > 1e-12) distinct_centers = true;
            ProjectionMatrix m = t * projection_matrix(cam, pose);
            Eigen::Vector2d uvn = norm_.apply(obs.uv);
            a_.row(2 * i) = uvn.x() * m.row(2) - m.row(0);
            a_.row(2 * i + 1) = uvn.y() * m.row(2) - m.row(1);
            m3_.push_back(m.row(2).transpose());
        }
        if (!distinct_centers)
            throw DegenerateTriangulation("all observations share one camera center");

        Eigen::Matrix4d s = a_.transpose() * a_;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(s);
        lambda_ = eig.eigenvalues();  // ascending
        vecs_ = eig.eigenvectors();
        double scale = std::max(lambda_(3), 1e-300);
        if (lambda_(1) < 1e-18 * scale)
            throw DegenerateTriangulation("rank-deficient system (degenerate geometry)");
        Eigen::Vector4d xh = vecs_.col(0);
        if (std::abs(xh(3)) < 1e-12 * xh.norm())
            throw DegenerateTriangulation("triangulated point at infinity");
        xh_ = xh;
        x_ = xh.head<3>() / xh(3);
    }

    const Eigen::Vector3d& point() const { return x_; }

    // Gradient of a scalar loss with respect to each observation's (u, v),
    // given the gradient with respect to the 3-D point. Differentiates the
    // dehomogenization and the smallest eigenvector of A^T A.
    std::vector<Eigen::Vector2d> grad_observations(const Eigen::Vector3d& dX) const {
        double w = xh_(3);
        Eigen::Vector4d dxh;
        dxh.head<3>() = dX / w;
        dxh(3) = -dX.dot(x_) / w;
        // remove the component along the eigenvector (unit-norm constraint)
        dxh -= xh_.dot(dxh) * xh_;
        Eigen::Vector4d f = Eigen::Vector4d::Zero();
        for (int k = 1; k < 4; ++k) {
            double denom = lambda_(0) - lambda_(k);
            if (std::abs(denom) < 1e-30) continue;
            f += (vecs_.col(k).dot(dxh) / denom) * vecs_.col(k);
        }
        Eigen::MatrixX4d da = a_ * (xh_ * f.transpose() + f * xh_.transpose());
        std::vector<Eigen::Vector2d> grads(m3_.size());
        for (size_t i = 0; i < m3_.size(); ++i) {
            double du = da.row(2 * i).dot(m3_[i]);
            double dv = da.row(2 * i + 1).dot(m3_[i]);
            grads[i] = Eigen::Vector2d(du, dv) / norm_.f_mean;
        }
        return grads;
    }

private:
    detail::DltNormalization norm_;
    Eigen::MatrixX4d a_;
    std::vector<Eigen::Vector4d> m3_;
    Eigen::Vector4d lambda_;
    Eigen::Matrix4d vecs_;
    Eigen::Vector4d xh_;
    Eigen::Vector3d x_;
};

// DLT triangulation via SVD of the stacked system.
inline Eigen::Vector3d triangulate_dlt(std::span<const Observation> observations,
                                       std::span<const Pose> poses, const CameraModel& cam) {
    DltSystem system(observations, poses, cam);
    return system.point();
}

struct GtTrackReport {
    int dropped = 0;
    std::vector<std::string> messages;
};

// Triangulate each track over all its pose-timestamped observations and
// replace it by the reprojection of the recovered 3-D point, which filters
// independent per-frame tracking noise out of the input tracks.
inline std::vector<FeatureTrack> generate_gt_tracks(const std::vector<FeatureTrack>& tracks,
                                                    std::span<const Pose> poses,
                                                    const CameraModel& cam,
                                                    GtTrackReport* report = nullptr) {
    std::map<std::int64_t, int> pose_at;
    for (size_t i = 0; i < poses.size(); ++i) pose_at[poses[i].t_us] = static_cast<int>(i);
    std::vector<FeatureTrack> out;
    for (const FeatureTrack& track : tracks) {
        std::vector<Observation> obs;
        for (const TrackSample& s : track.samples) {
            auto it = pose_at.find(s.t_us);
            if (it == pose_at.end() || !s.alive) continue;
            obs.push_back({it->second, {s.u, s.v}});
        }
        try {
            if (obs.size() < 2)
                throw DegenerateTriangulation("fewer than 2 pose-aligned observations");
            Eigen::Vector3d x = triangulate_dlt(obs, poses, cam);
            FeatureTrack gt;
            gt.feature_id = track.feature_id;
            for (const Pose& pose : poses) {
                if (pose.t_us < track.t_begin() || pose.t_us > track.t_end()) continue;
                Eigen::Vector2d uv = project(cam, pose, x);
                gt.append(pose.t_us, uv.x(), uv.y());
            }
            if (gt.samples.size() < 2)
                throw DegenerateTriangulation("track span covers fewer than 2 poses");
            out.push_back(std::move(gt));
        } catch (const std::exception& e) {
            if (report != nullptr) {
                ++report->dropped;
                report->messages.push_back("track " + std::to_string(track.feature_id) + ": " +
                                           e.what());
            }
        }
    }
    return out;
}

}  // namespace evtrk
