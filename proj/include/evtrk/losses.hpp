#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "evtrk/camera.hpp"
#include "evtrk/track.hpp"
#include "evtrk/triangulation.hpp"

namespace evtrk {

struct LossReport {
    double value = 0.0;
    std::vector<double> per_step_errors;  // 0 marks truncated (or exact) steps
    int truncated_count = 0;
    int active_count = 0;
};

// Truncated L1 on displacements: per step the L1 error if below the patch
// radius, else zero; the mean runs over the nonzero errors only. A batch
// where every step is truncated yields loss 0.
inline LossReport truncated_l1_loss(std::span<const Eigen::Vector2d> pred,
                                    std::span<const Eigen::Vector2d> gt, double r,
                                    std::vector<Eigen::Vector2d>* grad = nullptr) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("truncated_l1_loss: length mismatch");
    if (!(r > 0.0)) throw std::invalid_argument("truncated_l1_loss: r must be positive");
    LossReport report;
    double sum = 0.0;
    std::vector<Eigen::Vector2d> signs(pred.size(), Eigen::Vector2d::Zero());
    for (size_t j = 0; j < pred.size(); ++j) {
        Eigen::Vector2d d = pred[j] - gt[j];
        double l1 = std::abs(d.x()) + std::abs(d.y());
        if (l1 < r) {
            report.per_step_errors.push_back(l1);
            if (l1 != 0.0) {
                sum += l1;
                ++report.active_count;
                signs[j] = {d.x() > 0 ? 1.0 : (d.x() < 0 ? -1.0 : 0.0),
                            d.y() > 0 ? 1.0 : (d.y() < 0 ? -1.0 : 0.0)};
            }
        } else {
            report.per_step_errors.push_back(0.0);
            ++report.truncated_count;
        }
    }
    report.value = report.active_count > 0 ? sum / report.active_count : 0.0;
    if (grad != nullptr) {
        grad->assign(pred.size(), Eigen::Vector2d::Zero());
        if (report.active_count > 0)
            for (size_t j = 0; j < pred.size(); ++j)
                (*grad)[j] = signs[j] / static_cast<double>(report.active_count);
    }
    return report;
}

struct PoseLossOptions {
    double truncation_radius = 15.0;
    bool skip_first_sample = true;  // the start position is given, not predicted
};

struct PoseLossGrad {
    // same indexing as the input tracks/samples
    std::vector<std::vector<Eigen::Vector2d>> d_position;
};

// Pose-supervision loss: each track is triangulated from its own predicted
// positions at pose timestamps, reprojected everywhere, and penalized with
// the truncated L1 distance between prediction and reprojection, aggregated
// over all tracks and steps. Gradients flow through the reprojection and the
// triangulation itself.
inline LossReport pose_supervision_loss(const std::vector<FeatureTrack>& tracks,
                                        std::span<const Pose> poses, const CameraModel& cam,
                                        const PoseLossOptions& opt,
                                        PoseLossGrad* grad = nullptr,
                                        GtTrackReport* skipped = nullptr) {
    std::map<std::int64_t, int> pose_at;
    for (size_t i = 0; i < poses.size(); ++i) pose_at[poses[i].t_us] = static_cast<int>(i);

    LossReport report;
    if (grad != nullptr) {
        grad->d_position.assign(tracks.size(), {});
        for (size_t i = 0; i < tracks.size(); ++i)
            grad->d_position[i].assign(tracks[i].samples.size(), Eigen::Vector2d::Zero());
    }

    struct TrackWork {
        size_t track_index;
        std::vector<Observation> obs;
        std::vector<size_t> sample_of_obs;
        DltSystem* system = nullptr;
        std::vector<Eigen::Vector2d> reproj;   // per observation
        std::vector<Eigen::Vector2d> sign;     // truncated-L1 signs per observation
        std::vector<bool> active;
    };
    std::vector<TrackWork> work;
    std::vector<std::unique_ptr<DltSystem>> systems;

    double sum = 0.0;
    for (size_t ti = 0; ti < tracks.size(); ++ti) {
        const FeatureTrack& track = tracks[ti];
        TrackWork w;
        w.track_index = ti;
        for (size_t si = 0; si < track.samples.size(); ++si) {
            const TrackSample& s = track.samples[si];
            auto it = pose_at.find(s.t_us);
            if (it == pose_at.end()) continue;
            w.obs.push_back({it->second, {s.u, s.v}});
            w.sample_of_obs.push_back(si);
        }
        if (w.obs.size() < 2) {
            if (skipped != nullptr) {
                ++skipped->dropped;
                skipped->messages.push_back("track " + std::to_string(track.feature_id) +
                                            ": fewer than 2 pose-aligned samples");
            }
            continue;
        }
        try {
            systems.push_back(std::make_unique<DltSystem>(w.obs, poses, cam));
        } catch (const DegenerateTriangulation& e) {
            if (skipped != nullptr) {
                ++skipped->dropped;
                skipped->messages.push_back("track " + std::to_string(track.feature_id) + ": " +
                                            e.what());
            }
            continue;
        }
        w.system = systems.back().get();
        Eigen::Vector3d x = w.system->point();
        for (size_t oi = 0; oi < w.obs.size(); ++oi) {
            bool first = opt.skip_first_sample && w.sample_of_obs[oi] == 0;
            Eigen::Vector2d reproj = project(cam, poses[w.obs[oi].pose_index], x);
            w.reproj.push_back(reproj);
            Eigen::Vector2d d = w.obs[oi].uv - reproj;
            double l1 = std::abs(d.x()) + std::abs(d.y());
            bool active = !first && l1 != 0.0 && l1 < opt.truncation_radius;
            w.active.push_back(active);
            if (first) {
                report.per_step_errors.push_back(0.0);
                w.sign.emplace_back(0, 0);
                continue;
            }
            if (l1 < opt.truncation_radius) {
                report.per_step_errors.push_back(l1);
                if (active) {
                    sum += l1;
                    ++report.active_count;
                }
            } else {
                report.per_step_errors.push_back(0.0);
                ++report.truncated_count;
            }
            w.sign.emplace_back(d.x() > 0 ? 1.0 : (d.x() < 0 ? -1.0 : 0.0),
                                d.y() > 0 ? 1.0 : (d.y() < 0 ? -1.0 : 0.0));
        }
        work.push_back(std::move(w));
    }
    report.value = report.active_count > 0 ? sum / report.active_count : 0.0;

    if (grad != nullptr && report.active_count > 0) {
        double inv_n = 1.0 / report.active_count;
        for (TrackWork& w : work) {
            Eigen::Vector3d dX = Eigen::Vector3d::Zero();
            const Eigen::Vector3d x = w.system->point();
            for (size_t oi = 0; oi < w.obs.size(); ++oi) {
                if (!w.active[oi]) continue;
                Eigen::Vector2d g = w.sign[oi] * inv_n;
                // direct term d|x_hat - reproj|/dx_hat
                grad->d_position[w.track_index][w.sample_of_obs[oi]] += g;
                // indirect term through the reprojected point
                const Pose& pose = poses[w.obs[oi].pose_index];
                Eigen::Vector3d xc = pose.R * x + pose.T;
                Eigen::Matrix<double, 2, 3> jproj;
                jproj.row(0) =
                    cam.fx * (pose.R.row(0) * xc.z() - xc.x() * pose.R.row(2)) / (xc.z() * xc.z());
                jproj.row(1) =
                    cam.fy * (pose.R.row(1) * xc.z() - xc.y() * pose.R.row(2)) / (xc.z() * xc.z());
                dX += jproj.transpose() * (-g);
            }
            if (dX.isZero(0.0)) continue;
            auto obs_grads = w.system->grad_observations(dX);
            for (size_t oi = 0; oi < w.obs.size(); ++oi)
                grad->d_position[w.track_index][w.sample_of_obs[oi]] += obs_grads[oi];
        }
    }
    return report;
}

}  // namespace evtrk
