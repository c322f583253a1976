#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evtrk {

struct CameraModel {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("CameraModel: fx, fy > 0");
    }
    Eigen::Matrix3d K() const {
        Eigen::Matrix3d k;
        k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
        return k;
    }
};

struct BehindCameraError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// World-to-camera transform x_cam = R * X + T at a timestamp.
struct Pose {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d T = Eigen::Vector3d::Zero();
    std::int64_t t_us = 0;

    static Pose from_quaternion(std::int64_t t_us, const Eigen::Vector3d& translation,
                                Eigen::Quaterniond q) {
        q.normalize();
        Pose p;
        p.R = q.toRotationMatrix();
        p.T = translation;
        p.t_us = t_us;
        return p;
    }

    void validate() const {
        if (((R.transpose() * R) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9)
            throw std::invalid_argument("Pose: rotation is not orthonormal");
        if (std::abs(R.determinant() - 1.0) > 1e-9)
            throw std::invalid_argument("Pose: rotation determinant is not +1");
    }

    Eigen::Vector3d center() const { return -R.transpose() * T; }
};

using ProjectionMatrix = Eigen::Matrix<double, 3, 4>;

inline ProjectionMatrix projection_matrix(const CameraModel& cam, const Pose& pose) {
    ProjectionMatrix rt;
    rt.leftCols<3>() = pose.R;
    rt.col(3) = pose.T;
    return cam.K() * rt;
}

// Pinhole projection; requires the point in front of the camera.
inline Eigen::Vector2d project(const CameraModel& cam, const Pose& pose,
                               const Eigen::Vector3d& X) {
    Eigen::Vector3d xc = pose.R * X + pose.T;
    if (xc.z() <= 1e-9) throw BehindCameraError("point behind camera");
    return {cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy};
}

// Lerp on translation, slerp on rotation. t must be inside the pose span.
inline Pose interpolate_pose(std::span<const Pose> poses, std::int64_t t_us) {
    if (poses.size() < 1) throw std::invalid_argument("interpolate_pose: no poses");
    if (t_us <= poses.front().t_us) return poses.front();
    if (t_us >= poses.back().t_us) return poses.back();
    size_t hi = 1;
    while (poses[hi].t_us < t_us) ++hi;
    const Pose& a = poses[hi - 1];
    const Pose& b = poses[hi];
    if (b.t_us == a.t_us) return a;
    double alpha = static_cast<double>(t_us - a.t_us) / static_cast<double>(b.t_us - a.t_us);
    Eigen::Quaterniond qa(a.R), qb(b.R);
    Pose out;
    out.R = qa.slerp(alpha, qb).toRotationMatrix();
    out.T = (1.0 - alpha) * a.T + alpha * b.T;
    out.t_us = t_us;
    return out;
}

// --- file formats ----------------------------------------------------------
// poses:  "t_us tx ty tz qx qy qz qw" per line
// calib:  "fx fy cx cy width height"

inline void save_poses(const std::vector<Pose>& poses, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    for (const Pose& p : poses) {
        Eigen::Quaterniond q(p.R);
        out << p.t_us << " " << p.T.x() << " " << p.T.y() << " " << p.T.z() << " " << q.x()
            << " " << q.y() << " " << q.z() << " " << q.w() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<Pose> load_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<Pose> poses;
    std::int64_t t;
    double tx, ty, tz, qx, qy, qz, qw;
    while (in >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw) {
        Pose p = Pose::from_quaternion(t, {tx, ty, tz}, Eigen::Quaterniond(qw, qx, qy, qz));
        p.validate();
        poses.push_back(p);
    }
    return poses;
}

inline void save_calibration(const CameraModel& cam, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.precision(17);
    out << cam.fx << " " << cam.fy << " " << cam.cx << " " << cam.cy << " " << cam.width << " "
        << cam.height << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline CameraModel load_calibration(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    CameraModel cam;
    if (!(in >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height))
        throw std::runtime_error("bad calibration file: " + path);
    cam.validate();
    return cam;
}

}  // namespace evtrk
