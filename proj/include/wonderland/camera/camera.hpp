#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "wonderland/numerics/tensor.hpp"

namespace wonderland::camera {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Camera axes: x right, y down, z forward. R maps camera to world, t is the camera
/// center in world units, so X_cam = Rᵀ (X_world - t).
struct CameraPose {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    Mat3 K = Mat3::Identity();
};

struct Trajectory {
    std::vector<CameraPose> poses;
    bool varying_intrinsics = false;

    std::size_t size() const { return poses.size(); }
    const CameraPose &operator[](std::size_t i) const { return poses[i]; }
    CameraPose &operator[](std::size_t i) { return poses[i]; }
};

inline Mat3 intrinsics(double fx, double fy, double cx, double cy) {
    Mat3 K = Mat3::Identity();
    K(0, 0) = fx;
    K(1, 1) = fy;
    K(0, 2) = cx;
    K(1, 2) = cy;
    return K;
}

inline void validate(const CameraPose &p, double tol = 1e-5) {
    if ((p.R.transpose() * p.R - Mat3::Identity()).cwiseAbs().maxCoeff() > tol || std::abs(p.R.determinant() - 1.0) > tol)
        throw ContractError("camera rotation is not orthonormal with det +1");
    if (!p.t.allFinite()) throw NumericError("camera translation is not finite");
    const Mat3 &K = p.K;
    if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) throw ContractError("intrinsics must be upper triangular");
    if (!(K(0, 0) > 0.0 && K(1, 1) > 0.0)) throw ContractError("intrinsics need positive focal lengths");
}

inline void validate(const Trajectory &traj) {
    if (traj.poses.empty()) throw ContractError("trajectory is empty");
    for (const auto &p : traj.poses) validate(p);
    if (!traj.varying_intrinsics)
        for (const auto &p : traj.poses)
            if (!p.K.isApprox(traj.poses.front().K, 1e-9)) throw ContractError("trajectory intrinsics differ between frames");
}

inline Mat3 inverse_intrinsics(const Mat3 &K) {
    const double det = K.determinant();
    if (!std::isfinite(det) || std::abs(det) < 1e-12) throw NumericError("intrinsics matrix is singular");
    return K.inverse();
}

struct PluckerOptions {
    /// Adds the camera center to the back-projected direction before normalizing.
    /// false gives the pure ray direction R K⁻¹[u,v,1].
    bool add_translation = true;
    /// Offset added to integer pixel indices in plucker_embed.
    double pixel_offset = 0.5;
};

/// (t × d', d') for pixel coordinates (u, v) taken as given.
inline std::array<double, 6> plucker_pixel(const CameraPose &pose, double u, double v, const PluckerOptions &opt = {}) {
    const Mat3 Kinv = inverse_intrinsics(pose.K);
    Vec3 d = pose.R * (Kinv * Vec3(u, v, 1.0));
    if (opt.add_translation) d += pose.t;
    const double n = d.norm();
    if (!(n > 1e-12) || !std::isfinite(n)) throw NumericError("degenerate ray direction at (" + std::to_string(u) + ", " + std::to_string(v) + ")");
    d /= n;
    const Vec3 m = pose.t.cross(d);
    return {m.x(), m.y(), m.z(), d.x(), d.y(), d.z()};
}

/// T×H×W×6 embedding of every pixel of every frame.
inline Tensor plucker_embed(const Trajectory &traj, std::size_t H, std::size_t W, const PluckerOptions &opt = {}) {
    if (H == 0 || W == 0) throw ContractError("plucker_embed needs a non-empty raster");
    if (traj.poses.empty()) throw ContractError("plucker_embed needs at least one pose");
    const std::size_t T = traj.size();
    std::vector<float> out(T * H * W * 6);
    for (std::size_t f = 0; f < T; ++f) {
        const CameraPose &pose = traj[f];
        const Mat3 Kinv = inverse_intrinsics(pose.K);
        const Mat3 RK = pose.R * Kinv;
        for (std::size_t v = 0; v < H; ++v)
            for (std::size_t u = 0; u < W; ++u) {
                Vec3 d = RK * Vec3(static_cast<double>(u) + opt.pixel_offset, static_cast<double>(v) + opt.pixel_offset, 1.0);
                if (opt.add_translation) d += pose.t;
                const double n = d.norm();
                if (!(n > 1e-12) || !std::isfinite(n))
                    throw NumericError("degenerate ray at frame " + std::to_string(f) + ", pixel (" + std::to_string(u) + ", " +
                                       std::to_string(v) + ")");
                d /= n;
                const Vec3 m = pose.t.cross(d);
                float *o = out.data() + ((f * H + v) * W + u) * 6;
                for (int k = 0; k < 3; ++k) {
                    o[k] = static_cast<float>(m[k]);
                    o[3 + k] = static_cast<float>(d[k]);
                }
            }
    }
    return Tensor({T, H, W, 6}, std::move(out));
}

/// Unit world-space ray through a pixel position (no translation term).
inline Vec3 ray_direction(const CameraPose &pose, double u, double v) {
    return (pose.R * (inverse_intrinsics(pose.K) * Vec3(u, v, 1.0))).normalized();
}

/// Maps every pose into the first pose's frame and rescales translations to max norm 1.
struct Normalization {
    Mat3 R0 = Mat3::Identity();
    Vec3 t0 = Vec3::Zero();
    double scale = 1.0;

    CameraPose apply(const CameraPose &p) const {
        CameraPose out = p;
        out.R = R0.transpose() * p.R;
        out.t = R0.transpose() * (p.t - t0) / scale;
        return out;
    }
    Vec3 apply_point(const Vec3 &x) const { return R0.transpose() * (x - t0) / scale; }
};

inline Normalization normalization_of(const Trajectory &traj) {
    if (traj.poses.empty()) throw ContractError("cannot normalize an empty trajectory");
    Normalization n;
    n.R0 = traj[0].R;
    n.t0 = traj[0].t;
    double max_norm = 0.0;
    for (const auto &p : traj.poses) max_norm = std::max(max_norm, (n.R0.transpose() * (p.t - n.t0)).norm());
    n.scale = max_norm < 1e-8 ? 1.0 : max_norm;
    // Already unit scale up to roundoff: keep it exactly, so normalizing twice is a no-op.
    if (std::abs(n.scale - 1.0) < 1e-12) n.scale = 1.0;
    return n;
}

inline Trajectory apply_normalization(const Normalization &n, const Trajectory &traj) {
    Trajectory out = traj;
    for (auto &p : out.poses) p = n.apply(p);
    return out;
}

inline Trajectory normalize_trajectory(const Trajectory &traj) {
    const Normalization n = normalization_of(traj);
    Trajectory out = apply_normalization(n, traj);
    // Exact fixed point for the reference pose.
    out[0].R = Mat3::Identity();
    out[0].t = Vec3::Zero();
    return out;
}

struct PoseErrors {
    double rotation = 0.0;     // mean geodesic angle, radians
    double translation = 0.0;  // mean Euclidean distance
};

/// arccos((tr(AᵀB) - 1) / 2), evaluated as atan2(sin, cos) to stay accurate near 0 and π.
inline double geodesic_angle(const Mat3 &a, const Mat3 &b) {
    const Mat3 r = a.transpose() * b;
    const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    const double s = 0.5 * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm();
    return std::atan2(s, c);
}

inline PoseErrors pose_errors(const Trajectory &a, const Trajectory &b) {
    if (a.size() != b.size())
        throw ContractError("pose_errors length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    if (a.size() == 0) throw ContractError("pose_errors on empty trajectories");
    PoseErrors e;
    for (std::size_t f = 0; f < a.size(); ++f) {
        e.rotation += geodesic_angle(a[f].R, b[f].R);
        e.translation += (a[f].t - b[f].t).norm();
    }
    e.rotation /= static_cast<double>(a.size());
    e.translation /= static_cast<double>(a.size());
    return e;
}

inline Mat3 axis_angle(const Vec3 &axis, double angle) { return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(); }

inline Mat3 random_rotation(Generator &gen) {
    Eigen::Quaterniond q(gen.normal(), gen.normal(), gen.normal(), gen.normal());
    if (q.norm() < 1e-9) return Mat3::Identity();
    return q.normalized().toRotationMatrix();
}

inline CameraPose random_pose(Generator &gen, const Mat3 &K = Mat3::Identity(), double translation_scale = 2.0) {
    CameraPose p;
    p.R = random_rotation(gen);
    p.t = Vec3(gen.uniform(-1, 1), gen.uniform(-1, 1), gen.uniform(-1, 1)) * translation_scale;
    p.K = K;
    return p;
}

/// Camera at `eye` looking at `target`; world "down" (+y) stays down in the image.
inline CameraPose look_at(const Vec3 &eye, const Vec3 &target, const Mat3 &K, const Vec3 &down = Vec3(0, 1, 0)) {
    const Vec3 f = (target - eye).normalized();
    Vec3 right = down.cross(f);
    if (right.norm() < 1e-9) right = Vec3(1, 0, 0).cross(f);
    right.normalize();
    const Vec3 d = f.cross(right);
    CameraPose p;
    p.R.col(0) = right;
    p.R.col(1) = d;
    p.R.col(2) = f;
    p.t = eye;
    p.K = K;
    return p;
}

/// Rigid transform applied on the world side: X ↦ A X + b.
inline CameraPose transform_pose(const CameraPose &p, const Mat3 &A, const Vec3 &b) {
    CameraPose out = p;
    out.R = A * p.R;
    out.t = A * p.t + b;
    return out;
}

inline Trajectory transform_trajectory(const Trajectory &traj, const Mat3 &A, const Vec3 &b) {
    Trajectory out = traj;
    for (auto &p : out.poses) p = transform_pose(p, A, b);
    return out;
}

/// Intrinsics rescaled for a raster resized by (sx, sy).
inline Mat3 scale_intrinsics(const Mat3 &K, double sx, double sy) {
    Mat3 out = K;
    out.row(0) *= sx;
    out.row(1) *= sy;
    out(2, 2) = 1.0;
    return out;
}

inline Trajectory rescale(const Trajectory &traj, double sx, double sy) {
    Trajectory out = traj;
    for (auto &p : out.poses) p.K = scale_intrinsics(p.K, sx, sy);
    return out;
}

}  // namespace wonderland::camera
