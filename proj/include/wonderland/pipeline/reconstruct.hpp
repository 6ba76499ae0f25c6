#pragma once

#include <numbers>
#include <optional>

#include "wonderland/pipeline/train.hpp"

namespace wonderland::pipeline {

/// Maps a cloud from a normalized frame back to the world frame of the trajectory.
inline gsplat::GaussianCloud to_world(const gsplat::GaussianCloud &cloud, const camera::Normalization &n) {
    return gsplat::similarity_transform(cloud, n.R0, n.t0, n.scale);
}

inline gsplat::GaussianCloud to_normalized(const gsplat::GaussianCloud &cloud, const camera::Normalization &n) {
    return gsplat::similarity_transform(cloud, n.R0.transpose(), -n.R0.transpose() * n.t0 / n.scale, 1.0 / n.scale);
}

/// Frames 0, stride, 2·stride, ... (count of them) of a trajectory.
inline camera::Trajectory subsample(const camera::Trajectory &traj, std::size_t stride, std::size_t count) {
    if (stride == 0 || count == 0) throw ContractError("subsample needs stride >= 1 and count >= 1");
    if (stride * (count - 1) >= traj.size())
        throw ContractError("trajectory has " + std::to_string(traj.size()) + " frames, " + std::to_string(count) + " frames at stride " +
                            std::to_string(stride) + " need " + std::to_string(stride * (count - 1) + 1));
    camera::Trajectory out;
    for (std::size_t k = 0; k < count; ++k) out.poses.push_back(traj[k * stride]);
    return out;
}

/// World-frame Gaussians for a seen trajectory (intrinsics at the video raster H×W).
/// Without a latent the DiT samples one from the conditioning image.
inline gsplat::GaussianCloud reconstruct_from_image(const lalrm::LaLRM &model, const dit::CamDiT *dit_model, const Tensor &image,
                                                    const camera::Trajectory &seen_world, const std::optional<Tensor> &latent,
                                                    std::size_t sample_steps, std::uint64_t seed) {
    const std::size_t H = image.dim(0), W = image.dim(1);
    const camera::Normalization n = camera::normalization_of(seen_world);
    const camera::Trajectory seen = camera::apply_normalization(n, seen_world);
    Tensor z;
    if (latent) {
        z = *latent;
    } else {
        if (!dit_model) throw StateError("no latent given and no DiT checkpoint to sample one; pass --dit or --skip-dit with --latent");
        z = sample_latent(*dit_model, image, seen, sample_steps, seed);
    }
    NoGradGuard ng;
    return to_world(lalrm::reconstruct(model, z, seen, H, W).detach(), n);
}

/// Orbit of `count` cameras around a point `depth` in front of the reference camera, swinging ±max_angle.
inline camera::Trajectory orbit_around(const camera::CameraPose &ref, double depth, std::size_t count, double max_angle = 0.35) {
    const camera::Vec3 forward = ref.R.col(2), down = ref.R.col(1);
    const camera::Vec3 pivot = ref.t + depth * forward;
    camera::Trajectory out;
    for (std::size_t k = 0; k < count; ++k) {
        const double a = max_angle * std::sin(2.0 * std::numbers::pi * double(k) / double(count));
        const camera::Mat3 Rk = camera::axis_angle(down, a);
        const camera::Vec3 eye = pivot + Rk * (ref.t - pivot);
        out.poses.push_back(camera::look_at(eye, pivot, ref.K, down));
    }
    return out;
}

}  // namespace wonderland::pipeline
