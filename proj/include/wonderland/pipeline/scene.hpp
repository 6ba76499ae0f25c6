#pragma once

#include <numbers>

#include "wonderland/camera/camera.hpp"
#include "wonderland/gsplat/rasterizer.hpp"

namespace wonderland::pipeline {

enum class Complexity { kSmall, kMedium };

inline Complexity parse_complexity(const std::string &s) {
    if (s == "small") return Complexity::kSmall;
    if (s == "medium") return Complexity::kMedium;
    throw ContractError("unknown scene complexity '" + s + "' (expected small or medium)");
}

struct SceneOptions {
    Complexity complexity = Complexity::kSmall;
    std::size_t frames = 33;
    std::size_t height = 96;
    std::size_t width = 144;
    /// Total yaw swept by the camera path, radians.
    double sweep = 0.7;
};

struct SyntheticScene {
    gsplat::GaussianCloud cloud;
    camera::Trajectory trajectory;
    Tensor video;  // T×H×W×3
    std::uint64_t seed = 0;
};

inline gsplat::RenderSettings scene_render_settings(std::size_t H, std::size_t W) {
    gsplat::RenderSettings rs;
    rs.H = H;
    rs.W = W;
    rs.background = {0.5, 0.5, 0.5};
    return rs;
}

/// Frames of `cloud` seen from every pose of `traj` (intrinsics must match H×W).
inline Tensor render_video(const gsplat::GaussianCloud &cloud, const camera::Trajectory &traj, std::size_t H, std::size_t W) {
    NoGradGuard ng;
    const auto rs = scene_render_settings(H, W);
    std::vector<Tensor> frames;
    for (const auto &pose : traj.poses) frames.push_back(reshape(gsplat::rasterize(cloud, pose, rs).color, {1, H, W, 3}));
    return concat(frames, 0);
}

inline Tensor frame_of(const Tensor &video, std::size_t f) {
    return reshape(slice(video, 0, f, 1), {video.dim(1), video.dim(2), video.dim(3)});
}

namespace detail {

inline camera::Vec3 catmull_rom(const camera::Vec3 &p0, const camera::Vec3 &p1, const camera::Vec3 &p2, const camera::Vec3 &p3, double t) {
    const double t2 = t * t, t3 = t2 * t;
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

inline camera::Vec3 spline(const std::vector<camera::Vec3> &pts, double s) {
    const std::size_t n = pts.size();
    const double x = s * static_cast<double>(n - 1);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(x), n - 2);
    auto at = [&](long k) { return pts[static_cast<std::size_t>(std::clamp<long>(k, 0, static_cast<long>(n) - 1))]; };
    return catmull_rom(at(long(i) - 1), at(long(i)), at(long(i) + 1), at(long(i) + 2), x - static_cast<double>(i));
}

inline std::array<float, 4> random_unit_quat(Generator &gen) {
    double q[4], n = 0;
    for (double &v : q) {
        v = gen.normal();
        n += v * v;
    }
    n = std::sqrt(n);
    return {float(q[0] / n), float(q[1] / n), float(q[2] / n), float(q[3] / n)};
}

}  // namespace detail

/// Seeded procedural scene: a ground slab, colored blobs and a backdrop shell, seen by a
/// camera following a spline through jittered waypoints while looking at the scene center.
/// World up is -y.
inline SyntheticScene generate_scene(std::uint64_t seed, const SceneOptions &opt = {}) {
    Generator gen(seed);
    const bool medium = opt.complexity == Complexity::kMedium;
    const std::size_t n_ground = medium ? 150 : 60, n_blobs = medium ? 200 : 60, n_shell = medium ? 150 : 80;
    std::vector<float> pos, scl, rot, col, opa;
    auto push = [&](camera::Vec3 p, camera::Vec3 s, std::array<float, 4> q, camera::Vec3 c, double o) {
        for (int k = 0; k < 3; ++k) {
            pos.push_back(float(p[k]));
            scl.push_back(float(s[k]));
            col.push_back(float(std::clamp(c[k], 0.0, 1.0)));
        }
        rot.insert(rot.end(), q.begin(), q.end());
        opa.push_back(float(o));
    };
    const camera::Vec3 ground_a(gen.uniform(0.2, 0.5), gen.uniform(0.3, 0.6), gen.uniform(0.1, 0.3));
    const camera::Vec3 ground_b(gen.uniform(0.5, 0.8), gen.uniform(0.4, 0.7), gen.uniform(0.2, 0.5));
    for (std::size_t i = 0; i < n_ground; ++i) {
        const double x = gen.uniform(-3, 3), z = gen.uniform(-3, 3);
        const double mix = 0.5 + 0.5 * std::sin(2.0 * x) * std::cos(2.0 * z);
        const double yaw = gen.uniform(0, std::numbers::pi);
        push({x, 1.0 + gen.uniform(-0.02, 0.02), z}, {gen.uniform(0.25, 0.45), 0.03, gen.uniform(0.25, 0.45)},
             {float(std::cos(0.5 * yaw)), 0.0f, float(std::sin(0.5 * yaw)), 0.0f}, ground_a * mix + ground_b * (1 - mix), 0.95);
    }
    for (std::size_t i = 0; i < n_blobs; ++i) {
        const camera::Vec3 p(gen.uniform(-1.2, 1.2), gen.uniform(-0.6, 0.9), gen.uniform(-1.2, 1.2));
        const camera::Vec3 s(gen.uniform(0.06, 0.22), gen.uniform(0.06, 0.22), gen.uniform(0.06, 0.22));
        const camera::Vec3 c(gen.uniform(0, 1), gen.uniform(0, 1), gen.uniform(0, 1));
        push(p, s, detail::random_unit_quat(gen), c, gen.uniform(0.7, 1.0));
    }
    const camera::Vec3 sky(gen.uniform(0.4, 0.7), gen.uniform(0.6, 0.85), gen.uniform(0.8, 1.0));
    const camera::Vec3 horizon(gen.uniform(0.7, 1.0), gen.uniform(0.6, 0.9), gen.uniform(0.5, 0.8));
    for (std::size_t i = 0; i < n_shell; ++i) {
        // Golden-spiral directions over the sphere.
        const double k = (static_cast<double>(i) + 0.5) / static_cast<double>(n_shell);
        const double y = 1.0 - 2.0 * k, r = std::sqrt(1.0 - y * y), phi = 2.399963229728653 * static_cast<double>(i);
        const camera::Vec3 d(r * std::cos(phi), y, r * std::sin(phi));
        const double up = std::clamp(-d.y(), 0.0, 1.0);
        const camera::Vec3 c = sky * up + horizon * (1.0 - up) + camera::Vec3(gen.uniform(-0.08, 0.08), gen.uniform(-0.08, 0.08), gen.uniform(-0.08, 0.08));
        push(7.0 * d, camera::Vec3::Constant(gen.uniform(1.1, 1.5)), detail::random_unit_quat(gen), c, 1.0);
    }
    const std::size_t n = opa.size();
    SyntheticScene scene;
    scene.seed = seed;
    scene.cloud = {Tensor({n, 3}, pos), Tensor({n, 3}, scl), Tensor({n, 4}, rot), Tensor({n, 3}, col), Tensor({n, 1}, opa)};

    const double H = static_cast<double>(opt.height), W = static_cast<double>(opt.width);
    const camera::Mat3 K = camera::intrinsics(0.85 * W, 0.85 * W, 0.5 * W, 0.5 * H);
    const double yaw0 = gen.uniform(0, 6.2832), radius = gen.uniform(2.8, 3.4);
    std::vector<camera::Vec3> eyes, targets;
    for (int w = 0; w < 4; ++w) {
        const double a = yaw0 + opt.sweep * w / 3.0;
        const double rr = radius + gen.uniform(-0.25, 0.25);
        eyes.emplace_back(rr * std::sin(a), -0.35 + gen.uniform(-0.15, 0.15), -rr * std::cos(a));
        targets.emplace_back(gen.uniform(-0.2, 0.2), gen.uniform(0.0, 0.3), gen.uniform(-0.2, 0.2));
    }
    for (std::size_t f = 0; f < opt.frames; ++f) {
        const double s = opt.frames == 1 ? 0.0 : static_cast<double>(f) / static_cast<double>(opt.frames - 1);
        scene.trajectory.poses.push_back(camera::look_at(detail::spline(eyes, s), detail::spline(targets, s), K));
    }
    scene.video = render_video(scene.cloud, scene.trajectory, opt.height, opt.width);
    return scene;
}

}  // namespace wonderland::pipeline
