#pragma once

#include <functional>
#include <set>

#include "wonderland/codec/codec.hpp"
#include "wonderland/dit/cam_dit.hpp"
#include "wonderland/gsplat/rasterizer.hpp"
#include "wonderland/lalrm/lalrm.hpp"
#include "wonderland/numerics/finite_diff.hpp"

namespace wonderland::pipeline {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct Check {
    std::string name;
    /// Returns a detail string; throws or returns with passed=false on failure.
    std::function<std::pair<bool, std::string>(const std::set<std::string> &faults)> run;
};

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline double max_abs_diff(const Tensor &a, const Tensor &b) {
    if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.at(i)) - double(b.at(i))));
    return m;
}

inline dit::DiTConfig tiny_dit(std::uint64_t seed) {
    dit::DiTConfig c;
    c.num_blocks = 3;
    c.ctrl_blocks = 2;
    c.hidden = 16;
    c.heads = 2;
    c.lora_rank = 2;
    c.latent_channels = 12;
    c.r_s = 2;
    c.cond_dim = 4;
    c.num_steps = 50;
    c.seed = seed;
    return c;
}

inline camera::Trajectory line_walk(std::size_t T, std::size_t H, std::size_t W) {
    camera::Trajectory traj;
    const auto K = camera::intrinsics(W, W, W / 2.0, H / 2.0);
    for (std::size_t f = 0; f < T; ++f) traj.poses.push_back(camera::look_at({0.1 * f, 0, -2}, {0, 0, 0}, K));
    return traj;
}

}  // namespace detail

inline std::vector<Check> selfcheck_suite() {
    std::vector<Check> checks;
    checks.push_back({"numerics.gradcheck", [](const auto &) {
                          Generator gen(1);
                          const Tensor w = randn({4, 3}, gen);
                          Tensor x = randn({5, 4}, gen);
                          auto f = [&](const Tensor &v) { return mean(silu(matmul(v, w)) * sigmoid(matmul(v, w))); };
                          x.set_requires_grad(true);
                          f(x).backward();
                          const Tensor fd = finite_diff_grad(f, x.detach(), 1e-3);
                          const double e = relative_error(x.grad(), fd.data(), 1e-6);
                          return std::pair{e < 1e-2, "relative error " + detail::fmt(e)};
                      }});
    checks.push_back({"gsplat.gradients", [](const auto &) {
                          Generator gen(2);
                          std::vector<float> pos, scl, rot, col, opa;
                          for (int i = 0; i < 5; ++i) {
                              const double z = gen.uniform(2, 4);
                              pos.insert(pos.end(), {float(gen.uniform(-0.3, 0.3) * z), float(gen.uniform(-0.3, 0.3) * z), float(z)});
                              for (int k = 0; k < 3; ++k) scl.push_back(float(gen.uniform(0.1, 0.3)));
                              Eigen::Vector4d q(gen.normal(), gen.normal(), gen.normal(), gen.normal());
                              q.normalize();
                              for (int k = 0; k < 4; ++k) rot.push_back(float(q[k]));
                              for (int k = 0; k < 3; ++k) col.push_back(float(gen.uniform(0.05, 0.95)));
                              opa.push_back(float(gen.uniform(0.3, 0.9)));
                          }
                          gsplat::GaussianCloud g{Tensor({5, 3}, pos), Tensor({5, 3}, scl), Tensor({5, 4}, rot), Tensor({5, 3}, col), Tensor({5, 1}, opa)};
                          camera::CameraPose pose;
                          pose.K = camera::intrinsics(20, 20, 8, 8);
                          gsplat::RenderSettings rs;
                          rs.H = rs.W = 16;
                          const auto report = gsplat::gradient_check_render(g, pose, rs.smooth(), 1e-3, rand_uniform({16, 16, 3}, gen));
                          double worst = 0;
                          for (const auto &[_, e] : report) worst = std::max(worst, e);
                          return std::pair{worst < 1e-2, "worst relative error " + detail::fmt(worst)};
                      }});
    checks.push_back({"camera.plucker", [](const auto &) {
                          Generator gen(3);
                          double worst = 0;
                          for (int p = 0; p < 20; ++p) {
                              const auto pose = camera::random_pose(gen, camera::intrinsics(30, 30, 8, 8));
                              for (int k = 0; k < 16; ++k) {
                                  const auto e = camera::plucker_pixel(pose, gen.uniform(0, 16), gen.uniform(0, 16));
                                  const camera::Vec3 m(e[0], e[1], e[2]), d(e[3], e[4], e[5]);
                                  worst = std::max({worst, std::abs(d.norm() - 1.0), std::abs(m.dot(d))});
                              }
                          }
                          return std::pair{worst < 1e-5, "worst deviation " + detail::fmt(worst)};
                      }});
    checks.push_back({"camera.pose_metrics", [](const auto &) {
                          Generator gen(4);
                          camera::Trajectory a;
                          for (int i = 0; i < 5; ++i) a.poses.push_back(camera::random_pose(gen));
                          const auto same = camera::pose_errors(a, a);
                          camera::Trajectory r0{{camera::CameraPose{}}}, r1{{camera::CameraPose{}}};
                          r0.poses.push_back(camera::CameraPose{});
                          r1.poses.push_back(camera::CameraPose{});
                          r1.poses[1].R = camera::axis_angle({0, 0, 1}, std::numbers::pi / 2);
                          const double quarter = camera::pose_errors(r0, r1).rotation * 2.0;
                          const bool ok = same.rotation == 0.0 && same.translation == 0.0 && std::abs(quarter - std::numbers::pi / 2) < 1e-6;
                          return std::pair{ok, "self error (" + detail::fmt(same.rotation) + ", " + detail::fmt(same.translation) + "), quarter turn " + detail::fmt(quarter)};
                      }});
    checks.push_back({"codec.roundtrip", [](const std::set<std::string> &faults) {
                          Generator gen(5);
                          codec::LosslessCodec c;
                          const Tensor v = rand_uniform({5, 16, 16, 3}, gen);
                          auto z = c.encode({v});
                          if (faults.count("codec.roundtrip")) z.data.mutable_data()[7] += 0.5f;
                          const Tensor back = c.decode(z).data;
                          const bool ok = back.shape() == v.shape() && std::memcmp(back.data().data(), v.data().data(), v.numel() * sizeof(float)) == 0;
                          return std::pair{ok, ok ? std::string("bit-exact") : "decode(encode(v)) differs from v"};
                      }});
    checks.push_back({"lalrm.token_length", [](const auto &) {
                          // Paper geometry by arithmetic: 49 frames at 480×720, p_l = 2, r = (4, 8, 8).
                          const std::size_t paper = (1 + 48 / 4) * (480 / 8 / 2) * (720 / 8 / 2);
                          lalrm::LaLRMConfig cfg;
                          cfg.p_l = 1;
                          cfg.num_blocks = 1;
                          cfg.hidden = 8;
                          cfg.heads = 1;
                          lalrm::LaLRM m(cfg);
                          codec::LosslessCodec c;
                          bool ok = paper == 17550;
                          for (std::size_t T : {1, 5, 9}) {
                              const auto traj = detail::line_walk(T, 16, 24);
                              const auto a = m.tokenize_latent(c.encode({Tensor::zeros({T, 16, 24, 3})}).data).dim(0);
                              const auto b = m.tokenize_pose(camera::plucker_embed(traj, 16, 24)).dim(0);
                              ok = ok && a == b && a == (1 + (T - 1) / 4) * 6;
                          }
                          return std::pair{ok, "paper geometry " + std::to_string(paper) + " tokens"};
                      }});
    checks.push_back({"lalrm.gaussian_count", [](const auto &) {
                          lalrm::LaLRMConfig cfg;
                          cfg.p_l = 1;
                          cfg.num_blocks = 1;
                          cfg.hidden = 8;
                          cfg.heads = 1;
                          codec::LosslessCodec c;
                          const auto traj = detail::line_walk(5, 16, 24);
                          const Tensor z = c.encode({Tensor::zeros({5, 16, 24, 3})}).data;
                          NoGradGuard ng;
                          const std::size_t low = lalrm::reconstruct(lalrm::LaLRM(cfg), z, traj, 16, 24).size();
                          cfg.variant = lalrm::Variant::kHighRes;
                          const std::size_t high = lalrm::reconstruct(lalrm::LaLRM(cfg), z, traj, 16, 24).size();
                          const bool ok = low == 5 * 16 * 24 && high == 5 * 8 * 12 && std::size_t(49) * 240 * 360 == 4233600;
                          return std::pair{ok, std::to_string(low) + " / " + std::to_string(high) + " Gaussians"};
                      }});
    checks.push_back({"dit.init_equivalence", [](const auto &) {
                          double worst = 0;
                          for (std::uint64_t seed = 0; seed < 3; ++seed) {
                              dit::CamDiT dual(detail::tiny_dit(seed));
                              auto base_cfg = detail::tiny_dit(seed);
                              base_cfg.branches = dit::Branches::kNone;
                              dit::CamDiT base(base_cfg);
                              Generator gen(seed + 10);
                              const Tensor z = randn({2, 4, 6, 12}, gen);
                              const Tensor cond = dual.condition(rand_uniform({1, 4, 6, 12}, gen), 2);
                              const Tensor p = camera::plucker_embed(detail::line_walk(5, 8, 12), 8, 12);
                              const Tensor y = randn({4}, gen);
                              NoGradGuard ng;
                              worst = std::max(worst, detail::max_abs_diff(dual.forward(z, cond, p, y, 17), base.forward(z, cond, p, y, 17)));
                          }
                          return std::pair{worst < 1e-5, "max abs diff " + detail::fmt(worst)};
                      }});
    checks.push_back({"dit.fuse_identity", [](const auto &) {
                          dit::CamDiT m(detail::tiny_dit(0));
                          Generator gen(6);
                          double worst = 0;
                          for (int i = 0; i < 5; ++i) {
                              const Tensor ov = randn({20, 16}, gen, 3.0f);
                              worst = std::max(worst, detail::max_abs_diff(m.fuse_lora(ov, randn({20, 16}, gen, 3.0f)), ov));
                          }
                          return std::pair{worst < 1e-6, "max abs diff " + detail::fmt(worst)};
                      }});
    checks.push_back({"dit.schedule", [](const auto &) {
                          const auto s = dit::DiffusionSchedule::cosine(1000);
                          double worst = 0;
                          for (std::size_t k = 0; k < s.num_steps; ++k) worst = std::max(worst, std::abs(s.alpha[k] * s.alpha[k] + s.sigma[k] * s.sigma[k] - 1.0));
                          Generator gen(7);
                          const Tensor z = randn({2, 3}, gen), e = randn({2, 3}, gen);
                          const bool ends = detail::max_abs_diff(dit::add_noise(s, z, 0, e), z) == 0.0 &&
                                            detail::max_abs_diff(dit::add_noise(s, z, s.num_steps - 1, e), e) == 0.0;
                          return std::pair{worst < 1e-6 && ends, "variance deviation " + detail::fmt(worst)};
                      }});
    return checks;
}

/// Runs every check, converting exceptions into failures.
inline std::vector<CheckResult> run_selfcheck(const std::set<std::string> &faults = {}) {
    std::vector<CheckResult> out;
    for (const auto &c : selfcheck_suite()) {
        CheckResult r{c.name, false, ""};
        try {
            std::tie(r.passed, r.detail) = c.run(faults);
        } catch (const std::exception &e) {
            r.detail = e.what();
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace wonderland::pipeline
