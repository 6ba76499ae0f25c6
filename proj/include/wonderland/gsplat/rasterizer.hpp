#pragma once

#include <array>
#include <map>
#include <numeric>

#include "wonderland/camera/camera.hpp"
#include "wonderland/core/parallel.hpp"
#include "wonderland/gsplat/cloud.hpp"
#include "wonderland/numerics/finite_diff.hpp"

namespace wonderland::gsplat {

struct RenderSettings {
    std::size_t H = 0, W = 0;
    std::array<float, 3> background{0.0f, 0.0f, 0.0f};
    double near = 0.01;
    double far = 1000.0;
    double alpha_cutoff = 1.0 / 255.0;
    /// Footprint radius in standard deviations of the projected covariance.
    double cull_sigma = 3.0;
    double dilation = 0.3;
    double min_transmittance = 1e-4;
    /// Gaussians whose projected center lies further than this fraction of the image size
    /// outside the raster are dropped (their linearized footprint is unreliable).
    double frustum_margin = 0.3;

    void validate() const {
        if (H == 0 || W == 0) throw ContractError("render raster must be non-empty");
        if (!(near > 0.0 && near < far)) throw ContractError("render needs 0 < near < far");
        if (!(alpha_cutoff >= 0.0 && alpha_cutoff < 1.0)) throw ContractError("alpha cutoff must be in [0, 1)");
        if (!(cull_sigma > 0.0)) throw ContractError("cull_sigma must be positive");
        if (!(frustum_margin >= 0.0)) throw ContractError("frustum_margin must be non-negative");
    }

    /// No footprint truncation or contribution cutoff: the image is a smooth function of
    /// the attributes wherever no Gaussian crosses the near/far planes.
    RenderSettings smooth() const {
        RenderSettings s = *this;
        s.alpha_cutoff = 0.0;
        s.cull_sigma = 12.0;
        s.min_transmittance = 0.0;
        s.frustum_margin = std::numeric_limits<double>::infinity();
        return s;
    }
};

struct RenderedImage {
    Tensor color;  // H×W×3
    Tensor alpha;  // H×W
};

/// Screen-space footprint of one Gaussian.
struct Projection {
    bool culled = true;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    double depth = 0.0;
};

/// EWA projection: camera-space mean, pinhole mean2d, J W Σ Wᵀ Jᵀ + dilation·I.
inline Projection project(const Vec3 &mean, const Mat3 &cov3d, const camera::CameraPose &pose, double dilation = 0.3,
                          double near = 0.01, double far = 1000.0) {
    Projection p;
    const Vec3 xc = pose.R.transpose() * (mean - pose.t);
    p.depth = xc.z();
    if (!(xc.z() >= near && xc.z() <= far)) return p;
    const double fx = pose.K(0, 0), fy = pose.K(1, 1), cx = pose.K(0, 2), cy = pose.K(1, 2), z = xc.z();
    Eigen::Matrix<double, 2, 3> J;
    J << fx / z, 0, -fx * xc.x() / (z * z), 0, fy / z, -fy * xc.y() / (z * z);
    const Mat3 Wr = pose.R.transpose();
    p.mean = {fx * xc.x() / z + cx, fy * xc.y() / z + cy};
    p.cov = J * Wr * cov3d * Wr.transpose() * J.transpose() + dilation * Eigen::Matrix2d::Identity();
    p.culled = false;
    return p;
}

namespace detail {

/// dL/dq for R(q/|q|), given dL/dR.
inline Eigen::Vector4d quat_backward(const Eigen::Vector4d &q, const Mat3 &G) {
    const double n = q.norm();
    if (n < 1e-12) return Eigen::Vector4d::Zero();
    const Eigen::Vector4d u = q / n;
    const double w = u[0], x = u[1], y = u[2], z = u[3];
    Eigen::Vector4d d;
    d[0] = 2 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
    d[1] = 2 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2 * x * G(1, 1) - w * G(1, 2) + z * G(2, 0) + w * G(2, 1) -
                2 * x * G(2, 2));
    d[2] = 2 * (-2 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) - w * G(2, 0) + z * G(2, 1) -
                2 * y * G(2, 2));
    d[3] = 2 * (-2 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2 * z * G(1, 1) + y * G(1, 2) + x * G(2, 0) +
                y * G(2, 1));
    return (d - u * u.dot(d)) / n;
}

/// Everything the backward pass needs about one visible Gaussian.
struct Splat {
    std::uint32_t index = 0;  // row in the cloud
    double u = 0, v = 0;      // mean2d
    double a = 0, b = 0, c = 0;  // conic (inverse 2D covariance)
    double opacity = 0;
    std::array<double, 3> color{};
    double depth = 0;
    long x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds
};

struct RasterState {
    RenderSettings settings;
    camera::CameraPose pose;
    std::vector<Splat> splats;           // depth-sorted
    std::vector<std::uint32_t> offsets;  // per pixel CSR offsets into entries
    std::vector<std::uint32_t> entries;  // indices into splats
};

inline double splat_alpha(const Splat &s, double px, double py, double &power) {
    const double dx = px - s.u, dy = py - s.v;
    power = -0.5 * (s.a * dx * dx + s.c * dy * dy) - s.b * dx * dy;
    return std::min(0.999, s.opacity * std::exp(power));
}

}  // namespace detail

/// Differentiable depth-sorted alpha compositing. Returns H×W×4 (rgb, accumulated alpha).
///
/// Gaussians are sorted by camera depth with ties broken by input row. Every pixel
/// composites its covering Gaussians front to back; per-Gaussian gradients from pixel
/// row blocks are reduced in block order.
inline Tensor rasterize_rgba(const GaussianCloud &cloud, const camera::CameraPose &pose, const RenderSettings &settings) {
    settings.validate();
    cloud.check_shapes();
    if (pose.K(0, 1) != 0.0) throw ContractError("rasterizer assumes zero intrinsics skew");
    const std::size_t N = cloud.size(), H = settings.H, W = settings.W;

    auto state = std::make_shared<detail::RasterState>();
    state->settings = settings;
    state->pose = pose;

    const float *pos = cloud.positions.data().data();
    const float *scl = cloud.scales.data().data();
    const float *rot = cloud.rotations.data().data();
    const float *col = cloud.colors.data().data();
    const float *opa = cloud.opacities.data().data();

    std::size_t non_finite = 0;
    for (std::size_t i = 0; i < N; ++i) {
        bool finite = true;
        for (int k = 0; k < 3; ++k) finite = finite && std::isfinite(pos[i * 3 + k]) && std::isfinite(scl[i * 3 + k]) && std::isfinite(col[i * 3 + k]);
        for (int k = 0; k < 4; ++k) finite = finite && std::isfinite(rot[i * 4 + k]);
        finite = finite && std::isfinite(opa[i]);
        if (!finite) {
            ++non_finite;
            continue;
        }
        const Vec3 mean(pos[i * 3], pos[i * 3 + 1], pos[i * 3 + 2]);
        Eigen::Vector4d q(rot[i * 4], rot[i * 4 + 1], rot[i * 4 + 2], rot[i * 4 + 3]);
        q = q.norm() < 1e-12 ? Eigen::Vector4d(1, 0, 0, 0) : Eigen::Vector4d(q / q.norm());
        const Mat3 R = quat_to_matrix(q[0], q[1], q[2], q[3]);
        const Vec3 s(scl[i * 3], scl[i * 3 + 1], scl[i * 3 + 2]);
        const Mat3 M = R * s.asDiagonal();
        double dilation = settings.dilation;
        Projection p = project(mean, M * M.transpose(), pose, dilation, settings.near, settings.far);
        if (p.culled) continue;
        const double mx = settings.frustum_margin * static_cast<double>(W), my = settings.frustum_margin * static_cast<double>(H);
        if (p.mean.x() < -mx || p.mean.x() > static_cast<double>(W) + mx || p.mean.y() < -my || p.mean.y() > static_cast<double>(H) + my) continue;
        double det = p.cov.determinant();
        if (!(det > 1e-12)) {
            // Degenerate footprint: retry once with a wider dilation, then give up on this Gaussian.
            const Eigen::Matrix2d base = p.cov - dilation * Eigen::Matrix2d::Identity();
            dilation = std::max(1.0, 4.0 * settings.dilation);
            p.cov = base + dilation * Eigen::Matrix2d::Identity();
            det = p.cov.determinant();
            if (!(det > 1e-12)) continue;
        }
        detail::Splat sp;
        sp.index = static_cast<std::uint32_t>(i);
        sp.u = p.mean.x();
        sp.v = p.mean.y();
        sp.a = p.cov(1, 1) / det;
        sp.b = -p.cov(0, 1) / det;
        sp.c = p.cov(0, 0) / det;
        sp.opacity = opa[i];
        for (int k = 0; k < 3; ++k) sp.color[k] = col[i * 3 + k];
        sp.depth = p.depth;
        const double mid = 0.5 * (p.cov(0, 0) + p.cov(1, 1));
        const double lambda = mid + std::sqrt(std::max(0.1, mid * mid - det));
        const double r = std::ceil(settings.cull_sigma * std::sqrt(lambda));
        // Pixel (x, y) has its center at (x + 0.5, y + 0.5).
        sp.x0 = std::max<long>(0, static_cast<long>(std::ceil(sp.u - r - 0.5)));
        sp.x1 = std::min<long>(static_cast<long>(W) - 1, static_cast<long>(std::floor(sp.u + r - 0.5)));
        sp.y0 = std::max<long>(0, static_cast<long>(std::ceil(sp.v - r - 0.5)));
        sp.y1 = std::min<long>(static_cast<long>(H) - 1, static_cast<long>(std::floor(sp.v + r - 0.5)));
        if (sp.x0 > sp.x1 || sp.y0 > sp.y1 || !(sp.opacity > 0.0)) continue;
        state->splats.push_back(sp);
    }
    if (N > 0 && non_finite == N) throw NumericError("every Gaussian in the cloud has non-finite attributes");

    // Depth sort; stable so equal depths keep input order.
    {
        std::vector<std::size_t> order(state->splats.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return state->splats[a].depth < state->splats[b].depth; });
        std::vector<detail::Splat> sorted;
        sorted.reserve(order.size());
        for (auto k : order) sorted.push_back(state->splats[k]);
        state->splats = std::move(sorted);
    }

    // Per-pixel lists in depth order (CSR).
    auto &offsets = state->offsets;
    offsets.assign(H * W + 1, 0);
    for (const auto &s : state->splats)
        for (long y = s.y0; y <= s.y1; ++y)
            for (long x = s.x0; x <= s.x1; ++x) ++offsets[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x) + 1];
    for (std::size_t p = 0; p < H * W; ++p) offsets[p + 1] += offsets[p];
    state->entries.resize(offsets.back());
    {
        std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
        for (std::uint32_t k = 0; k < state->splats.size(); ++k) {
            const auto &s = state->splats[k];
            for (long y = s.y0; y <= s.y1; ++y)
                for (long x = s.x0; x <= s.x1; ++x) state->entries[cursor[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)]++] = k;
        }
    }

    std::vector<float> out(H * W * 4);
    const std::size_t rows_per_chunk = std::max<std::size_t>(8, (H + 7) / 8);
    parallel_chunks(H, rows_per_chunk, [&](std::size_t r0, std::size_t r1, std::size_t) {
        const auto &st = *state;
        for (std::size_t y = r0; y < r1; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const std::size_t pix = y * W + x;
                double T = 1.0, C[3] = {0, 0, 0};
                const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                for (std::uint32_t e = st.offsets[pix]; e < st.offsets[pix + 1]; ++e) {
                    const auto &s = st.splats[st.entries[e]];
                    double power;
                    const double alpha = detail::splat_alpha(s, px, py, power);
                    if (power > 0.0 || alpha < settings.alpha_cutoff) continue;
                    const double next = T * (1.0 - alpha);
                    if (next < settings.min_transmittance) break;
                    for (int k = 0; k < 3; ++k) C[k] += s.color[k] * alpha * T;
                    T = next;
                }
                for (int k = 0; k < 3; ++k) out[pix * 4 + k] = static_cast<float>(C[k] + T * settings.background[k]);
                out[pix * 4 + 3] = static_cast<float>(1.0 - T);
            }
    });

    const GaussianCloud c = cloud;
    return Tensor::make(
        {H, W, 4}, std::move(out), {c.positions, c.scales, c.rotations, c.colors, c.opacities}, "rasterize",
        [c, state, rows_per_chunk](wonderland::detail::Node &self) {
            const auto &st = *state;
            const auto &set = st.settings;
            const std::size_t H = set.H, W = set.W, S = st.splats.size();
            const float *gout = self.grad.data();
            // Per splat: du, dv, da, db, dc, dopacity, dcolor[3].
            constexpr std::size_t kSlots = 9;
            const std::size_t chunks = (H + rows_per_chunk - 1) / rows_per_chunk;
            std::vector<std::vector<double>> partial(chunks);
            parallel_chunks(H, rows_per_chunk, [&](std::size_t r0, std::size_t r1, std::size_t chunk) {
                auto &acc = partial[chunk];
                acc.assign(S * kSlots, 0.0);
                std::vector<std::uint32_t> hit;
                std::vector<double> alphas, Ts, powers;
                for (std::size_t y = r0; y < r1; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const std::size_t pix = y * W + x;
                        const double gC[3] = {gout[pix * 4], gout[pix * 4 + 1], gout[pix * 4 + 2]};
                        const double gA = gout[pix * 4 + 3];
                        if (gC[0] == 0.0 && gC[1] == 0.0 && gC[2] == 0.0 && gA == 0.0) continue;
                        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
                        hit.clear();
                        alphas.clear();
                        Ts.clear();
                        powers.clear();
                        double T = 1.0;
                        for (std::uint32_t e = st.offsets[pix]; e < st.offsets[pix + 1]; ++e) {
                            const auto &s = st.splats[st.entries[e]];
                            double power;
                            const double alpha = detail::splat_alpha(s, px, py, power);
                            if (power > 0.0 || alpha < set.alpha_cutoff) continue;
                            const double next = T * (1.0 - alpha);
                            if (next < set.min_transmittance) break;
                            hit.push_back(st.entries[e]);
                            alphas.push_back(alpha);
                            Ts.push_back(T);
                            powers.push_back(power);
                            T = next;
                        }
                        const double T_final = T;
                        double bg_dot = 0.0;
                        for (int k = 0; k < 3; ++k) bg_dot += set.background[k] * gC[k];
                        // Color composited behind the current splat, walking back to front.
                        double behind[3] = {0, 0, 0};
                        for (std::size_t j = hit.size(); j-- > 0;) {
                            const auto &s = st.splats[hit[j]];
                            const double alpha = alphas[j], Ti = Ts[j];
                            double *a = acc.data() + hit[j] * kSlots;
                            double dalpha = 0.0;
                            for (int k = 0; k < 3; ++k) {
                                a[6 + k] += alpha * Ti * gC[k];
                                dalpha += (s.color[k] - behind[k]) * Ti * gC[k];
                            }
                            dalpha += (gA - bg_dot) * T_final / (1.0 - alpha);
                            for (int k = 0; k < 3; ++k) behind[k] = s.color[k] * alpha + (1.0 - alpha) * behind[k];
                            const double G = std::exp(powers[j]);
                            if (s.opacity * G >= 0.999) continue;  // clamped: flat in every input
                            a[5] += G * dalpha;
                            const double dpower = alpha * dalpha;
                            const double dx = px - s.u, dy = py - s.v;
                            a[0] += dpower * (s.a * dx + s.b * dy);
                            a[1] += dpower * (s.b * dx + s.c * dy);
                            a[2] += dpower * (-0.5 * dx * dx);
                            a[3] += dpower * (-dx * dy);
                            a[4] += dpower * (-0.5 * dy * dy);
                        }
                    }
            });
            std::vector<double> total(S * kSlots, 0.0);
            for (const auto &acc : partial)
                if (!acc.empty())
                    for (std::size_t k = 0; k < total.size(); ++k) total[k] += acc[k];

            float *gpos = wonderland::detail::grad_of(c.positions);
            float *gscl = wonderland::detail::grad_of(c.scales);
            float *grot = wonderland::detail::grad_of(c.rotations);
            float *gcol = wonderland::detail::grad_of(c.colors);
            float *gopa = wonderland::detail::grad_of(c.opacities);
            const float *pos = c.positions.data().data();
            const float *scl = c.scales.data().data();
            const float *rot = c.rotations.data().data();
            const auto &pose = st.pose;
            const Mat3 Wr = pose.R.transpose();
            const double fx = pose.K(0, 0), fy = pose.K(1, 1);
            for (std::size_t k = 0; k < S; ++k) {
                const auto &s = st.splats[k];
                const double *a = total.data() + k * kSlots;
                const std::size_t i = s.index;
                if (gcol)
                    for (int ch = 0; ch < 3; ++ch) gcol[i * 3 + ch] += static_cast<float>(a[6 + ch]);
                if (gopa) gopa[i] += static_cast<float>(a[5]);
                if (!gpos && !gscl && !grot) continue;

                const Vec3 mean(pos[i * 3], pos[i * 3 + 1], pos[i * 3 + 2]);
                const Vec3 xc = Wr * (mean - pose.t);
                const double x = xc.x(), y = xc.y(), z = xc.z();
                Eigen::Vector4d q(rot[i * 4], rot[i * 4 + 1], rot[i * 4 + 2], rot[i * 4 + 3]);
                const bool zero_q = q.norm() < 1e-12;
                const Eigen::Vector4d qn = zero_q ? Eigen::Vector4d(1, 0, 0, 0) : Eigen::Vector4d(q / q.norm());
                const Mat3 R = quat_to_matrix(qn[0], qn[1], qn[2], qn[3]);
                const Vec3 sv(scl[i * 3], scl[i * 3 + 1], scl[i * 3 + 2]);
                const Mat3 M = R * sv.asDiagonal();
                const Mat3 Sigma = M * M.transpose();
                const Mat3 Sc = Wr * Sigma * Wr.transpose();
                Eigen::Matrix<double, 2, 3> J;
                J << fx / z, 0, -fx * x / (z * z), 0, fy / z, -fy * y / (z * z);

                // Conic gradient as a symmetric matrix, then through the 2×2 inverse.
                Eigen::Matrix2d Q, GQ;
                Q << s.a, s.b, s.b, s.c;
                GQ << a[2], 0.5 * a[3], 0.5 * a[3], a[4];
                const Eigen::Matrix2d Gcov = -Q * GQ * Q;
                const Mat3 GSc = J.transpose() * Gcov * J;
                const Eigen::Matrix<double, 2, 3> GJ = 2.0 * Gcov * J * Sc;
                const Mat3 GSigma = Wr.transpose() * GSc * Wr;
                const Mat3 GM = 2.0 * GSigma * M;

                if (gscl)
                    for (int col = 0; col < 3; ++col) gscl[i * 3 + col] += static_cast<float>(GM.col(col).dot(R.col(col)));
                if (grot && !zero_q) {
                    const Mat3 GR = GM * sv.asDiagonal();
                    const Eigen::Vector4d gq = detail::quat_backward(q, GR);
                    for (int m = 0; m < 4; ++m) grot[i * 4 + m] += static_cast<float>(gq[m]);
                }
                if (gpos) {
                    Vec3 gxc = Vec3::Zero();
                    const double du = a[0], dv = a[1];
                    gxc.x() += du * fx / z;
                    gxc.y() += dv * fy / z;
                    gxc.z() += -du * fx * x / (z * z) - dv * fy * y / (z * z);
                    const double z2 = z * z, z3 = z2 * z;
                    gxc.z() += GJ(0, 0) * (-fx / z2) + GJ(1, 1) * (-fy / z2) + GJ(0, 2) * (2 * fx * x / z3) + GJ(1, 2) * (2 * fy * y / z3);
                    gxc.x() += GJ(0, 2) * (-fx / z2);
                    gxc.y() += GJ(1, 2) * (-fy / z2);
                    const Vec3 gmean = pose.R * gxc;
                    for (int m = 0; m < 3; ++m) gpos[i * 3 + m] += static_cast<float>(gmean[m]);
                }
            }
        });
}

inline RenderedImage rasterize(const GaussianCloud &cloud, const camera::CameraPose &pose, const RenderSettings &settings) {
    const Tensor rgba = rasterize_rgba(cloud, pose, settings);
    return {slice(rgba, 2, 0, 3), reshape(slice(rgba, 2, 3, 1), {settings.H, settings.W})};
}

using GradientReport = std::map<std::string, double>;

/// Autodiff vs central differences of mean((render - target)²), per attribute class.
inline GradientReport gradient_check_render(const GaussianCloud &cloud, const camera::CameraPose &pose,
                                            const RenderSettings &settings, double h, const Tensor &target) {
    if (cloud.size() > 16) throw ContractError("gradient check is meant for clouds of at most 16 Gaussians");
    const std::array<std::string, 5> names{"position", "scale", "rotation", "color", "opacity"};
    std::array<Tensor, 5> leaves{cloud.positions.detach(), cloud.scales.detach(), cloud.rotations.detach(),
                                 cloud.colors.detach(), cloud.opacities.detach()};
    for (auto &t : leaves) t.set_requires_grad(true);
    auto loss_of = [&](const std::array<Tensor, 5> &p) {
        const GaussianCloud g{p[0], p[1], p[2], p[3], p[4]};
        return mse(rasterize(g, pose, settings).color, target);
    };
    loss_of(leaves).backward();
    GradientReport report;
    for (std::size_t k = 0; k < 5; ++k) {
        auto f = [&](const Tensor &x) {
            auto p = leaves;
            p[k] = x;
            return loss_of(p);
        };
        const Tensor numeric = finite_diff_grad(f, leaves[k].detach(), h);
        const auto analytic = leaves[k].grad();
        report[names[k]] = relative_error(analytic, numeric.data(), 1e-6);
    }
    return report;
}

}  // namespace wonderland::gsplat
