#pragma once

#include <Eigen/Dense>

#include "wonderland/numerics/ops.hpp"

namespace wonderland::gsplat {

/// Per-Gaussian attributes as N-row tensors so gradients can flow into whatever produced them.
/// rotations are (w, x, y, z) quaternions; opacities are N×1.
struct GaussianCloud {
    Tensor positions;
    Tensor scales;
    Tensor rotations;
    Tensor colors;
    Tensor opacities;

    std::size_t size() const { return positions.defined() ? positions.dim(0) : 0; }

    static GaussianCloud empty() {
        return {Tensor::zeros({0, 3}), Tensor::zeros({0, 3}), Tensor::zeros({0, 4}), Tensor::zeros({0, 3}), Tensor::zeros({0, 1})};
    }

    void check_shapes() const {
        const std::size_t n = size();
        auto expect = [n](const Tensor &t, std::size_t cols, const char *name) {
            if (!t.defined() || t.rank() != 2 || t.dim(0) != n || t.dim(1) != cols)
                throw ShapeError(std::string("gaussian ") + name + " must be " + std::to_string(n) + "x" + std::to_string(cols) +
                                 (t.defined() ? ", got " + to_string(t.shape()) : ", got nothing"));
        };
        expect(positions, 3, "positions");
        expect(scales, 3, "scales");
        expect(rotations, 4, "rotations");
        expect(colors, 3, "colors");
        expect(opacities, 1, "opacities");
    }

    /// Shapes plus value invariants: unit quaternions, positive scales, colors and opacity in [0,1].
    void validate(double quat_tol = 1e-5) const {
        check_shapes();
        for (std::size_t i = 0; i < size(); ++i) {
            double qn = 0;
            for (int k = 0; k < 4; ++k) qn += double(rotations.at(i * 4 + k)) * rotations.at(i * 4 + k);
            if (std::abs(std::sqrt(qn) - 1.0) > quat_tol) throw ContractError("gaussian " + std::to_string(i) + " quaternion is not unit");
            for (int k = 0; k < 3; ++k) {
                if (!(scales.at(i * 3 + k) > 0.0f)) throw ContractError("gaussian " + std::to_string(i) + " has non-positive scale");
                const float c = colors.at(i * 3 + k);
                if (!(c >= 0.0f && c <= 1.0f)) throw ContractError("gaussian " + std::to_string(i) + " color outside [0,1]");
            }
            const float o = opacities.at(i);
            if (!(o >= 0.0f && o <= 1.0f)) throw ContractError("gaussian " + std::to_string(i) + " opacity outside [0,1]");
        }
    }

    GaussianCloud detach() const {
        return {positions.detach(), scales.detach(), rotations.detach(), colors.detach(), opacities.detach()};
    }

    /// Rows [begin, begin+count) of every attribute.
    GaussianCloud slice_rows(std::size_t begin, std::size_t count) const {
        return {slice(positions, 0, begin, count), slice(scales, 0, begin, count), slice(rotations, 0, begin, count),
                slice(colors, 0, begin, count), slice(opacities, 0, begin, count)};
    }

    static GaussianCloud concat_rows(const std::vector<GaussianCloud> &parts) {
        std::vector<Tensor> p, s, r, c, o;
        for (const auto &g : parts) {
            p.push_back(g.positions);
            s.push_back(g.scales);
            r.push_back(g.rotations);
            c.push_back(g.colors);
            o.push_back(g.opacities);
        }
        return {concat(p, 0), concat(s, 0), concat(r, 0), concat(c, 0), concat(o, 0)};
    }
};

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Rotation matrix of a unit (w, x, y, z) quaternion.
inline Mat3 quat_to_matrix(double w, double x, double y, double z) {
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

/// Σ = R diag(s²) Rᵀ.
inline Mat3 covariance_from(const Vec3 &scale, const Eigen::Vector4d &quat) {
    if (std::abs(quat.norm() - 1.0) > 1e-3) throw ContractError("covariance_from needs a unit quaternion");
    if ((scale.array() <= 0.0).any()) throw ContractError("covariance_from needs positive scales");
    const Mat3 R = quat_to_matrix(quat[0], quat[1], quat[2], quat[3]);
    return R * scale.array().square().matrix().asDiagonal() * R.transpose();
}

/// x ↦ s·A·x + b with A a rotation; scales grow by s and orientations rotate by A. Not differentiable.
inline GaussianCloud similarity_transform(const GaussianCloud &cloud, const Mat3 &A, const Vec3 &b, double s) {
    cloud.check_shapes();
    const std::size_t n = cloud.size();
    const Eigen::Quaterniond qa(A);
    std::vector<float> pos(n * 3), scl(n * 3), rot(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 x(cloud.positions.at(i * 3), cloud.positions.at(i * 3 + 1), cloud.positions.at(i * 3 + 2));
        const Vec3 y = s * (A * x) + b;
        const Eigen::Quaterniond q(cloud.rotations.at(i * 4), cloud.rotations.at(i * 4 + 1), cloud.rotations.at(i * 4 + 2),
                                   cloud.rotations.at(i * 4 + 3));
        const Eigen::Quaterniond r = qa * q;
        for (int k = 0; k < 3; ++k) {
            pos[i * 3 + k] = static_cast<float>(y[k]);
            scl[i * 3 + k] = static_cast<float>(s * cloud.scales.at(i * 3 + k));
        }
        rot[i * 4] = static_cast<float>(r.w());
        rot[i * 4 + 1] = static_cast<float>(r.x());
        rot[i * 4 + 2] = static_cast<float>(r.y());
        rot[i * 4 + 3] = static_cast<float>(r.z());
    }
    return {Tensor({n, 3}, std::move(pos)), Tensor({n, 3}, std::move(scl)), Tensor({n, 4}, std::move(rot)), cloud.colors.detach(),
            cloud.opacities.detach()};
}

}  // namespace wonderland::gsplat
