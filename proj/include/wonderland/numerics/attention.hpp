#pragma once

#include "wonderland/numerics/ops.hpp"

namespace wonderland {

/// Exact multi-head scaled dot-product attention.
/// q [N,d], k [M,d], v [M,d]; heads split d evenly. Returns [N,d].
inline Tensor attention(const Tensor &q, const Tensor &k, const Tensor &v, std::size_t heads) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ShapeError("attention expects matrices");
    const std::size_t n = q.dim(0), m = k.dim(0), d = q.dim(1);
    if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != m)
        throw ShapeError("attention shape mismatch q" + to_string(q.shape()) + " k" + to_string(k.shape()) + " v" +
                         to_string(v.shape()));
    if (heads == 0 || d % heads != 0) throw ShapeError("attention width " + std::to_string(d) + " not divisible by heads");
    const std::size_t dh = d / heads;
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

    using Strided = Eigen::Map<const detail::RowMat, 0, Eigen::OuterStride<>>;
    using StridedMut = Eigen::Map<detail::RowMat, 0, Eigen::OuterStride<>>;
    auto head_view = [d, dh](const float *base, std::size_t rows, std::size_t h) {
        return Strided(base + h * dh, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dh),
                       Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
    };
    auto head_view_mut = [d, dh](float *base, std::size_t rows, std::size_t h) {
        return StridedMut(base + h * dh, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dh),
                          Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
    };

    auto probs = std::make_shared<std::vector<float>>(heads * n * m);
    std::vector<float> out(n * d);
    for (std::size_t h = 0; h < heads; ++h) {
        auto p = detail::as_matrix(probs->data() + h * n * m, n, m);
        p.noalias() = head_view(q.data().data(), n, h) * head_view(k.data().data(), m, h).transpose();
        p *= inv_sqrt;
        for (std::size_t r = 0; r < n; ++r) {
            auto row = p.row(static_cast<Eigen::Index>(r));
            row.array() -= row.maxCoeff();
            row = row.array().exp().matrix();
            row /= row.sum();
        }
        head_view_mut(out.data(), n, h).noalias() = p * head_view(v.data().data(), m, h);
    }
    return Tensor::make({n, d}, std::move(out), {q, k, v}, "attention",
                        [q, k, v, probs, n, m, d, heads, dh, inv_sqrt, head_view, head_view_mut](detail::Node &self) {
                            float *gq = detail::grad_of(q);
                            float *gk = detail::grad_of(k);
                            float *gv = detail::grad_of(v);
                            detail::RowMat dp(n, m);
                            for (std::size_t h = 0; h < heads; ++h) {
                                auto p = detail::as_matrix(static_cast<const float *>(probs->data() + h * n * m), n, m);
                                auto go = head_view(self.grad.data(), n, h);
                                if (gv) head_view_mut(gv, m, h).noalias() += p.transpose() * go;
                                if (!gq && !gk) continue;
                                dp.noalias() = go * head_view(v.data().data(), m, h).transpose();
                                for (std::size_t r = 0; r < n; ++r) {
                                    const auto ri = static_cast<Eigen::Index>(r);
                                    const float dot = dp.row(ri).dot(p.row(ri));
                                    dp.row(ri) = (p.row(ri).array() * (dp.row(ri).array() - dot)).matrix();
                                }
                                dp *= inv_sqrt;
                                if (gq) head_view_mut(gq, n, h).noalias() += dp * head_view(k.data().data(), m, h);
                                if (gk) head_view_mut(gk, m, h).noalias() += dp.transpose() * head_view(q.data().data(), n, h);
                            }
                        });
}

}  // namespace wonderland
