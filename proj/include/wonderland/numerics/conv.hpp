#pragma once

// Channel-last strided convolutions (no batch axis).
//   conv3d:           x [T,H,W,Cin], weight [kt,kh,kw,Cin,Cout]  -> [To,Ho,Wo,Cout]
//   conv_transpose3d: x [T,H,W,Cin], weight [Cin,kt,kh,kw,Cout]  -> [To,Ho,Wo,Cout]
// Both lower to one GEMM plus an im2col gather / col2im scatter between the
// "large" grid (conv input, transposed-conv output) and the "small" grid.

#include <array>

#include "wonderland/numerics/ops.hpp"

namespace wonderland {

using Triple = std::array<std::size_t, 3>;

namespace detail {

struct ConvGeometry {
    Triple large{}, small{}, kernel{}, stride{}, pad{};
    std::size_t channels = 0;

    std::size_t small_count() const { return small[0] * small[1] * small[2]; }
    std::size_t kernel_count() const { return kernel[0] * kernel[1] * kernel[2]; }
    std::size_t row_width() const { return kernel_count() * channels; }

    template <class Fn>
    void for_each(Fn &&fn) const {
        // fn(small_index, column_offset, large_offset_or_npos)
        constexpr std::size_t npos = static_cast<std::size_t>(-1);
        std::size_t s = 0;
        for (std::size_t a = 0; a < small[0]; ++a)
            for (std::size_t b = 0; b < small[1]; ++b)
                for (std::size_t c = 0; c < small[2]; ++c, ++s) {
                    std::size_t k = 0;
                    for (std::size_t ka = 0; ka < kernel[0]; ++ka) {
                        const long ia = static_cast<long>(a * stride[0] + ka) - static_cast<long>(pad[0]);
                        for (std::size_t kb = 0; kb < kernel[1]; ++kb) {
                            const long ib = static_cast<long>(b * stride[1] + kb) - static_cast<long>(pad[1]);
                            for (std::size_t kc = 0; kc < kernel[2]; ++kc, ++k) {
                                const long ic = static_cast<long>(c * stride[2] + kc) - static_cast<long>(pad[2]);
                                const bool inside = ia >= 0 && ib >= 0 && ic >= 0 && ia < static_cast<long>(large[0]) &&
                                                    ib < static_cast<long>(large[1]) && ic < static_cast<long>(large[2]);
                                const std::size_t off =
                                    inside ? ((static_cast<std::size_t>(ia) * large[1] + static_cast<std::size_t>(ib)) *
                                                  large[2] +
                                              static_cast<std::size_t>(ic)) *
                                                 channels
                                           : npos;
                                fn(s, k * channels, off);
                            }
                        }
                    }
                }
    }

    void gather(const float *large_data, float *cols) const {
        const std::size_t w = row_width();
        for_each([&](std::size_t s, std::size_t col, std::size_t off) {
            float *dst = cols + s * w + col;
            if (off == static_cast<std::size_t>(-1))
                std::fill_n(dst, channels, 0.0f);
            else
                std::copy_n(large_data + off, channels, dst);
        });
    }

    void scatter_add(const float *cols, float *large_data) const {
        const std::size_t w = row_width();
        for_each([&](std::size_t s, std::size_t col, std::size_t off) {
            if (off == static_cast<std::size_t>(-1)) return;
            const float *src = cols + s * w + col;
            float *dst = large_data + off;
            for (std::size_t c = 0; c < channels; ++c) dst[c] += src[c];
        });
    }
};

inline void check_rank(const Tensor &t, std::size_t r, const char *what) {
    if (t.rank() != r) throw ShapeError(std::string(what) + " expects rank " + std::to_string(r) + ", got " + to_string(t.shape()));
}

}  // namespace detail

inline Tensor conv3d(const Tensor &x, const Tensor &weight, const Tensor &bias, Triple stride, Triple pad = {0, 0, 0}) {
    detail::check_rank(x, 4, "conv3d input");
    detail::check_rank(weight, 5, "conv3d weight");
    const Shape &xs = x.shape();
    const Shape &ws = weight.shape();
    const std::size_t cin = xs[3], cout = ws[4];
    if (ws[3] != cin) throw ShapeError("conv3d channel mismatch: input " + to_string(xs) + ", weight " + to_string(ws));
    if (bias.defined() && bias.numel() != cout) throw ShapeError("conv3d bias size mismatch");
    detail::ConvGeometry g;
    g.channels = cin;
    for (int i = 0; i < 3; ++i) {
        if (stride[i] == 0) throw ContractError("conv3d stride must be positive");
        g.large[i] = xs[i];
        g.kernel[i] = ws[i];
        g.stride[i] = stride[i];
        g.pad[i] = pad[i];
        const long span = static_cast<long>(xs[i] + 2 * pad[i]) - static_cast<long>(ws[i]);
        if (span < 0) throw ShapeError("conv3d kernel larger than padded input on axis " + std::to_string(i));
        g.small[i] = static_cast<std::size_t>(span) / stride[i] + 1;
    }
    const std::size_t n = g.small_count(), k = g.row_width();
    auto cols = std::make_shared<std::vector<float>>(n * k);
    g.gather(x.data().data(), cols->data());
    std::vector<float> out(n * cout);
    auto om = detail::as_matrix(out.data(), n, cout);
    om.noalias() = detail::as_matrix(cols->data(), n, k) * detail::as_matrix(weight.data().data(), k, cout);
    if (bias.defined()) {
        const float *pb = bias.data().data();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < cout; ++c) out[r * cout + c] += pb[c];
    }
    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return Tensor::make({g.small[0], g.small[1], g.small[2], cout}, std::move(out), parents, "conv3d",
                        [x, weight, bias, g, cols, n, k, cout](detail::Node &self) {
                            auto gm = detail::as_matrix(static_cast<const float *>(self.grad.data()), n, cout);
                            if (float *gw = detail::grad_of(weight))
                                detail::as_matrix(gw, k, cout).noalias() +=
                                    detail::as_matrix(cols->data(), n, k).transpose() * gm;
                            if (bias.defined())
                                if (float *gb = detail::grad_of(bias))
                                    for (std::size_t r = 0; r < n; ++r)
                                        for (std::size_t c = 0; c < cout; ++c) gb[c] += self.grad[r * cout + c];
                            if (float *gx = detail::grad_of(x)) {
                                std::vector<float> gcols(n * k);
                                detail::as_matrix(gcols.data(), n, k).noalias() =
                                    gm * detail::as_matrix(weight.data().data(), k, cout).transpose();
                                g.scatter_add(gcols.data(), gx);
                            }
                        });
}

inline Tensor conv_transpose3d(const Tensor &x, const Tensor &weight, const Tensor &bias, Triple stride,
                               Triple pad = {0, 0, 0}) {
    detail::check_rank(x, 4, "conv_transpose3d input");
    detail::check_rank(weight, 5, "conv_transpose3d weight");
    const Shape &xs = x.shape();
    const Shape &ws = weight.shape();
    const std::size_t cin = xs[3], cout = ws[4];
    if (ws[0] != cin)
        throw ShapeError("conv_transpose3d channel mismatch: input " + to_string(xs) + ", weight " + to_string(ws));
    if (bias.defined() && bias.numel() != cout) throw ShapeError("conv_transpose3d bias size mismatch");
    detail::ConvGeometry g;
    g.channels = cout;
    for (int i = 0; i < 3; ++i) {
        if (stride[i] == 0) throw ContractError("conv_transpose3d stride must be positive");
        g.small[i] = xs[i];
        g.kernel[i] = ws[i + 1];
        g.stride[i] = stride[i];
        g.pad[i] = pad[i];
        const long size = static_cast<long>((xs[i] - 1) * stride[i] + ws[i + 1]) - 2 * static_cast<long>(pad[i]);
        if (size <= 0) throw ShapeError("conv_transpose3d produces empty output on axis " + std::to_string(i));
        g.large[i] = static_cast<std::size_t>(size);
    }
    const std::size_t n = g.small_count(), k = g.row_width();
    std::vector<float> cols(n * k);
    detail::as_matrix(cols.data(), n, k).noalias() =
        detail::as_matrix(x.data().data(), n, cin) * detail::as_matrix(weight.data().data(), cin, k);
    const std::size_t out_n = g.large[0] * g.large[1] * g.large[2];
    std::vector<float> out(out_n * cout, 0.0f);
    g.scatter_add(cols.data(), out.data());
    if (bias.defined()) {
        const float *pb = bias.data().data();
        for (std::size_t r = 0; r < out_n; ++r)
            for (std::size_t c = 0; c < cout; ++c) out[r * cout + c] += pb[c];
    }
    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return Tensor::make({g.large[0], g.large[1], g.large[2], cout}, std::move(out), parents, "conv_transpose3d",
                        [x, weight, bias, g, n, k, cin, cout, out_n](detail::Node &self) {
                            std::vector<float> gcols(n * k);
                            g.gather(self.grad.data(), gcols.data());
                            auto gc = detail::as_matrix(static_cast<const float *>(gcols.data()), n, k);
                            if (float *gx = detail::grad_of(x))
                                detail::as_matrix(gx, n, cin).noalias() +=
                                    gc * detail::as_matrix(weight.data().data(), cin, k).transpose();
                            if (float *gw = detail::grad_of(weight))
                                detail::as_matrix(gw, cin, k).noalias() +=
                                    detail::as_matrix(x.data().data(), n, cin).transpose() * gc;
                            if (bias.defined())
                                if (float *gb = detail::grad_of(bias))
                                    for (std::size_t r = 0; r < out_n; ++r)
                                        for (std::size_t c = 0; c < cout; ++c) gb[c] += self.grad[r * cout + c];
                        });
}

/// conv2d: x [H,W,Cin], weight [kh,kw,Cin,Cout].
inline Tensor conv2d(const Tensor &x, const Tensor &weight, const Tensor &bias, std::array<std::size_t, 2> stride,
                     std::array<std::size_t, 2> pad = {0, 0}) {
    detail::check_rank(x, 3, "conv2d input");
    detail::check_rank(weight, 4, "conv2d weight");
    const Shape &ws = weight.shape();
    auto y = conv3d(reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}), reshape(weight, {1, ws[0], ws[1], ws[2], ws[3]}), bias,
                    {1, stride[0], stride[1]}, {0, pad[0], pad[1]});
    return reshape(y, {y.dim(1), y.dim(2), y.dim(3)});
}

/// conv_transpose2d: x [H,W,Cin], weight [Cin,kh,kw,Cout].
inline Tensor conv_transpose2d(const Tensor &x, const Tensor &weight, const Tensor &bias,
                               std::array<std::size_t, 2> stride, std::array<std::size_t, 2> pad = {0, 0}) {
    detail::check_rank(x, 3, "conv_transpose2d input");
    detail::check_rank(weight, 4, "conv_transpose2d weight");
    const Shape &ws = weight.shape();
    auto y = conv_transpose3d(reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}),
                              reshape(weight, {ws[0], 1, ws[1], ws[2], ws[3]}), bias, {1, stride[0], stride[1]},
                              {0, pad[0], pad[1]});
    return reshape(y, {y.dim(1), y.dim(2), y.dim(3)});
}

/// Prepends (r_t - 1) copies of frame 0 along axis 0 so a stride-r_t temporal kernel
/// keeps frame 0 in its own group: T frames -> 1 + (T-1)/r_t groups.
inline Tensor causal_pad_frames(const Tensor &x, std::size_t r_t) {
    if (x.rank() < 1 || x.dim(0) == 0) throw ShapeError("causal padding needs at least one frame");
    if ((x.dim(0) - 1) % r_t != 0)
        throw ShapeError("frame count " + std::to_string(x.dim(0)) + " violates (T-1) divisible by " + std::to_string(r_t));
    if (r_t == 1) return x;
    std::vector<Tensor> parts(r_t - 1, slice(x, 0, 0, 1));
    parts.push_back(x);
    return concat(parts, 0);
}

/// Inverse bookkeeping of causal_pad_frames: drops the leading (r_t - 1) frames.
inline Tensor causal_unpad_frames(const Tensor &x, std::size_t r_t) {
    if (x.dim(0) < r_t) throw ShapeError("too few frames to remove causal padding");
    return slice(x, 0, r_t - 1, x.dim(0) - (r_t - 1));
}

}  // namespace wonderland
