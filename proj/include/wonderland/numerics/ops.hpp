#pragma once

// Differentiable primitives over Tensor. Broadcasting follows the trailing-dimension
// rule: shapes are right-aligned and each pair of dims must match or one must be 1.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <numeric>

#include "wonderland/numerics/tensor.hpp"

namespace wonderland {

namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline ConstMapMat as_matrix(const float *p, std::size_t rows, std::size_t cols) {
    return ConstMapMat(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MapMat as_matrix(float *p, std::size_t rows, std::size_t cols) {
    return MapMat(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline float *grad_of(const Tensor &t) { return t.requires_grad() ? t.node().grad_buffer() : nullptr; }

inline std::vector<std::size_t> strides_of(const Shape &shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

/// Flat-index mapping from a broadcast result back to both operands.
struct Broadcast {
    enum class Mode { kSame, kScalarA, kScalarB, kSuffixB, kSuffixA, kGeneral };
    Mode mode = Mode::kSame;
    Shape out;
    std::size_t na = 0, nb = 0;
    std::vector<std::size_t> ia, ib;

    Broadcast(const Shape &a, const Shape &b) : na(numel(a)), nb(numel(b)) {
        const std::size_t r = std::max(a.size(), b.size());
        out.assign(r, 1);
        for (std::size_t i = 0; i < r; ++i) {
            const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
            const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
            if (da != db && da != 1 && db != 1)
                throw ShapeError("cannot broadcast " + to_string(a) + " with " + to_string(b));
            out[i] = std::max(da, db);
        }
        const std::size_t n = numel(out);
        auto is_suffix = [&](const Shape &small) {
            if (small.size() > out.size()) return false;
            for (std::size_t i = 0; i < small.size(); ++i)
                if (small[small.size() - 1 - i] != out[out.size() - 1 - i]) return false;
            return true;
        };
        if (a == b) {
            mode = Mode::kSame;
        } else if (nb == 1 && na == n) {
            mode = Mode::kScalarB;
        } else if (na == 1 && nb == n) {
            mode = Mode::kScalarA;
        } else if (na == n && is_suffix(b)) {
            mode = Mode::kSuffixB;
        } else if (nb == n && is_suffix(a)) {
            mode = Mode::kSuffixA;
        } else {
            mode = Mode::kGeneral;
            auto expand = [&](const Shape &s) {
                Shape full(r, 1);
                for (std::size_t i = 0; i < s.size(); ++i) full[r - s.size() + i] = s[i];
                auto st = strides_of(full);
                for (std::size_t i = 0; i < r; ++i)
                    if (full[i] == 1) st[i] = 0;
                return st;
            };
            const auto sa = expand(a), sb = expand(b);
            ia.resize(n);
            ib.resize(n);
            std::vector<std::size_t> idx(r, 0);
            std::size_t oa = 0, ob = 0;
            for (std::size_t i = 0; i < n; ++i) {
                ia[i] = oa;
                ib[i] = ob;
                for (std::size_t d = r; d-- > 0;) {
                    ++idx[d];
                    oa += sa[d];
                    ob += sb[d];
                    if (idx[d] < out[d]) break;
                    oa -= sa[d] * out[d];
                    ob -= sb[d] * out[d];
                    idx[d] = 0;
                }
            }
        }
    }

    std::size_t a_index(std::size_t i) const {
        switch (mode) {
            case Mode::kSame:
            case Mode::kScalarB:
            case Mode::kSuffixB:
                return i;
            case Mode::kScalarA:
                return 0;
            case Mode::kSuffixA:
                return i % na;
            default:
                return ia[i];
        }
    }
    std::size_t b_index(std::size_t i) const {
        switch (mode) {
            case Mode::kSame:
            case Mode::kScalarA:
            case Mode::kSuffixA:
                return i;
            case Mode::kScalarB:
                return 0;
            case Mode::kSuffixB:
                return i % nb;
            default:
                return ib[i];
        }
    }
};

template <class F, class DA, class DB>
Tensor binary_op(const Tensor &a, const Tensor &b, std::string_view name, F f, DA dfa, DB dfb) {
    auto bc = std::make_shared<Broadcast>(a.shape(), b.shape());
    const std::size_t n = numel(bc->out);
    std::vector<float> out(n);
    const float *pa = a.data().data();
    const float *pb = b.data().data();
    if (bc->mode == Broadcast::Mode::kSame) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i], pb[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[bc->a_index(i)], pb[bc->b_index(i)]);
    }
    return Tensor::make(bc->out, std::move(out), {a, b}, name, [a, b, bc, dfa, dfb](Node &self) {
        const float *g = self.grad.data();
        const float *pa = a.data().data();
        const float *pb = b.data().data();
        float *ga = grad_of(a);
        float *gb = grad_of(b);
        const std::size_t n = self.size();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ja = bc->a_index(i), jb = bc->b_index(i);
            if (ga) ga[ja] += g[i] * dfa(pa[ja], pb[jb]);
            if (gb) gb[jb] += g[i] * dfb(pa[ja], pb[jb]);
        }
    });
}

/// y = f(x) with dy/dx = df(x, y).
template <class F, class DF>
Tensor unary_op(const Tensor &x, std::string_view name, F f, DF df) {
    const std::size_t n = x.numel();
    std::vector<float> out(n);
    const float *px = x.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(px[i]);
    return Tensor::make(x.shape(), std::move(out), {x}, name, [x, df](Node &self) {
        float *gx = grad_of(x);
        if (!gx) return;
        const float *px = x.data().data();
        const float *py = self.data->data();
        const float *g = self.grad.data();
        for (std::size_t i = 0; i < self.size(); ++i) gx[i] += g[i] * df(px[i], py[i]);
    });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Tensor add(const Tensor &a, const Tensor &b) {
    return detail::binary_op(
        a, b, "add", [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
        [](float, float) { return 1.0f; });
}
inline Tensor sub(const Tensor &a, const Tensor &b) {
    return detail::binary_op(
        a, b, "sub", [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
        [](float, float) { return -1.0f; });
}
inline Tensor mul(const Tensor &a, const Tensor &b) {
    return detail::binary_op(
        a, b, "mul", [](float x, float y) { return x * y; }, [](float, float y) { return y; },
        [](float x, float) { return x; });
}
inline Tensor div(const Tensor &a, const Tensor &b) {
    return detail::binary_op(
        a, b, "div", [](float x, float y) { return x / y; }, [](float, float y) { return 1.0f / y; },
        [](float x, float y) { return -x / (y * y); });
}

inline Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
inline Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
inline Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
inline Tensor operator/(const Tensor &a, const Tensor &b) { return div(a, b); }

inline Tensor scale(const Tensor &x, float s) {
    return detail::unary_op(
        x, "scale", [s](float v) { return v * s; }, [s](float, float) { return s; });
}
inline Tensor add_scalar(const Tensor &x, float s) {
    return detail::unary_op(
        x, "add_scalar", [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}
inline Tensor operator*(const Tensor &x, float s) { return scale(x, s); }
inline Tensor operator*(float s, const Tensor &x) { return scale(x, s); }
inline Tensor operator+(const Tensor &x, float s) { return add_scalar(x, s); }
inline Tensor operator-(const Tensor &x) { return scale(x, -1.0f); }

inline Tensor exp(const Tensor &x) {
    return detail::unary_op(
        x, "exp", [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}
inline Tensor log(const Tensor &x) {
    return detail::unary_op(
        x, "log", [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}
inline Tensor sqrt(const Tensor &x) {
    return detail::unary_op(
        x, "sqrt", [](float v) { return std::sqrt(v); }, [](float, float y) { return 0.5f / y; });
}
inline Tensor square(const Tensor &x) {
    return detail::unary_op(
        x, "square", [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}
inline Tensor tanh(const Tensor &x) {
    return detail::unary_op(
        x, "tanh", [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}
inline float sigmoid_scalar(float v) { return v >= 0 ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v)); }
inline Tensor sigmoid(const Tensor &x) {
    return detail::unary_op(x, "sigmoid", sigmoid_scalar, [](float, float y) { return y * (1.0f - y); });
}
inline Tensor silu(const Tensor &x) {
    return detail::unary_op(
        x, "silu", [](float v) { return v * sigmoid_scalar(v); },
        [](float v, float) {
            const float s = sigmoid_scalar(v);
            return s * (1.0f + v * (1.0f - s));
        });
}
/// tanh-approximated GELU.
inline Tensor gelu(const Tensor &x) {
    constexpr float k = 0.7978845608028654f;  // sqrt(2/pi)
    return detail::unary_op(
        x, "gelu",
        [](float v) { return 0.5f * v * (1.0f + std::tanh(k * (v + 0.044715f * v * v * v))); },
        [](float v, float) {
            const float u = k * (v + 0.044715f * v * v * v);
            const float t = std::tanh(u);
            return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * k * (1.0f + 3.0f * 0.044715f * v * v);
        });
}
/// Clamp; gradient passes only strictly inside the interval.
inline Tensor clamp(const Tensor &x, float lo, float hi) {
    return detail::unary_op(
        x, "clamp", [lo, hi](float v) { return std::clamp(v, lo, hi); },
        [lo, hi](float v, float) { return (v > lo && v < hi) ? 1.0f : 0.0f; });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor &x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    return Tensor::make(Shape{}, {static_cast<float>(acc)}, {x}, "sum", [x](detail::Node &self) {
        float *gx = detail::grad_of(x);
        if (!gx) return;
        const float g = self.grad[0];
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
}

inline Tensor mean(const Tensor &x) {
    if (x.numel() == 0) throw ContractError("mean of empty tensor");
    return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

/// Sum over one axis; the axis is kept with size 1 when keepdim.
inline Tensor sum(const Tensor &x, std::size_t axis, bool keepdim = false) {
    const Shape &s = x.shape();
    if (axis >= s.size()) throw ShapeError("sum axis out of range for " + to_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape os = s;
    if (keepdim)
        os[axis] = 1;
    else
        os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<float> out(outer * inner, 0.0f);
    const float *px = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += px[(o * len + l) * inner + i];
    return Tensor::make(os, std::move(out), {x}, "sum_axis", [x, outer, inner, len](detail::Node &self) {
        float *gx = detail::grad_of(x);
        if (!gx) return;
        const float *g = self.grad.data();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i) gx[(o * len + l) * inner + i] += g[o * inner + i];
    });
}

inline Tensor mse(const Tensor &a, const Tensor &b) {
    if (a.shape() != b.shape()) throw ShapeError("mse shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    return mean(square(a - b));
}

// ---------------------------------------------------------------- linear algebra

inline Tensor matmul(const Tensor &a, const Tensor &b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul dimension mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<float> out(m * n);
    detail::as_matrix(out.data(), m, n).noalias() =
        detail::as_matrix(a.data().data(), m, k) * detail::as_matrix(b.data().data(), k, n);
    return Tensor::make({m, n}, std::move(out), {a, b}, "matmul", [a, b, m, k, n](detail::Node &self) {
        auto g = detail::as_matrix(static_cast<const float *>(self.grad.data()), m, n);
        if (float *ga = detail::grad_of(a))
            detail::as_matrix(ga, m, k).noalias() += g * detail::as_matrix(b.data().data(), k, n).transpose();
        if (float *gb = detail::grad_of(b))
            detail::as_matrix(gb, k, n).noalias() += detail::as_matrix(a.data().data(), m, k).transpose() * g;
    });
}

// ---------------------------------------------------------------- shape manipulation

inline Tensor reshape(const Tensor &x, Shape shape) {
    if (numel(shape) != x.numel())
        throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
    return Tensor::make_shared_storage(std::move(shape), x.node().data, {x}, "reshape", [x](detail::Node &self) {
        float *gx = detail::grad_of(x);
        if (!gx) return;
        for (std::size_t i = 0; i < self.size(); ++i) gx[i] += self.grad[i];
    });
}

/// General axis permutation: out.shape[i] = x.shape[axes[i]].
inline Tensor permute(const Tensor &x, const std::vector<std::size_t> &axes) {
    const Shape &s = x.shape();
    const std::size_t r = s.size();
    if (axes.size() != r) throw ShapeError("permute rank mismatch for " + to_string(s));
    std::vector<bool> seen(r, false);
    for (auto a : axes) {
        if (a >= r || seen[a]) throw ShapeError("invalid permutation for " + to_string(s));
        seen[a] = true;
    }
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) os[i] = s[axes[i]];
    const auto in_strides = detail::strides_of(s);
    std::vector<std::size_t> st(r);
    for (std::size_t i = 0; i < r; ++i) st[i] = in_strides[axes[i]];
    const std::size_t n = x.numel();
    auto map = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        (*map)[i] = off;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            off += st[d];
            if (idx[d] < os[d]) break;
            off -= st[d] * os[d];
            idx[d] = 0;
        }
    }
    std::vector<float> out(n);
    const float *px = x.data().data();
    for (std::size_t i = 0; i < n; ++i) out[i] = px[(*map)[i]];
    return Tensor::make(os, std::move(out), {x}, "permute", [x, map](detail::Node &self) {
        float *gx = detail::grad_of(x);
        if (!gx) return;
        for (std::size_t i = 0; i < self.size(); ++i) gx[(*map)[i]] += self.grad[i];
    });
}

inline Tensor transpose(const Tensor &x) {
    if (x.rank() != 2) throw ShapeError("transpose expects a matrix, got " + to_string(x.shape()));
    return permute(x, {1, 0});
}

inline Tensor broadcast_to(const Tensor &x, const Shape &shape) {
    detail::Broadcast bc(x.shape(), shape);
    if (bc.out != shape) throw ShapeError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
    return add(x, Tensor::zeros(shape));
}

/// Contiguous range [start, start+len) along axis.
inline Tensor slice(const Tensor &x, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape &s = x.shape();
    if (axis >= s.size() || start + len > s[axis])
        throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) + ") on axis " +
                         std::to_string(axis) + " out of range for " + to_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t full = s[axis];
    Shape os = s;
    os[axis] = len;
    std::vector<float> out(outer * len * inner);
    const float *px = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(px + (o * full + start) * inner, len * inner, out.data() + o * len * inner);
    return Tensor::make(os, std::move(out), {x}, "slice", [x, outer, inner, full, start, len](detail::Node &self) {
        float *gx = detail::grad_of(x);
        if (!gx) return;
        const float *g = self.grad.data();
        for (std::size_t o = 0; o < outer; ++o) {
            float *dst = gx + (o * full + start) * inner;
            const float *src = g + o * len * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

inline Tensor concat(const std::vector<Tensor> &parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape &s0 = parts[0].shape();
    if (axis >= s0.size()) throw ShapeError("concat axis out of range for " + to_string(s0));
    std::size_t total = 0;
    for (const auto &p : parts) {
        const Shape &s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
        if (!ok) throw ShapeError("concat shape mismatch " + to_string(s0) + " vs " + to_string(s));
        total += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    Shape os = s0;
    os[axis] = total;
    std::vector<float> out(outer * total * inner);
    std::size_t offset = 0;
    for (const auto &p : parts) {
        const std::size_t len = p.shape()[axis];
        const float *src = p.data().data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src + o * len * inner, len * inner, out.data() + (o * total + offset) * inner);
        offset += len;
    }
    return Tensor::make(os, std::move(out), parts, "concat", [parts, outer, inner, total, axis](detail::Node &self) {
        std::size_t offset = 0;
        const float *g = self.grad.data();
        for (const auto &p : parts) {
            const std::size_t len = p.shape()[axis];
            if (float *gp = detail::grad_of(p)) {
                for (std::size_t o = 0; o < outer; ++o) {
                    const float *src = g + (o * total + offset) * inner;
                    float *dst = gp + o * len * inner;
                    for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
            }
            offset += len;
        }
    });
}

/// Rows of a matrix-like tensor (axis 0) gathered by index; repeated indices accumulate.
inline Tensor index_select(const Tensor &x, const std::vector<std::size_t> &rows) {
    if (x.rank() < 1) throw ShapeError("index_select on scalar");
    const std::size_t n0 = x.dim(0);
    const std::size_t inner = n0 == 0 ? 0 : x.numel() / n0;
    for (auto r : rows)
        if (r >= n0) throw ShapeError("index " + std::to_string(r) + " out of range for " + to_string(x.shape()));
    Shape os = x.shape();
    os[0] = rows.size();
    std::vector<float> out(rows.size() * inner);
    const float *px = x.data().data();
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(px + rows[i] * inner, inner, out.data() + i * inner);
    return Tensor::make(os, std::move(out), {x}, "index_select", [x, rows, inner](detail::Node &self) {
        float *gx = detail::grad_of(x);
        if (!gx) return;
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < inner; ++j) gx[rows[i] * inner + j] += self.grad[i * inner + j];
    });
}

// ---------------------------------------------------------------- normalization

/// Softmax over the last axis.
inline Tensor softmax(const Tensor &x) {
    if (x.rank() < 1) throw ShapeError("softmax on scalar");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    std::vector<float> out(x.numel());
    const float *px = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const float *row = px + r * d;
        float *o = out.data() + r * d;
        const float mx = *std::max_element(row, row + d);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            o[j] = std::exp(row[j] - mx);
            z += o[j];
        }
        const float inv = static_cast<float>(1.0 / z);
        for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
    }
    return Tensor::make(x.shape(), std::move(out), {x}, "softmax", [x, rows, d](detail::Node &self) {
        float *gx = detail::grad_of(x);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const float *y = self.data->data() + r * d;
            const float *g = self.grad.data() + r * d;
            float dot = 0.0f;
            for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
        }
    });
}

/// Layer normalization over the last axis, followed by an optional affine map.
inline Tensor layer_norm(const Tensor &x, const Tensor &weight = {}, const Tensor &bias = {}, float eps = 1e-5f) {
    if (x.rank() < 1) throw ShapeError("layer_norm on scalar");
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    if (weight.defined() && weight.numel() != d) throw ShapeError("layer_norm weight size mismatch");
    if (bias.defined() && bias.numel() != d) throw ShapeError("layer_norm bias size mismatch");
    auto xhat = std::make_shared<std::vector<float>>(x.numel());
    auto rstd = std::make_shared<std::vector<float>>(rows);
    std::vector<float> out(x.numel());
    const float *px = x.data().data();
    const float *pw = weight.defined() ? weight.data().data() : nullptr;
    const float *pb = bias.defined() ? bias.data().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const float *row = px + r * d;
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += row[j];
        m /= static_cast<double>(d);
        double v = 0.0;
        for (std::size_t j = 0; j < d; ++j) v += (row[j] - m) * (row[j] - m);
        v /= static_cast<double>(d);
        const float rs = static_cast<float>(1.0 / std::sqrt(v + eps));
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const float h = static_cast<float>(row[j] - m) * rs;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = (pw ? h * pw[j] : h) + (pb ? pb[j] : 0.0f);
        }
    }
    std::vector<Tensor> parents{x};
    if (weight.defined()) parents.push_back(weight);
    if (bias.defined()) parents.push_back(bias);
    return Tensor::make(x.shape(), std::move(out), parents, "layer_norm",
                        [x, weight, bias, xhat, rstd, rows, d](detail::Node &self) {
                            const float *g = self.grad.data();
                            const float *pw = weight.defined() ? weight.data().data() : nullptr;
                            float *gw = weight.defined() ? detail::grad_of(weight) : nullptr;
                            float *gb = bias.defined() ? detail::grad_of(bias) : nullptr;
                            float *gx = detail::grad_of(x);
                            std::vector<float> gh(d);
                            for (std::size_t r = 0; r < rows; ++r) {
                                const float *h = xhat->data() + r * d;
                                const float *gr = g + r * d;
                                float mean_gh = 0.0f, mean_ghh = 0.0f;
                                for (std::size_t j = 0; j < d; ++j) {
                                    if (gw) gw[j] += gr[j] * h[j];
                                    if (gb) gb[j] += gr[j];
                                    gh[j] = pw ? gr[j] * pw[j] : gr[j];
                                    mean_gh += gh[j];
                                    mean_ghh += gh[j] * h[j];
                                }
                                if (!gx) continue;
                                mean_gh /= static_cast<float>(d);
                                mean_ghh /= static_cast<float>(d);
                                const float rs = (*rstd)[r];
                                for (std::size_t j = 0; j < d; ++j)
                                    gx[r * d + j] += rs * (gh[j] - mean_gh - h[j] * mean_ghh);
                            }
                        });
}

/// Rows scaled to unit L2 norm over the last axis; all-zero rows map to e0.
inline Tensor normalize_rows(const Tensor &x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    auto norms = std::make_shared<std::vector<float>>(rows);
    std::vector<float> out(x.numel());
    const float *px = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(px[r * d + j]) * px[r * d + j];
        const float nrm = static_cast<float>(std::sqrt(s));
        (*norms)[r] = nrm;
        if (nrm > 1e-12f) {
            for (std::size_t j = 0; j < d; ++j) out[r * d + j] = px[r * d + j] / nrm;
        } else {
            out[r * d] = 1.0f;
        }
    }
    return Tensor::make(x.shape(), std::move(out), {x}, "normalize_rows", [x, norms, rows, d](detail::Node &self) {
        float *gx = detail::grad_of(x);
        if (!gx) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const float nrm = (*norms)[r];
            if (nrm <= 1e-12f) continue;
            const float *y = self.data->data() + r * d;
            const float *g = self.grad.data() + r * d;
            float dot = 0.0f;
            for (std::size_t j = 0; j < d; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += (g[j] - y[j] * dot) / nrm;
        }
    });
}

}  // namespace wonderland
