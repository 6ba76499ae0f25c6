#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wonderland/numerics/attention.hpp"
#include "wonderland/numerics/ops.hpp"

namespace wonderland::nn {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Base for parameter containers. Parameters and children are registered in a fixed
/// order, which defines checkpoint layout. Modules are neither copyable nor movable
/// because children are tracked by address.
class Module {
   public:
    Module() = default;
    Module(const Module &) = delete;
    Module &operator=(const Module &) = delete;
    virtual ~Module() = default;

    NamedTensors named_parameters(const std::string &prefix = "") const {
        NamedTensors out;
        collect(prefix, out);
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto &[_, t] : named_parameters()) out.push_back(t);
        return out;
    }

    /// Parameters that currently receive gradients.
    NamedTensors trainable_parameters(const std::string &prefix = "") const {
        NamedTensors out;
        for (auto &[name, t] : named_parameters(prefix))
            if (t.requires_grad()) out.emplace_back(name, t);
        return out;
    }

    void set_trainable(bool trainable) {
        for (auto &[_, t] : named_parameters()) const_cast<Tensor &>(t).set_requires_grad(trainable);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto &[_, t] : named_parameters()) n += t.numel();
        return n;
    }

    /// Copies values from same-named, same-shaped tensors; returns the names that were missing.
    std::vector<std::string> load_values(const std::map<std::string, Tensor> &values, const std::string &prefix = "") {
        std::vector<std::string> missing;
        for (auto &[name, t] : named_parameters(prefix)) {
            auto it = values.find(name);
            if (it == values.end()) {
                missing.push_back(name);
                continue;
            }
            if (it->second.shape() != t.shape())
                throw ShapeError("parameter " + name + " has shape " + to_string(t.shape()) + ", stored " +
                                 to_string(it->second.shape()));
            auto dst = const_cast<Tensor &>(t).mutable_data();
            std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
        }
        return missing;
    }

    /// Copies every parameter value from a structurally identical module.
    void copy_values_from(const Module &other) {
        auto src = other.named_parameters();
        auto dst = named_parameters();
        if (src.size() != dst.size()) throw ShapeError("copy_values_from: structure mismatch");
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i].second.shape() != dst[i].second.shape()) throw ShapeError("copy_values_from: shape mismatch at " + src[i].first);
            auto out = dst[i].second.mutable_data();
            std::copy(src[i].second.data().begin(), src[i].second.data().end(), out.begin());
        }
    }

   protected:
    Tensor register_parameter(const std::string &name, Tensor t, bool trainable = true) {
        t.set_requires_grad(trainable);
        params_.emplace_back(name, t);
        return t;
    }
    void register_module(const std::string &name, Module &child) { children_.emplace_back(name, &child); }

   private:
    void collect(const std::string &prefix, NamedTensors &out) const {
        for (auto &[name, t] : params_) out.emplace_back(prefix + name, t);
        for (auto &[name, child] : children_) child->collect(prefix + name + ".", out);
    }

    NamedTensors params_;
    std::vector<std::pair<std::string, Module *>> children_;
};

/// y = x W + b, W stored [in, out]; optional low-rank adapter x A B * (alpha / rank).
class Linear : public Module {
   public:
    enum class Init { kDefault, kZero, kIdentityTop };

    Linear(std::size_t in, std::size_t out, Generator &gen, Init init = Init::kDefault, bool with_bias = true)
        : in_(in), out_(out) {
        Tensor w;
        switch (init) {
            case Init::kDefault:
                w = randn({in, out}, gen, 1.0f / std::sqrt(static_cast<float>(in)));
                break;
            case Init::kZero:
                w = Tensor::zeros({in, out});
                break;
            case Init::kIdentityTop: {
                // [I; 0]: the first `out` input channels pass through unchanged.
                w = Tensor::zeros({in, out});
                auto d = w.mutable_data();
                for (std::size_t i = 0; i < std::min(in, out); ++i) d[i * out + i] = 1.0f;
                break;
            }
        }
        weight_ = register_parameter("weight", w);
        if (with_bias) bias_ = register_parameter("bias", Tensor::zeros({out}));
    }

    void add_lora(std::size_t rank, Generator &gen, float alpha = 0.0f) {
        if (rank == 0) return;
        lora_a_ = register_parameter("lora_a", randn({in_, rank}, gen, 1.0f / std::sqrt(static_cast<float>(in_))));
        lora_b_ = register_parameter("lora_b", Tensor::zeros({rank, out_}));
        lora_scale_ = (alpha > 0.0f ? alpha : static_cast<float>(rank)) / static_cast<float>(rank);
    }

    Tensor forward(const Tensor &x, bool use_lora = true) const {
        Tensor y = matmul(x, weight_);
        if (bias_.defined()) y = y + bias_;
        if (use_lora && lora_a_.defined()) y = y + scale(matmul(matmul(x, lora_a_), lora_b_), lora_scale_);
        return y;
    }

    bool has_lora() const { return lora_a_.defined(); }
    const Tensor &weight() const { return weight_; }
    const Tensor &bias() const { return bias_; }
    const Tensor &lora_a() const { return lora_a_; }
    const Tensor &lora_b() const { return lora_b_; }
    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

   private:
    std::size_t in_, out_;
    Tensor weight_, bias_, lora_a_, lora_b_;
    float lora_scale_ = 1.0f;
};

class LayerNorm : public Module {
   public:
    explicit LayerNorm(std::size_t d) {
        weight_ = register_parameter("weight", Tensor::ones({d}));
        bias_ = register_parameter("bias", Tensor::zeros({d}));
    }
    Tensor forward(const Tensor &x) const { return layer_norm(x, weight_, bias_); }

   private:
    Tensor weight_, bias_;
};

/// Pre-norm transformer block: self-attention then a SiLU MLP, both residual.
class TransformerBlock : public Module {
   public:
    TransformerBlock(std::size_t d, std::size_t heads, Generator &gen, std::size_t mlp_ratio = 4)
        : d_(d),
          heads_(heads),
          norm1_(d),
          qkv_(d, 3 * d, gen),
          proj_(d, d, gen),
          norm2_(d),
          fc1_(d, mlp_ratio * d, gen),
          fc2_(mlp_ratio * d, d, gen) {
        if (heads == 0 || d % heads != 0) throw ContractError("hidden size must be divisible by heads");
        register_module("norm1", norm1_);
        register_module("qkv", qkv_);
        register_module("proj", proj_);
        register_module("norm2", norm2_);
        register_module("fc1", fc1_);
        register_module("fc2", fc2_);
    }

    void add_lora(std::size_t rank, Generator &gen) {
        for (Linear *l : {&qkv_, &proj_, &fc1_, &fc2_}) l->add_lora(rank, gen);
    }

    Tensor forward(const Tensor &x, bool use_lora = true) const {
        const Tensor h = norm1_.forward(x);
        const Tensor qkv = qkv_.forward(h, use_lora);
        const Tensor a = attention(slice(qkv, 1, 0, d_), slice(qkv, 1, d_, d_), slice(qkv, 1, 2 * d_, d_), heads_);
        const Tensor x1 = x + proj_.forward(a, use_lora);
        return x1 + fc2_.forward(silu(fc1_.forward(norm2_.forward(x1), use_lora)), use_lora);
    }

    std::size_t width() const { return d_; }
    std::size_t heads() const { return heads_; }

   private:
    std::size_t d_, heads_;
    LayerNorm norm1_;
    Linear qkv_, proj_;
    LayerNorm norm2_;
    Linear fc1_, fc2_;
};

/// Sinusoidal embedding of a scalar position/time, width d (even).
inline Tensor sinusoidal_embedding(double value, std::size_t d, double max_period = 10000.0) {
    std::vector<float> v(d, 0.0f);
    const std::size_t half = d / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
        v[i] = static_cast<float>(std::cos(value * freq));
        v[half + i] = static_cast<float>(std::sin(value * freq));
    }
    return Tensor({1, d}, std::move(v));
}

/// Learned additive positional encoding over a (t, y, x) token grid.
///
/// Each axis owns a table of `table` learned rows; a grid of any size samples the table
/// by linear interpolation at normalized coordinates, so one set of weights serves
/// several resolutions.
class GridPositionalEncoding : public Module {
   public:
    GridPositionalEncoding(std::size_t d, std::size_t table, Generator &gen) : d_(d), table_(table) {
        for (std::size_t a = 0; a < 3; ++a)
            tables_[a] = register_parameter("axis" + std::to_string(a), randn({table, d}, gen, 0.02f));
    }

    /// [gt*gy*gx, d] encoding in row-major grid order.
    Tensor forward(std::size_t gt, std::size_t gy, std::size_t gx) const {
        const std::array<std::size_t, 3> dims{gt, gy, gx};
        std::array<Tensor, 3> per_axis;
        for (std::size_t a = 0; a < 3; ++a) per_axis[a] = matmul(interpolation(dims[a]), tables_[a]);
        const std::size_t n = gt * gy * gx;
        std::vector<std::size_t> it(n), iy(n), ix(n);
        for (std::size_t t = 0, r = 0; t < gt; ++t)
            for (std::size_t y = 0; y < gy; ++y)
                for (std::size_t x = 0; x < gx; ++x, ++r) {
                    it[r] = t;
                    iy[r] = y;
                    ix[r] = x;
                }
        return index_select(per_axis[0], it) + index_select(per_axis[1], iy) + index_select(per_axis[2], ix);
    }

   private:
    Tensor interpolation(std::size_t n) const {
        std::vector<float> m(n * table_, 0.0f);
        for (std::size_t i = 0; i < n; ++i) {
            const double pos = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * static_cast<double>(table_) - 0.5;
            const double clamped = std::clamp(pos, 0.0, static_cast<double>(table_ - 1));
            const auto lo = static_cast<std::size_t>(std::floor(clamped));
            const std::size_t hi = std::min(lo + 1, table_ - 1);
            const double w = clamped - static_cast<double>(lo);
            m[i * table_ + lo] += static_cast<float>(1.0 - w);
            m[i * table_ + hi] += static_cast<float>(w);
        }
        return Tensor({n, table_}, std::move(m));
    }

    std::size_t d_, table_;
    std::array<Tensor, 3> tables_;
};

}  // namespace wonderland::nn
