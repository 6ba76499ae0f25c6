#pragma once

#include <cmath>

#include "wonderland/nn/module.hpp"

namespace wonderland::nn {

/// Adam with decoupled weight decay. Matrices (rank >= 2) decay; vectors do not.
class AdamW {
   public:
    struct Options {
        float beta1 = 0.9f;
        float beta2 = 0.95f;
        float eps = 1e-8f;
        float weight_decay = 1e-4f;
    };

    AdamW(std::vector<Tensor> params, Options opt) : params_(std::move(params)), opt_(opt) {
        for (auto &p : params_) {
            m_.emplace_back(p.numel(), 0.0f);
            v_.emplace_back(p.numel(), 0.0f);
        }
    }

    void zero_grad() {
        for (auto &p : params_) p.zero_grad();
    }

    /// Global L2 norm of all gradients; scales them down to max_norm if above.
    double clip_grad_norm(double max_norm) {
        double total = 0.0;
        for (auto &p : params_)
            if (p.has_grad())
                for (float g : p.node().grad) total += static_cast<double>(g) * g;
        total = std::sqrt(total);
        if (!std::isfinite(total)) throw NumericError("non-finite gradient norm");
        if (max_norm > 0.0 && total > max_norm) {
            const float s = static_cast<float>(max_norm / (total + 1e-12));
            for (auto &p : params_)
                if (p.has_grad())
                    for (float &g : p.node().grad) g *= s;
        }
        return total;
    }

    void step(float lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(static_cast<double>(opt_.beta1), static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(static_cast<double>(opt_.beta2), static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor &p = params_[i];
            if (!p.has_grad()) continue;
            auto w = p.mutable_data();
            const auto &g = p.node().grad;
            auto &m = m_[i];
            auto &v = v_[i];
            const bool decay = p.rank() >= 2 && opt_.weight_decay > 0.0f;
            for (std::size_t j = 0; j < w.size(); ++j) {
                m[j] = opt_.beta1 * m[j] + (1.0f - opt_.beta1) * g[j];
                v[j] = opt_.beta2 * v[j] + (1.0f - opt_.beta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                if (decay) w[j] -= lr * opt_.weight_decay * w[j];
                w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + opt_.eps));
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

   private:
    std::vector<Tensor> params_;
    Options opt_;
    std::vector<std::vector<float>> m_, v_;
    std::size_t t_ = 0;
};

/// Linear warmup then cosine annealing from peak to floor.
inline float cosine_lr(std::size_t step, std::size_t total, float peak, std::size_t warmup, float floor_ratio = 0.05f) {
    if (total == 0) return peak;
    if (step < warmup) return peak * static_cast<float>(step + 1) / static_cast<float>(warmup);
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(std::max<std::size_t>(1, total - warmup)));
    const double floor = peak * floor_ratio;
    return static_cast<float>(floor + (peak - floor) * 0.5 * (1.0 + std::cos(M_PI * progress)));
}

}  // namespace wonderland::nn
