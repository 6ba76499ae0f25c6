#pragma once

#include "wonderland/nn/module.hpp"
#include "wonderland/numerics/conv.hpp"

namespace wonderland::pipeline {

/// Fixed random-weight feature pyramid: three 3×3 stride-2 conv + SiLU stages.
class FeaturePyramid {
   public:
    explicit FeaturePyramid(std::uint64_t seed = 1234, std::array<std::size_t, 3> widths = {8, 16, 16}) {
        Generator gen(seed);
        std::size_t cin = 3;
        for (std::size_t w : widths) {
            weights_.push_back(randn({3, 3, cin, w}, gen, 1.0f / std::sqrt(9.0f * static_cast<float>(cin))));
            biases_.push_back(Tensor::zeros({w}));
            cin = w;
        }
    }

    std::vector<Tensor> features(const Tensor &image) const {
        std::vector<Tensor> out;
        Tensor x = image;
        for (std::size_t s = 0; s < weights_.size(); ++s) {
            x = silu(conv2d(x, weights_[s], biases_[s], {2, 2}, {1, 1}));
            out.push_back(x);
        }
        return out;
    }

   private:
    std::vector<Tensor> weights_, biases_;
};

struct ReconLoss {
    Tensor total, mse, perceptual;
};

/// λ1·MSE + λ2·mean squared feature distance, averaged over the image pairs.
inline ReconLoss loss_recon(const std::vector<Tensor> &rendered, const std::vector<Tensor> &target, double lambda1, double lambda2,
                            const FeaturePyramid &net) {
    if (rendered.size() != target.size()) throw ContractError("loss_recon: " + std::to_string(rendered.size()) + " renders vs " + std::to_string(target.size()) + " targets");
    if (rendered.empty()) throw ContractError("loss_recon needs at least one image");
    Tensor l_mse, l_perc;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (rendered[i].shape() != target[i].shape())
            throw ContractError("loss_recon: image " + std::to_string(i) + " shapes " + to_string(rendered[i].shape()) + " and " +
                                to_string(target[i].shape()) + " differ");
        const Tensor m = mse(rendered[i], target[i]);
        l_mse = l_mse.defined() ? l_mse + m : m;
        if (lambda2 != 0.0) {
            const auto fa = net.features(rendered[i]);
            const auto fb = net.features(target[i].detach());
            Tensor p = mse(fa[0], fb[0]);
            for (std::size_t s = 1; s < fa.size(); ++s) p = p + mse(fa[s], fb[s]);
            p = scale(p, 1.0f / static_cast<float>(fa.size()));
            l_perc = l_perc.defined() ? l_perc + p : p;
        }
    }
    const float inv = 1.0f / static_cast<float>(rendered.size());
    ReconLoss out;
    out.mse = scale(l_mse, inv);
    out.perceptual = l_perc.defined() ? scale(l_perc, inv) : Tensor::scalar(0.0f);
    out.total = scale(out.mse, static_cast<float>(lambda1));
    if (l_perc.defined()) out.total = out.total + scale(out.perceptual, static_cast<float>(lambda2));
    return out;
}

}  // namespace wonderland::pipeline
