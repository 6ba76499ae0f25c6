#pragma once

#include <cmath>

#include "wonderland/numerics/tensor.hpp"

namespace wonderland::pipeline {

constexpr double kPsnrCap = 99.0;

inline void check_same_image(const Tensor &a, const Tensor &b, const char *what) {
    if (a.shape() != b.shape()) throw ContractError(std::string(what) + ": image shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
    if (a.rank() != 3) throw ContractError(std::string(what) + ": expected H×W×C images, got " + to_string(a.shape()));
}

inline double mean_squared_error(const Tensor &a, const Tensor &b) {
    if (a.shape() != b.shape()) throw ContractError("mse: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.at(i)) - b.at(i);
        acc += d * d;
    }
    return a.numel() ? acc / static_cast<double>(a.numel()) : 0.0;
}

/// Peak signal-to-noise ratio for images in [0, 1], capped at 99 dB.
inline double psnr(const Tensor &a, const Tensor &b) {
    check_same_image(a, b, "psnr");
    const double m = mean_squared_error(a, b);
    if (m < 1e-10) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ 1.5), averaged over channels.
inline double ssim(const Tensor &a, const Tensor &b) {
    check_same_image(a, b, "ssim");
    constexpr int kWin = 11;
    const std::size_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
    if (H < kWin || W < kWin) throw ContractError("ssim needs images of at least 11×11, got " + to_string(a.shape()));
    double g[kWin], gsum = 0.0;
    for (int i = 0; i < kWin; ++i) gsum += g[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5));
    for (double &v : g) v /= gsum;
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const std::size_t oh = H - kWin + 1, ow = W - kWin + 1;
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        const double w = g[i] * g[j];
                        const std::size_t idx = ((y + i) * W + (x + j)) * C + c;
                        const double va = a.at(idx), vb = b.at(idx);
                        ma += w * va;
                        mb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                total += ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
            }
    return total / static_cast<double>(C * oh * ow);
}

}  // namespace wonderland::pipeline
