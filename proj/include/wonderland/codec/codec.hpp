#pragma once

#include <string>

#include "wonderland/nn/optim.hpp"
#include "wonderland/numerics/conv.hpp"

namespace wonderland::codec {

struct Rates {
    std::size_t r_t = 4;
    std::size_t r_s = 8;

    std::size_t latent_frames(std::size_t T) const { return 1 + (T - 1) / r_t; }
    std::size_t video_frames(std::size_t t) const { return 1 + (t - 1) * r_t; }
    std::size_t lossless_channels() const { return 3 * r_t * r_s * r_s; }
};

/// T×H×W×3 frames in [0,1].
struct Video {
    Tensor data;
    double fps = 8.0;

    std::size_t frames() const { return data.dim(0); }
    std::size_t height() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
};

/// t×h×w×c latent tagged with the codec that produced it.
struct VideoLatent {
    Tensor data;
    std::string codec_id;
    Rates rates;
};

inline void check_video_shape(const Shape &s, const Rates &r) {
    if (s.size() != 4 || s[3] != 3) throw ShapeError("video must be T×H×W×3, got " + to_string(s));
    if (s[0] == 0 || (s[0] - 1) % r.r_t != 0)
        throw ShapeError("time axis: T-1 = " + std::to_string(s[0] == 0 ? 0 : s[0] - 1) + " is not divisible by r_t = " +
                         std::to_string(r.r_t));
    if (s[1] == 0 || s[1] % r.r_s != 0)
        throw ShapeError("height axis: H = " + std::to_string(s[1]) + " is not divisible by r_s = " + std::to_string(r.r_s));
    if (s[2] == 0 || s[2] % r.r_s != 0)
        throw ShapeError("width axis: W = " + std::to_string(s[2]) + " is not divisible by r_s = " + std::to_string(r.r_s));
}

class Codec {
   public:
    virtual ~Codec() = default;
    virtual std::string id() const = 0;
    virtual const Rates &rates() const = 0;
    virtual std::size_t channels() const = 0;
    virtual VideoLatent encode(const Video &video) const = 0;
    virtual Video decode(const VideoLatent &latent) const = 0;

   protected:
    void check_latent(const VideoLatent &z) const {
        if (z.codec_id != id()) throw ContractError("latent produced by codec '" + z.codec_id + "', decoder is '" + id() + "'");
        if (z.data.rank() != 4 || z.data.dim(3) != channels())
            throw ShapeError("latent must be t×h×w×" + std::to_string(channels()) + ", got " + to_string(z.data.shape()));
    }
};

/// Space-to-depth folding. Frame 0 is repeated r_t times to fill its own group; each
/// r_t×r_s×r_s×3 block maps to channel ((dt·r_s + dy)·r_s + dx)·3 + rgb.
class LosslessCodec final : public Codec {
   public:
    explicit LosslessCodec(Rates rates = {}) : rates_(rates) {}

    std::string id() const override { return "lossless-s2d"; }
    const Rates &rates() const override { return rates_; }
    std::size_t channels() const override { return rates_.lossless_channels(); }

    VideoLatent encode(const Video &video) const override {
        const Shape &s = video.data.shape();
        check_video_shape(s, rates_);
        const std::size_t T = s[0], H = s[1], W = s[2];
        const std::size_t rt = rates_.r_t, rs = rates_.r_s;
        const std::size_t t = rates_.latent_frames(T), h = H / rs, w = W / rs, c = channels();
        std::vector<float> out(t * h * w * c);
        const float *src = video.data.data().data();
        for (std::size_t g = 0; g < t; ++g)
            for (std::size_t dt = 0; dt < rt; ++dt) {
                const std::size_t frame = g == 0 ? 0 : 1 + (g - 1) * rt + dt;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const float *px = src + ((frame * H + y) * W + x) * 3;
                        const std::size_t ch = ((dt * rs + y % rs) * rs + x % rs) * 3;
                        float *dst = out.data() + ((g * h + y / rs) * w + x / rs) * c + ch;
                        dst[0] = px[0];
                        dst[1] = px[1];
                        dst[2] = px[2];
                    }
            }
        return {Tensor({t, h, w, c}, std::move(out)), id(), rates_};
    }

    /// Inverse fold; the replicated first group is averaged (in double, so exact for encoded input).
    Video decode(const VideoLatent &z) const override {
        check_latent(z);
        const std::size_t rt = rates_.r_t, rs = rates_.r_s;
        const std::size_t t = z.data.dim(0), h = z.data.dim(1), w = z.data.dim(2), c = channels();
        const std::size_t T = rates_.video_frames(t), H = h * rs, W = w * rs;
        std::vector<float> out(T * H * W * 3);
        std::vector<double> first(H * W * 3, 0.0);
        const float *src = z.data.data().data();
        for (std::size_t g = 0; g < t; ++g)
            for (std::size_t dt = 0; dt < rt; ++dt) {
                const std::size_t frame = g == 0 ? 0 : 1 + (g - 1) * rt + dt;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const std::size_t ch = ((dt * rs + y % rs) * rs + x % rs) * 3;
                        const float *v = src + ((g * h + y / rs) * w + x / rs) * c + ch;
                        const std::size_t pix = (y * W + x) * 3;
                        for (int k = 0; k < 3; ++k) {
                            if (g == 0)
                                first[pix + k] += v[k];
                            else
                                out[frame * H * W * 3 + pix + k] = v[k];
                        }
                    }
            }
        for (std::size_t i = 0; i < first.size(); ++i) out[i] = static_cast<float>(first[i] / static_cast<double>(rt));
        return {Tensor({T, H, W, 3}, std::move(out))};
    }

   private:
    Rates rates_;
};

struct LearnedCodecConfig {
    std::size_t channels = 16;
    std::size_t hidden = 32;
    Rates rates;
    std::uint64_t seed = 0;
};

/// Strided-convolution autoencoder with the same geometry as the lossless codec.
/// Both directions are a linear patch map plus a two-layer SiLU correction.
class LearnedCodec final : public Codec, public nn::Module {
   public:
    explicit LearnedCodec(LearnedCodecConfig cfg) : cfg_(cfg) {
        const auto &r = cfg.rates;
        if (r.r_s % 2 != 0) throw ContractError("learned codec needs an even r_s");
        Generator gen(cfg.seed);
        const std::size_t c = cfg.channels, hd = cfg.hidden, half = r.r_s / 2;
        const auto fan = [](std::size_t n) { return 1.0f / std::sqrt(static_cast<float>(n)); };
        enc_lin_ = register_parameter("enc_lin", randn({r.r_t, r.r_s, r.r_s, 3, c}, gen, fan(r.lossless_channels())));
        enc1_ = register_parameter("enc1", randn({1, 2, 2, 3, hd}, gen, fan(12)));
        enc1_b_ = register_parameter("enc1_b", Tensor::zeros({hd}));
        enc2_ = register_parameter("enc2", Tensor::zeros({r.r_t, half, half, hd, c}));
        enc_b_ = register_parameter("enc_b", Tensor::zeros({c}));
        dec_lin_ = register_parameter("dec_lin", randn({c, r.r_t, r.r_s, r.r_s, 3}, gen, fan(c)));
        dec1_ = register_parameter("dec1", randn({c, r.r_t, half, half, hd}, gen, fan(c)));
        dec1_b_ = register_parameter("dec1_b", Tensor::zeros({hd}));
        dec2_ = register_parameter("dec2", Tensor::zeros({hd, 1, 2, 2, 3}));
        dec_b_ = register_parameter("dec_b", Tensor::zeros({3}));
    }

    std::string id() const override { return "learned-conv-c" + std::to_string(cfg_.channels); }
    const Rates &rates() const override { return cfg_.rates; }
    std::size_t channels() const override { return cfg_.channels; }
    const LearnedCodecConfig &config() const { return cfg_; }

    /// Differentiable encoder on a T×H×W×3 tensor.
    Tensor encode_tensor(const Tensor &video) const {
        check_video_shape(video.shape(), cfg_.rates);
        const auto &r = cfg_.rates;
        const std::size_t half = r.r_s / 2;
        const Tensor x = causal_pad_frames(video + (-0.5f), r.r_t);
        const Tensor lin = conv3d(x, enc_lin_, enc_b_, {r.r_t, r.r_s, r.r_s});
        const Tensor h = silu(conv3d(x, enc1_, enc1_b_, {1, 2, 2}));
        return lin + conv3d(h, enc2_, Tensor(), {r.r_t, half, half});
    }

    /// Differentiable decoder on a t×h×w×c tensor.
    Tensor decode_tensor(const Tensor &z) const {
        if (z.rank() != 4 || z.dim(3) != cfg_.channels) throw ShapeError("learned codec latent has shape " + to_string(z.shape()));
        const auto &r = cfg_.rates;
        const std::size_t half = r.r_s / 2;
        const Tensor lin = conv_transpose3d(z, dec_lin_, dec_b_, {r.r_t, r.r_s, r.r_s});
        const Tensor h = silu(conv_transpose3d(z, dec1_, dec1_b_, {r.r_t, half, half}));
        const Tensor y = lin + conv_transpose3d(h, dec2_, Tensor(), {1, 2, 2});
        return causal_unpad_frames(y, r.r_t) + 0.5f;
    }

    VideoLatent encode(const Video &video) const override {
        NoGradGuard guard;
        return {encode_tensor(video.data).detach(), id(), cfg_.rates};
    }

    Video decode(const VideoLatent &z) const override {
        check_latent(z);
        NoGradGuard guard;
        return {clamp(decode_tensor(z.data), 0.0f, 1.0f).detach()};
    }

   private:
    LearnedCodecConfig cfg_;
    Tensor enc_lin_, enc1_, enc1_b_, enc2_, enc_b_;
    Tensor dec_lin_, dec1_, dec1_b_, dec2_, dec_b_;
};

struct CodecTrainConfig {
    std::size_t steps = 500;
    float lr = 3e-3f;
    std::size_t warmup = 20;
    double clip = 1.0;
};

/// Minimizes reconstruction MSE over the dataset (round-robin). Returns the loss curve.
inline std::vector<float> train_learned_codec(LearnedCodec &codec, const std::vector<Video> &dataset,
                                              const CodecTrainConfig &cfg = {}) {
    if (dataset.empty()) throw ContractError("learned codec training needs a nonempty dataset");
    for (const auto &v : dataset) check_video_shape(v.data.shape(), codec.rates());
    nn::AdamW opt(codec.parameters(), {});
    std::vector<float> curve;
    curve.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const Tensor &x = dataset[step % dataset.size()].data;
        opt.zero_grad();
        const Tensor loss = mse(codec.decode_tensor(codec.encode_tensor(x)), x);
        const float value = loss.item();
        if (!std::isfinite(value)) throw NumericError("learned codec training diverged at step " + std::to_string(step));
        loss.backward();
        opt.clip_grad_norm(cfg.clip);
        opt.step(nn::cosine_lr(step, cfg.steps, cfg.lr, cfg.warmup));
        curve.push_back(value);
    }
    return curve;
}

}  // namespace wonderland::codec
