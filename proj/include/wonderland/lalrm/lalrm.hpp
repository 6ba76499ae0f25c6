#pragma once

#include <memory>

#include "wonderland/camera/camera.hpp"
#include "wonderland/gsplat/cloud.hpp"
#include "wonderland/nn/module.hpp"
#include "wonderland/numerics/conv.hpp"

namespace wonderland::lalrm {

enum class Variant { kLowRes, kHighRes };

inline std::string to_string(Variant v) { return v == Variant::kLowRes ? "low_res" : "high_res"; }
inline Variant parse_variant(const std::string &s) {
    if (s == "low_res") return Variant::kLowRes;
    if (s == "high_res") return Variant::kHighRes;
    throw ContractError("unknown LaLRM variant '" + s + "' (expected low_res or high_res)");
}

struct LaLRMConfig {
    std::size_t p_l = 3;
    std::size_t num_blocks = 6;
    std::size_t hidden = 128;
    std::size_t heads = 4;
    std::size_t latent_channels = 768;
    std::size_t r_t = 4;
    std::size_t r_s = 8;
    Variant variant = Variant::kLowRes;
    std::size_t pos_table = 16;
    double near = 0.1;
    double far = 100.0;
    /// Output initialization: ray distance, world-space scale and opacity of the untrained model.
    double init_distance = 3.0;
    double init_scale = 0.03;
    double init_opacity = 0.9;
    double decoder_init_std = 1e-3;
    camera::PluckerOptions plucker;
    std::uint64_t seed = 0;

    std::size_t pose_stride() const { return p_l * r_s; }
    std::size_t deconv_spatial() const { return variant == Variant::kLowRes ? p_l * r_s : p_l * r_s / 2; }
    /// Output raster divisor relative to the input video.
    std::size_t output_divisor() const { return variant == Variant::kLowRes ? 1 : 2; }

    void validate() const {
        if (p_l == 0 || r_t == 0 || r_s == 0) throw ContractError("LaLRM strides must be positive");
        if (hidden % heads != 0) throw ContractError("LaLRM hidden size must be divisible by heads");
        if (variant == Variant::kHighRes && (p_l * r_s) % 2 != 0) throw ContractError("high_res variant needs an even p_l·r_s");
        if (!(near > 0 && near < far)) throw ContractError("LaLRM needs 0 < near < far");
    }
};

/// Channels of one Gaussian-map row.
namespace channel {
constexpr std::size_t kColor = 0, kScale = 3, kQuat = 6, kOpacity = 10, kDistance = 11, kCount = 12;
}

inline float logit(double p) { return static_cast<float>(std::log(p / (1.0 - p))); }

class LaLRM : public nn::Module {
   public:
    explicit LaLRM(const LaLRMConfig &cfg) : cfg_(cfg), gen_(cfg.seed) {
        cfg.validate();
        const std::size_t d = cfg.hidden, p = cfg.p_l, P = cfg.pose_stride(), S = cfg.deconv_spatial();
        latent_proj_ = std::make_unique<nn::Linear>(p * p * cfg.latent_channels, d, gen_);
        register_module("latent_proj", *latent_proj_);
        pose_w_ = register_parameter("pose_w", randn({cfg.r_t, P, P, 6, d}, gen_, 1.0f / std::sqrt(float(cfg.r_t * P * P * 6))));
        pose_b_ = register_parameter("pose_b", Tensor::zeros({d}));
        latent_pos_ = std::make_unique<nn::GridPositionalEncoding>(d, cfg.pos_table, gen_);
        pose_pos_ = std::make_unique<nn::GridPositionalEncoding>(d, cfg.pos_table, gen_);
        register_module("latent_pos", *latent_pos_);
        register_module("pose_pos", *pose_pos_);
        fuse_ = std::make_unique<nn::Linear>(2 * d, d, gen_);
        register_module("fuse", *fuse_);
        for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
            blocks_.push_back(std::make_unique<nn::TransformerBlock>(d, cfg.heads, gen_));
            register_module("block" + std::to_string(b), *blocks_.back());
        }
        out_norm_ = std::make_unique<nn::LayerNorm>(d);
        register_module("out_norm", *out_norm_);
        dec_w_ = register_parameter("dec_w", randn({d, cfg.r_t, S, S, channel::kCount}, gen_, static_cast<float>(cfg.decoder_init_std)));
        dec_b_ = register_parameter("dec_b", Tensor(Shape{channel::kCount}, initial_bias()));
    }

    const LaLRMConfig &config() const { return cfg_; }

    /// Output bias giving the untrained model a plausible scene: gray, mostly opaque,
    /// pixel-sized Gaussians at init_distance along each ray.
    std::vector<float> initial_bias() const {
        std::vector<float> b(channel::kCount, 0.0f);
        for (std::size_t k = 0; k < 3; ++k) b[channel::kScale + k] = static_cast<float>(std::log(cfg_.init_scale));
        b[channel::kQuat] = 1.0f;
        b[channel::kOpacity] = logit(cfg_.init_opacity);
        b[channel::kDistance] = logit((cfg_.init_distance - cfg_.near) / (cfg_.far - cfg_.near));
        return b;
    }

    /// [t·(h/p)·(w/p), d] latent tokens.
    Tensor tokenize_latent(const Tensor &z) const {
        check_latent(z);
        const std::size_t t = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3), p = cfg_.p_l;
        const Tensor patches =
            reshape(permute(reshape(z, {t, h / p, p, w / p, p, c}), {0, 1, 3, 2, 4, 5}), {t * (h / p) * (w / p), p * p * c});
        return latent_proj_->forward(patches) + latent_pos_->forward(t, h / p, w / p);
    }

    /// [t·(H/P)·(W/P), d] pose tokens with P = p_l·r_s and causal temporal grouping.
    Tensor tokenize_pose(const Tensor &plucker) const {
        if (plucker.rank() != 4 || plucker.dim(3) != 6) throw ShapeError("pose input must be T×H×W×6, got " + wonderland::to_string(plucker.shape()));
        const std::size_t P = cfg_.pose_stride();
        if (plucker.dim(1) % P != 0 || plucker.dim(2) % P != 0)
            throw ShapeError("pose raster " + std::to_string(plucker.dim(1)) + "x" + std::to_string(plucker.dim(2)) +
                             " not divisible by p_l·r_s = " + std::to_string(P));
        const Tensor tok = conv3d(causal_pad_frames(plucker, cfg_.r_t), pose_w_, pose_b_, {cfg_.r_t, P, P});
        const std::size_t t = tok.dim(0), gh = tok.dim(1), gw = tok.dim(2);
        return reshape(tok, {t * gh * gw, cfg_.hidden}) + pose_pos_->forward(t, gh, gw);
    }

    /// (T·H'·W')×12 Gaussian feature map; H' = H / output_divisor().
    Tensor forward(const Tensor &z, const Tensor &plucker) const {
        const Tensor ol = tokenize_latent(z);
        const Tensor op = tokenize_pose(plucker);
        if (ol.dim(0) != op.dim(0))
            throw ContractError("pose tokens (" + std::to_string(op.dim(0)) + ") do not match latent tokens (" +
                                std::to_string(ol.dim(0)) + ")");
        Tensor x = fuse_->forward(concat({ol, op}, 1));
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            x = blocks_[b]->forward(x);
            if (!x.all_finite()) throw NumericError("non-finite activation after LaLRM block " + std::to_string(b));
        }
        x = out_norm_->forward(x);
        const std::size_t t = z.dim(0), gh = z.dim(1) / cfg_.p_l, gw = z.dim(2) / cfg_.p_l, S = cfg_.deconv_spatial();
        const Tensor g = conv_transpose3d(reshape(x, {t, gh, gw, cfg_.hidden}), dec_w_, dec_b_, {cfg_.r_t, S, S});
        const Tensor frames = causal_unpad_frames(g, cfg_.r_t);
        return reshape(frames, {frames.dim(0) * frames.dim(1) * frames.dim(2), channel::kCount});
    }

    /// Copies every weight from a low_res model; the decoder kernel is averaged over 2×2
    /// spatial blocks to match the halved stride.
    void init_from_low_res(const LaLRM &low) {
        if (low.cfg_.variant != Variant::kLowRes || cfg_.variant != Variant::kHighRes)
            throw StateError("init_from_low_res needs a low_res source and a high_res target");
        auto src = low.named_parameters();
        auto dst = named_parameters();
        if (src.size() != dst.size()) throw StateError("low_res and high_res LaLRM structures differ");
        for (std::size_t i = 0; i < src.size(); ++i) {
            if (src[i].first != dst[i].first) throw StateError("parameter order mismatch at " + src[i].first);
            auto out = dst[i].second.mutable_data();
            if (src[i].first == "dec_w") {
                const auto &s = src[i].second;
                const std::size_t d = s.dim(0), kt = s.dim(1), K = s.dim(2), C = s.dim(4), k = K / 2;
                const float *in = s.data().data();
                for (std::size_t a = 0; a < d; ++a)
                    for (std::size_t tt = 0; tt < kt; ++tt)
                        for (std::size_t y = 0; y < k; ++y)
                            for (std::size_t x = 0; x < k; ++x)
                                for (std::size_t ch = 0; ch < C; ++ch) {
                                    float acc = 0.0f;
                                    for (std::size_t dy = 0; dy < 2; ++dy)
                                        for (std::size_t dx = 0; dx < 2; ++dx)
                                            acc += in[((((a * kt + tt) * K + 2 * y + dy) * K) + 2 * x + dx) * C + ch];
                                    out[(((a * kt + tt) * k + y) * k + x) * C + ch] = 0.25f * acc;
                                }
                continue;
            }
            if (src[i].second.shape() != dst[i].second.shape()) throw StateError("shape mismatch at " + src[i].first);
            std::copy(src[i].second.data().begin(), src[i].second.data().end(), out.begin());
        }
    }

    std::size_t num_blocks() const { return blocks_.size(); }
    const Tensor &decoder_weight() const { return dec_w_; }
    const Tensor &decoder_bias() const { return dec_b_; }

   private:
    void check_latent(const Tensor &z) const {
        if (z.rank() != 4 || z.dim(3) != cfg_.latent_channels)
            throw ShapeError("latent must be t×h×w×" + std::to_string(cfg_.latent_channels) + ", got " + wonderland::to_string(z.shape()));
        if (z.dim(1) % cfg_.p_l != 0 || z.dim(2) % cfg_.p_l != 0)
            throw ShapeError("latent grid " + std::to_string(z.dim(1)) + "x" + std::to_string(z.dim(2)) + " not divisible by p_l = " +
                             std::to_string(cfg_.p_l));
    }

    LaLRMConfig cfg_;
    Generator gen_;
    std::unique_ptr<nn::Linear> latent_proj_;
    Tensor pose_w_, pose_b_;
    std::unique_ptr<nn::GridPositionalEncoding> latent_pos_, pose_pos_;
    std::unique_ptr<nn::Linear> fuse_;
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
    std::unique_ptr<nn::LayerNorm> out_norm_;
    Tensor dec_w_, dec_b_;
};

/// Pixel-aligned Gaussians from a feature map. traj intrinsics must match the H×W
/// output raster; Gaussian (f, v, u) sits on the ray through pixel center (u+.5, v+.5).
inline gsplat::GaussianCloud lift_to_gaussians(const Tensor &G, const camera::Trajectory &traj, std::size_t H, std::size_t W,
                                               double near = 0.1, double far = 100.0) {
    const std::size_t T = traj.size(), rows = T * H * W;
    if (G.rank() != 2 || G.dim(1) != channel::kCount) throw ShapeError("Gaussian map must be N×12, got " + wonderland::to_string(G.shape()));
    if (G.dim(0) != rows)
        throw ContractError("Gaussian map has " + std::to_string(G.dim(0)) + " rows, trajectory and raster need " + std::to_string(rows));
    std::vector<float> centers(rows * 3), dirs(rows * 3);
    for (std::size_t f = 0; f < T; ++f) {
        const auto &pose = traj[f];
        const camera::Mat3 RK = pose.R * camera::inverse_intrinsics(pose.K);
        for (std::size_t v = 0; v < H; ++v)
            for (std::size_t u = 0; u < W; ++u) {
                const std::size_t r = (f * H + v) * W + u;
                const camera::Vec3 d = (RK * camera::Vec3(u + 0.5, v + 0.5, 1.0)).normalized();
                for (int k = 0; k < 3; ++k) {
                    centers[r * 3 + k] = static_cast<float>(pose.t[k]);
                    dirs[r * 3 + k] = static_cast<float>(d[k]);
                }
            }
    }
    const Tensor dist = add_scalar(scale(sigmoid(slice(G, 1, channel::kDistance, 1)), static_cast<float>(far - near)), static_cast<float>(near));
    gsplat::GaussianCloud c;
    c.positions = Tensor({rows, 3}, std::move(centers)) + Tensor({rows, 3}, std::move(dirs)) * dist;
    c.scales = exp(clamp(slice(G, 1, channel::kScale, 3), std::log(1e-6f), std::log(1e2f)));
    c.rotations = normalize_rows(slice(G, 1, channel::kQuat, 4));
    c.colors = sigmoid(slice(G, 1, channel::kColor, 3));
    c.opacities = sigmoid(slice(G, 1, channel::kOpacity, 1));
    return c;
}

/// Runs the model on a latent and its video-raster trajectory and lifts the result.
/// video_H × video_W is the raster the trajectory intrinsics refer to.
inline gsplat::GaussianCloud reconstruct(const LaLRM &model, const Tensor &z, const camera::Trajectory &traj, std::size_t video_H,
                                         std::size_t video_W) {
    const auto &cfg = model.config();
    const Tensor plucker = camera::plucker_embed(traj, video_H, video_W, cfg.plucker);
    const Tensor G = model.forward(z, plucker);
    const std::size_t div = cfg.output_divisor();
    const camera::Trajectory out_traj = div == 1 ? traj : camera::rescale(traj, 1.0 / double(div), 1.0 / double(div));
    return lift_to_gaussians(G, out_traj, video_H / div, video_W / div, cfg.near, cfg.far);
}

}  // namespace wonderland::lalrm
