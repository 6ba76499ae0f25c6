#pragma once

#include <memory>
#include <numbers>

#include "wonderland/camera/camera.hpp"
#include "wonderland/nn/module.hpp"
#include "wonderland/numerics/conv.hpp"

namespace wonderland::dit {

using wonderland::to_string;

enum class Branches { kNone, kLora, kCtrl, kDual };

inline std::string to_string(Branches b) {
    switch (b) {
        case Branches::kNone:
            return "none";
        case Branches::kLora:
            return "lora";
        case Branches::kCtrl:
            return "ctrl";
        case Branches::kDual:
            return "dual";
    }
    return "?";
}

inline Branches parse_branches(const std::string &s) {
    if (s == "none") return Branches::kNone;
    if (s == "lora") return Branches::kLora;
    if (s == "ctrl") return Branches::kCtrl;
    if (s == "dual") return Branches::kDual;
    throw ContractError("unknown branch set '" + s + "' (expected lora, ctrl, dual or none)");
}

// ---------------------------------------------------------------- schedule

/// Variance-preserving schedule; step 0 is the clean end (α=1, σ=0), the last step pure noise.
struct DiffusionSchedule {
    std::size_t num_steps = 0;
    std::vector<double> alpha, sigma;

    static DiffusionSchedule cosine(std::size_t n) {
        if (n < 2) throw ContractError("diffusion schedule needs at least 2 steps");
        DiffusionSchedule s;
        s.num_steps = n;
        for (std::size_t k = 0; k < n; ++k) {
            const double phi = 0.5 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n - 1);
            s.alpha.push_back(k + 1 == n ? 0.0 : std::cos(phi));
            s.sigma.push_back(k + 1 == n ? 1.0 : std::sin(phi));
        }
        s.validate();
        return s;
    }

    static DiffusionSchedule from_arrays(std::vector<double> alpha, std::vector<double> sigma) {
        DiffusionSchedule s;
        s.num_steps = alpha.size();
        s.alpha = std::move(alpha);
        s.sigma = std::move(sigma);
        s.validate();
        return s;
    }

    void validate() const {
        if (alpha.size() != num_steps || sigma.size() != num_steps || num_steps == 0) throw ContractError("schedule arrays do not match num_steps");
        for (std::size_t k = 0; k < num_steps; ++k) {
            if (std::abs(alpha[k] * alpha[k] + sigma[k] * sigma[k] - 1.0) > 1e-6)
                throw ContractError("schedule step " + std::to_string(k) + " is not variance preserving");
            if (k > 0 && alpha[k] > alpha[k - 1]) throw ContractError("schedule alpha must not increase");
        }
    }

    void check_step(std::size_t tau) const {
        if (tau >= num_steps) throw ContractError("diffusion step " + std::to_string(tau) + " outside [0, " + std::to_string(num_steps) + ")");
    }
};

inline Tensor add_noise(const DiffusionSchedule &s, const Tensor &z, std::size_t tau, const Tensor &eps) {
    s.check_step(tau);
    if (z.shape() != eps.shape()) throw ContractError("noise shape " + to_string(eps.shape()) + " differs from latent " + to_string(z.shape()));
    const float a = static_cast<float>(s.alpha[tau]), b = static_cast<float>(s.sigma[tau]);
    std::vector<float> out(z.numel());
    const auto zd = z.data(), ed = eps.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * zd[i] + b * ed[i];
    return Tensor(z.shape(), std::move(out));
}

// ---------------------------------------------------------------- config

struct DiTConfig {
    std::size_t num_blocks = 8;
    std::size_t hidden = 128;
    std::size_t heads = 4;
    std::size_t ctrl_blocks = 4;
    std::size_t lora_rank = 8;
    /// LoRA adapters on every base block; otherwise only on the first ctrl_blocks.
    bool lora_all_blocks = true;
    Branches branches = Branches::kDual;
    /// Base blocks receive no updates (only branch tensors and LoRA adapters train).
    bool freeze_base = false;
    std::size_t latent_channels = 768;
    std::size_t patch_t = 1;
    std::size_t patch_s = 1;
    std::size_t r_t = 4;
    std::size_t r_s = 8;
    std::size_t cond_dim = 16;
    std::size_t num_steps = 1000;
    std::size_t pos_table = 16;
    /// Latent normalization z' = (z - shift) * scale before diffusion.
    float data_shift = 0.5f;
    float data_scale = 2.0f;
    /// Sampler bound on the clean estimate, in normalized units.
    float x0_clip = 1.5f;
    camera::PluckerOptions plucker;
    std::uint64_t seed = 0;

    bool lora_branch() const { return branches == Branches::kLora || branches == Branches::kDual; }
    bool ctrl_branch() const { return branches == Branches::kCtrl || branches == Branches::kDual; }

    void validate() const {
        if (heads == 0 || hidden % heads != 0) throw ContractError("DiT hidden size must be divisible by heads");
        if (num_blocks == 0) throw ContractError("DiT needs at least one block");
        if (ctrl_blocks < 1 || ctrl_blocks > num_blocks)
            throw ContractError("ctrl_blocks must be in [1, " + std::to_string(num_blocks) + "], got " + std::to_string(ctrl_blocks));
        if (patch_t == 0 || patch_s == 0 || r_t == 0 || r_s == 0) throw ContractError("DiT strides must be positive");
        if (lora_branch() && lora_rank == 0) throw ContractError("lora branch needs lora_rank > 0");
        if (!(data_scale > 0.0f)) throw ContractError("data_scale must be positive");
    }
};

// ---------------------------------------------------------------- camera encoder

/// Strided 3D convolution over the causally padded Plücker video, SiLU, then a zero-initialized linear.
class CameraEncoder : public nn::Module {
   public:
    CameraEncoder(const DiTConfig &cfg, Generator &gen)
        : kt_(cfg.r_t * cfg.patch_t), ks_(cfg.r_s * cfg.patch_s), r_t_(cfg.r_t), out_(cfg.hidden, cfg.hidden, gen, nn::Linear::Init::kZero) {
        const std::size_t d = cfg.hidden;
        conv_w_ = register_parameter("conv_w", randn({kt_, ks_, ks_, 6, d}, gen, 1.0f / std::sqrt(static_cast<float>(kt_ * ks_ * ks_ * 6))));
        conv_b_ = register_parameter("conv_b", Tensor::zeros({d}));
        register_module("out", out_);
    }

    Tensor forward(const Tensor &plucker) const {
        if (plucker.rank() != 4 || plucker.dim(3) != 6) throw ShapeError("camera input must be T×H×W×6, got " + to_string(plucker.shape()));
        const std::size_t T = plucker.dim(0), H = plucker.dim(1), W = plucker.dim(2);
        const std::size_t padded = T + r_t_ - 1;
        if (H % ks_ != 0 || W % ks_ != 0 || padded % kt_ != 0)
            throw ShapeError("camera input " + to_string(plucker.shape()) + " needs downsample factors (t " + std::to_string(kt_) + ", h " +
                             std::to_string(ks_) + ", w " + std::to_string(ks_) + ") after causal padding to " + std::to_string(padded) +
                             " frames");
        const Tensor f = silu(conv3d(causal_pad_frames(plucker, r_t_), conv_w_, conv_b_, {kt_, ks_, ks_}));
        return out_.forward(reshape(f, {f.dim(0) * f.dim(1) * f.dim(2), f.dim(3)}));
    }

    const nn::Linear &zero_linear() const { return out_; }

   private:
    std::size_t kt_, ks_, r_t_;
    Tensor conv_w_, conv_b_;
    nn::Linear out_;
};

// ---------------------------------------------------------------- model

/// One conditioning example: latent z (t×h×w×c), its first-frame latent (1×h×w×c),
/// the Plücker embedding at video raster and the opaque condition vector y.
struct DiTExample {
    Tensor z;
    Tensor first_frame;
    Tensor plucker;
    Tensor y;
};

class CamDiT : public nn::Module {
   public:
    explicit CamDiT(const DiTConfig &cfg) : cfg_(cfg), schedule_(DiffusionSchedule::cosine(cfg.num_steps)) {
        cfg.validate();
        const std::size_t d = cfg.hidden, c = cfg.latent_channels, pv = cfg.patch_t * cfg.patch_s * cfg.patch_s;
        Generator gen(cfg.seed);
        patch_embed_ = std::make_unique<nn::Linear>(pv * 2 * c, d, gen);
        y_proj_ = std::make_unique<nn::Linear>(cfg.cond_dim, d, gen);
        time_fc1_ = std::make_unique<nn::Linear>(d, d, gen);
        time_fc2_ = std::make_unique<nn::Linear>(d, d, gen);
        pos_ = std::make_unique<nn::GridPositionalEncoding>(d, cfg.pos_table, gen);
        register_module("patch_embed", *patch_embed_);
        register_module("y_proj", *y_proj_);
        register_module("time_fc1", *time_fc1_);
        register_module("time_fc2", *time_fc2_);
        register_module("pos", *pos_);
        for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
            blocks_.push_back(std::make_unique<nn::TransformerBlock>(d, cfg.heads, gen));
            register_module("block" + std::to_string(b), *blocks_.back());
        }
        out_norm_ = std::make_unique<nn::LayerNorm>(d);
        out_proj_ = std::make_unique<nn::Linear>(d, pv * c, gen);
        {
            auto w = const_cast<Tensor &>(out_proj_->weight()).mutable_data();
            for (auto &v : w) v *= 0.1f;
        }
        register_module("out_norm", *out_norm_);
        register_module("out_proj", *out_proj_);
        base_names_.clear();
        for (auto &[name, _] : named_parameters()) base_names_.push_back(name);

        // Branch tensors draw from their own stream so the base is identical with or without them.
        Generator bgen(cfg.seed ^ 0x9e3779b97f4a7c15ull);
        if (cfg.ctrl_branch()) {
            cam_ctrl_ = std::make_unique<CameraEncoder>(cfg, bgen);
            register_module("cam_ctrl", *cam_ctrl_);
            for (std::size_t b = 0; b < cfg.ctrl_blocks; ++b) {
                ctrl_blocks_.push_back(std::make_unique<nn::TransformerBlock>(d, cfg.heads, bgen));
                ctrl_blocks_.back()->copy_values_from(*blocks_[b]);
                ctrl_out_.push_back(std::make_unique<nn::Linear>(d, d, bgen, nn::Linear::Init::kZero));
                register_module("ctrl.block" + std::to_string(b), *ctrl_blocks_.back());
                register_module("ctrl.out" + std::to_string(b), *ctrl_out_.back());
            }
        }
        if (cfg.lora_branch()) {
            cam_lora_ = std::make_unique<CameraEncoder>(cfg, bgen);
            fuse_ = std::make_unique<nn::Linear>(2 * d, d, bgen, nn::Linear::Init::kIdentityTop);
            register_module("cam_lora", *cam_lora_);
            register_module("fuse", *fuse_);
            const std::size_t n = cfg.lora_all_blocks ? cfg.num_blocks : cfg.ctrl_blocks;
            for (std::size_t b = 0; b < n; ++b) blocks_[b]->add_lora(cfg.lora_rank, bgen);
        }
        if (cfg.freeze_base) {
            for (auto &[name, t] : named_parameters())
                if (is_base_name(name)) const_cast<Tensor &>(t).set_requires_grad(false);
        }
    }

    const DiTConfig &config() const { return cfg_; }
    const DiffusionSchedule &schedule() const { return schedule_; }
    /// Parameter names of the model without any conditioning branch.
    const std::vector<std::string> &base_parameter_names() const { return base_names_; }

    /// Flags a model whose weights are not yet valid (e.g. before a checkpoint finished loading).
    void set_weights_ready(bool ready) { weights_ready_ = ready; }
    bool weights_ready() const { return weights_ready_; }

    /// Latent frame count for a T-frame video under causal temporal compression.
    std::size_t latent_frames(std::size_t T) const { return 1 + (T - 1) / cfg_.r_t; }

    /// Patch tokens plus positional encoding for a t×h×w×(2c) input (latent and image condition).
    Tensor patchify(const Tensor &x) const {
        const std::size_t pt = cfg_.patch_t, ps = cfg_.patch_s;
        if (x.rank() != 4) throw ShapeError("latent must be t×h×w×c, got " + to_string(x.shape()));
        const std::size_t t = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
        if (c != 2 * cfg_.latent_channels) throw ShapeError("DiT input needs " + std::to_string(2 * cfg_.latent_channels) + " channels, got " + std::to_string(c));
        if (t % pt != 0 || h % ps != 0 || w % ps != 0)
            throw ShapeError("latent " + to_string(x.shape()) + " not divisible by patch (" + std::to_string(pt) + ", " + std::to_string(ps) + ", " +
                             std::to_string(ps) + ")");
        const Tensor p = reshape(permute(reshape(x, {t / pt, pt, h / ps, ps, w / ps, ps, c}), {0, 2, 4, 1, 3, 5, 6}),
                                 {(t / pt) * (h / ps) * (w / ps), pt * ps * ps * c});
        return patch_embed_->forward(p) + pos_->forward(t / pt, h / ps, w / ps);
    }

    Tensor positional_encoding(std::size_t gt, std::size_t gh, std::size_t gw) const { return pos_->forward(gt, gh, gw); }

    /// Camera tokens of one branch ("ctrl" or "lora").
    Tensor encode_camera(const Tensor &plucker, const std::string &branch) const {
        if (branch == "ctrl" && cam_ctrl_) return cam_ctrl_->forward(plucker);
        if (branch == "lora" && cam_lora_) return cam_lora_->forward(plucker);
        throw ContractError("model has no '" + branch + "' camera branch");
    }

    /// [o_v, o_lora] through the identity-initialized fusion layer.
    Tensor fuse_lora(const Tensor &o_v, const Tensor &o_lora) const {
        if (!fuse_) throw ContractError("model has no lora branch");
        if (o_v.rank() != 2 || o_lora.rank() != 2 || o_v.dim(0) != o_lora.dim(0))
            throw ContractError("fuse_lora needs equal-length token sequences, got " + to_string(o_v.shape()) + " and " + to_string(o_lora.shape()));
        return fuse_->forward(concat({o_v, o_lora}, 1));
    }

    /// Clean-latent estimate for a normalized noisy latent; predicted_noise turns it into ε̂. `cond` is the normalized first-frame latent
    /// replicated over time; an undefined `y` means the zero condition. With
    /// use_branches=false the camera branches are bypassed (the base model).
    Tensor forward(const Tensor &z_tau, const Tensor &cond, const Tensor &plucker, const Tensor &y, std::size_t tau,
                   bool use_branches = true) const {
        schedule_.check_step(tau);
        if (z_tau.shape() != cond.shape()) throw ShapeError("image condition " + to_string(cond.shape()) + " differs from latent " + to_string(z_tau.shape()));
        const Tensor o_v = patchify(concat({z_tau, cond}, 3));
        Tensor yv = y.defined() ? reshape(y, {1, y.numel()}) : Tensor::zeros({1, cfg_.cond_dim});
        if (yv.dim(1) != cfg_.cond_dim) throw ShapeError("condition vector must have " + std::to_string(cfg_.cond_dim) + " entries");
        const Tensor emb = time_fc2_->forward(silu(time_fc1_->forward(nn::sinusoidal_embedding(static_cast<double>(tau), cfg_.hidden)))) +
                           y_proj_->forward(yv);
        const Tensor x0 = o_v + emb;

        const bool lora = use_branches && fuse_ != nullptr;
        const bool ctrl = use_branches && cam_ctrl_ != nullptr;
        Tensor x = lora ? fuse_lora(x0, cam_lora_->forward(plucker)) : x0;
        Tensor c;
        if (ctrl) {
            const Tensor cam = cam_ctrl_->forward(plucker);
            if (cam.dim(0) != x0.dim(0))
                throw ShapeError("camera tokens (" + std::to_string(cam.dim(0)) + ") do not match video tokens (" + std::to_string(x0.dim(0)) + ")");
            c = x0 + cam;
        }
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            x = blocks_[b]->forward(x, use_branches);
            if (ctrl && b < ctrl_blocks_.size()) {
                c = ctrl_blocks_[b]->forward(c);
                x = x + ctrl_out_[b]->forward(c);
                if (!c.all_finite()) throw NumericError("non-finite activation in control block " + std::to_string(b));
            }
            if (!x.all_finite()) throw NumericError("non-finite activation after DiT block " + std::to_string(b));
        }
        return unpatchify(out_proj_->forward(out_norm_->forward(x)), z_tau.shape());
    }

    Tensor normalize(const Tensor &z) const { return scale(add_scalar(z, -cfg_.data_shift), cfg_.data_scale); }
    Tensor denormalize(const Tensor &z) const { return add_scalar(scale(z, 1.0f / cfg_.data_scale), cfg_.data_shift); }

    /// Normalized first-frame latent replicated over t latent frames.
    Tensor condition(const Tensor &first_frame, std::size_t t) const {
        if (first_frame.rank() != 4 || first_frame.dim(0) != 1) throw ShapeError("image condition must be 1×h×w×c, got " + to_string(first_frame.shape()));
        const Tensor n = normalize(first_frame);
        return t == 1 ? n : concat(std::vector<Tensor>(t, n), 0);
    }

    /// Clean-latent regression loss on a batch; gradients accumulate into trainable parameters.
    double training_step(const std::vector<DiTExample> &batch, Generator &gen) const {
        if (batch.empty()) throw ContractError("training_step needs a nonempty batch");
        Tensor total;
        for (const auto &ex : batch) {
            const Tensor z = normalize(ex.z);
            const Tensor cond = condition(ex.first_frame, z.dim(0));
            const std::size_t tau = gen.index(schedule_.num_steps);
            const Tensor eps = randn(z.shape(), gen);
            const Tensor pred = forward(add_noise(schedule_, z.detach(), tau, eps), cond.detach(), ex.plucker, ex.y, tau);
            const Tensor l = mse(pred, z.detach());
            total = total.defined() ? total + l : l;
        }
        const Tensor loss = scale(total, 1.0f / static_cast<float>(batch.size()));
        if (!std::isfinite(loss.item())) throw NumericError("non-finite diffusion loss");
        loss.backward();
        return loss.item();
    }

    /// ε̂ = (z_τ − α_τ·x̂₀) / σ_τ for τ > 0.
    Tensor predicted_noise(const Tensor &z_tau, const Tensor &x0, std::size_t tau) const {
        schedule_.check_step(tau);
        if (tau == 0) throw ContractError("noise is undefined at tau = 0");
        const double a = schedule_.alpha[tau], s = schedule_.sigma[tau];
        return scale(z_tau - scale(x0, static_cast<float>(a)), static_cast<float>(1.0 / s));
    }

    /// Deterministic DDIM (eta = 0) from pure noise; returns a t×h×w×c latent.
    Tensor sample(const Tensor &first_frame, const Tensor &plucker, const Tensor &y, std::size_t steps, std::uint64_t seed) const {
        if (!weights_ready_) throw StateError("DiT weights are not loaded");
        if (steps == 0) throw ContractError("sampling needs at least one step");
        NoGradGuard ng;
        const std::size_t t = latent_frames(plucker.dim(0));
        const Tensor cond = condition(first_frame, t);
        Generator gen(seed);
        Tensor x = randn(cond.shape(), gen);
        const std::size_t last = schedule_.num_steps - 1;
        steps = std::min(steps, schedule_.num_steps);
        std::vector<std::size_t> taus;
        for (std::size_t k = 0; k < steps; ++k)
            taus.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(last) * (1.0 - static_cast<double>(k) / static_cast<double>(steps)))));
        Tensor x0;
        for (std::size_t k = 0; k < taus.size(); ++k) {
            const std::size_t tau = taus[k];
            x0 = clamp(forward(x, cond, plucker, y, tau), -cfg_.x0_clip, cfg_.x0_clip);
            if (k + 1 < taus.size()) {
                const Tensor eps = predicted_noise(x, x0, tau);
                const std::size_t next = taus[k + 1];
                x = scale(x0, static_cast<float>(schedule_.alpha[next])) + scale(eps, static_cast<float>(schedule_.sigma[next]));
            }
        }
        return denormalize(x0);
    }

    bool has_lora_branch() const { return fuse_ != nullptr; }
    bool has_ctrl_branch() const { return cam_ctrl_ != nullptr; }

   private:
    bool is_base_name(const std::string &name) const {
        if (name.find(".lora_") != std::string::npos) return false;
        return std::find(base_names_.begin(), base_names_.end(), name) != base_names_.end();
    }

    Tensor unpatchify(const Tensor &tokens, const Shape &shape) const {
        const std::size_t pt = cfg_.patch_t, ps = cfg_.patch_s, c = cfg_.latent_channels;
        const std::size_t t = shape[0], h = shape[1], w = shape[2];
        return reshape(permute(reshape(tokens, {t / pt, h / ps, w / ps, pt, ps, ps, c}), {0, 3, 1, 4, 2, 5, 6}), {t, h, w, c});
    }

    DiTConfig cfg_;
    DiffusionSchedule schedule_;
    std::vector<std::string> base_names_;
    bool weights_ready_ = true;
    std::unique_ptr<nn::Linear> patch_embed_, y_proj_, time_fc1_, time_fc2_;
    std::unique_ptr<nn::GridPositionalEncoding> pos_;
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
    std::unique_ptr<nn::LayerNorm> out_norm_;
    std::unique_ptr<nn::Linear> out_proj_;
    std::unique_ptr<CameraEncoder> cam_ctrl_, cam_lora_;
    std::vector<std::unique_ptr<nn::TransformerBlock>> ctrl_blocks_;
    std::vector<std::unique_ptr<nn::Linear>> ctrl_out_;
    std::unique_ptr<nn::Linear> fuse_;
};

}  // namespace wonderland::dit
