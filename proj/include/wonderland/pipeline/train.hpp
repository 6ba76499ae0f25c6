#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "wonderland/codec/codec.hpp"
#include "wonderland/nn/optim.hpp"
#include "wonderland/pipeline/checkpoint.hpp"
#include "wonderland/pipeline/clip.hpp"
#include "wonderland/pipeline/config.hpp"
#include "wonderland/pipeline/dataset.hpp"
#include "wonderland/pipeline/losses.hpp"
#include "wonderland/pipeline/metrics.hpp"

namespace wonderland::pipeline {

enum class Stage { kLowRes, kHighRes };

inline std::string to_string(Stage s) { return s == Stage::kLowRes ? "low_res" : "high_res"; }
inline Stage parse_stage(const std::string &s) {
    if (s == "low_res") return Stage::kLowRes;
    if (s == "high_res") return Stage::kHighRes;
    throw ContractError("unknown stage '" + s + "' (expected low_res or high_res)");
}

/// Video raster a stage feeds the model: half the dataset raster for low_res.
inline std::pair<std::size_t, std::size_t> stage_raster(const Config &cfg, Stage stage) {
    const std::size_t H = cfg.get_size("data.height"), W = cfg.get_size("data.width");
    return stage == Stage::kLowRes ? std::pair{H / 2, W / 2} : std::pair{H, W};
}

// ---------------------------------------------------------------- prepared clips

/// One clip of one scene at a fixed raster, in the normalized frame of its seen trajectory.
struct PreparedClip {
    ClipSample clip;
    std::size_t H = 0, W = 0;
    camera::Normalization norm;
    camera::Trajectory seen;            // normalized, seen frames only
    std::map<std::size_t, camera::CameraPose> poses;  // normalized, every in-range frame
    std::map<std::size_t, Tensor> targets;             // ground-truth renders, every in-range frame
    codec::VideoLatent latent;
    std::vector<std::size_t> supervised_unseen, held_out;
};

/// Every holdout_every-th unseen frame (counting from 1) is never used for supervision.
inline PreparedClip prepare_clip(const SceneRecord &scene, const ClipSample &clip, std::size_t H, std::size_t W, std::size_t holdout_every) {
    PreparedClip p;
    p.clip = clip;
    p.H = H;
    p.W = W;
    const camera::Trajectory traj =
        camera::rescale(scene.trajectory, double(W) / double(scene.width), double(H) / double(scene.height));
    camera::Trajectory seen;
    for (std::size_t f : clip.seen) seen.poses.push_back(traj[f]);
    p.norm = camera::normalization_of(seen);
    p.seen = camera::apply_normalization(p.norm, seen);
    const auto rs = scene_render_settings(H, W);
    const std::size_t last = clip.seen.back();
    for (std::size_t f = clip.start; f <= last; ++f) {
        p.poses[f] = p.norm.apply(traj[f]);
        p.targets[f] = gsplat::rasterize(scene.cloud, traj[f], rs).color;
    }
    for (std::size_t i = 0; i < clip.unseen.size(); ++i)
        (holdout_every > 0 && (i + 1) % holdout_every == 0 ? p.held_out : p.supervised_unseen).push_back(clip.unseen[i]);
    std::vector<Tensor> frames;
    for (std::size_t f : clip.seen) frames.push_back(reshape(p.targets[f], {1, H, W, 3}));
    p.latent = codec::LosslessCodec().encode({concat(frames, 0)});
    return p;
}

// ---------------------------------------------------------------- model loading

inline std::map<std::string, std::string> snapshot(const Config &cfg, const std::string &model, const std::string &stage) {
    auto s = cfg.values();
    s["model"] = model;
    s["stage"] = stage;
    return s;
}

inline void expect_model(const Checkpoint &ck, const std::string &model, const std::string &path) {
    if (ck.config.count("model") == 0 || ck.value("model") != model)
        throw StateError(path + " is not a " + model + " checkpoint");
}

inline std::unique_ptr<lalrm::LaLRM> load_lalrm(const Checkpoint &ck, const std::string &path = "checkpoint") {
    expect_model(ck, "lalrm", path);
    const Config cfg = Config::from_snapshot(ck.config);
    auto m = std::make_unique<lalrm::LaLRM>(lalrm_config(cfg, lalrm::parse_variant(ck.value("stage"))));
    load_into(ck, *m);
    return m;
}

inline std::unique_ptr<dit::CamDiT> load_dit(const Checkpoint &ck, const std::string &path = "checkpoint") {
    expect_model(ck, "dit", path);
    const Config cfg = Config::from_snapshot(ck.config);
    auto m = std::make_unique<dit::CamDiT>(dit_config(cfg));
    load_into(ck, *m);
    m->set_weights_ready(true);
    return m;
}

/// Camera-guided latent for a prepared clip: encode the first frame, sample with the DiT.
inline Tensor sample_latent(const dit::CamDiT &model, const Tensor &first_frame_image, const camera::Trajectory &seen_normalized,
                            std::size_t steps, std::uint64_t seed) {
    const std::size_t H = first_frame_image.dim(0), W = first_frame_image.dim(1);
    const Tensor z0 = codec::LosslessCodec().encode({reshape(first_frame_image, {1, H, W, 3})}).data;
    return model.sample(z0, camera::plucker_embed(seen_normalized, H, W, model.config().plucker), Tensor(), steps, seed);
}

// ---------------------------------------------------------------- loss log

struct LossRow {
    std::size_t step = 0;
    double loss = 0, mse = 0, perceptual = 0, lr = 0;
};

inline void write_loss_csv(const std::filesystem::path &path, const std::vector<LossRow> &rows) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << "step,loss,mse,perceptual,lr\n" << std::setprecision(9);
    for (const auto &r : rows) os << r.step << ',' << r.loss << ',' << r.mse << ',' << r.perceptual << ',' << r.lr << '\n';
}

inline std::vector<LossRow> read_loss_csv(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    std::vector<LossRow> rows;
    while (std::getline(is, line)) {
        LossRow r;
        char c1, c2, c3, c4;
        std::istringstream ls(line);
        if (!(ls >> r.step >> c1 >> r.loss >> c2 >> r.mse >> c3 >> r.perceptual >> c4 >> r.lr)) throw FormatError(path.string() + ": bad row '" + line + "'");
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------- LaLRM training

struct LaLRMTrainOptions {
    Stage stage = Stage::kLowRes;
    std::filesystem::path out_dir;
    /// Required for high_res.
    std::optional<std::filesystem::path> low_res_checkpoint;
    /// Source of generated latents for high_res mixing.
    std::optional<std::filesystem::path> dit_checkpoint;
    bool verbose = false;
};

struct TrainResult {
    std::filesystem::path checkpoint;
    std::vector<LossRow> log;
    double final_loss = 0;
};

inline std::string lalrm_checkpoint_name(Stage s) { return "lalrm_" + to_string(s) + ".wlck"; }

inline TrainResult train_lalrm(const Config &cfg, const std::vector<SceneRecord> &scenes, const LaLRMTrainOptions &opt) {
    const bool high = opt.stage == Stage::kHighRes;
    const std::string tag = "lalrm_" + to_string(opt.stage);
    std::unique_ptr<lalrm::LaLRM> low;
    if (high) {
        const auto path = opt.low_res_checkpoint.value_or(opt.out_dir / lalrm_checkpoint_name(Stage::kLowRes));
        if (!std::filesystem::exists(path))
            throw StateError("high_res training needs a low_res checkpoint; none at " + path.string() +
                             ". Run `wonderland train --model lalrm --stage low_res` first");
        const Checkpoint ck = read_checkpoint(path);
        if (ck.config.count("stage") == 0 || ck.value("stage") != "low_res") throw StateError(path.string() + " is not a low_res LaLRM checkpoint");
        low = load_lalrm(ck, path.string());
    }
    if (scenes.empty()) throw ContractError("training needs at least one scene");
    const std::size_t T = cfg.get_size("train.T"), stride = cfg.get_size("train.stride");
    const std::size_t V = cfg.get_size("train.V"), V_seen = cfg.get_size("train.V_seen");
    if (V_seen > V) throw ContractError("train.V_seen (" + std::to_string(V_seen) + ") exceeds train.V (" + std::to_string(V) + ")");
    if (V_seen > T) throw ContractError("train.V_seen (" + std::to_string(V_seen) + ") exceeds the " + std::to_string(T) + " seen frames of a clip");
    const double mix = high ? cfg.get_double("train.mix_ratio") : 0.0;
    std::unique_ptr<dit::CamDiT> dit_model;
    if (mix > 0.0) {
        if (!opt.dit_checkpoint || !std::filesystem::exists(*opt.dit_checkpoint))
            throw StateError("high_res training mixes in generated latents (train.mix_ratio = " + cfg.get("train.mix_ratio") +
                             ") and needs a DiT checkpoint. Run `wonderland train --model dit` first or set train.mix_ratio = 0");
        dit_model = load_dit(read_checkpoint(*opt.dit_checkpoint), opt.dit_checkpoint->string());
    }

    const auto [H, W] = stage_raster(cfg, opt.stage);
    lalrm::LaLRM model(lalrm_config(cfg, high ? lalrm::Variant::kHighRes : lalrm::Variant::kLowRes));
    if (low) model.init_from_low_res(*low);
    nn::AdamW optim(model.parameters(), {});
    FeaturePyramid net;
    const auto rs = scene_render_settings(H, W);
    const double lambda1 = cfg.get_double("train.lambda1"), lambda2 = cfg.get_double("train.lambda2");
    const std::size_t steps = cfg.get_size(high ? "train.steps_high" : "train.steps_low");
    const std::size_t log_every = std::max<std::size_t>(1, cfg.get_size("train.log_every"));
    const std::size_t eval_every = cfg.get_size("train.eval_every");
    const float lr = static_cast<float>(cfg.get_double("train.lr"));
    const std::size_t warmup = cfg.get_size("train.warmup");
    const double clip_norm = cfg.get_double("train.clip_norm");
    const std::size_t sample_steps = cfg.get_size("dit.sample_steps");
    Generator gen(cfg.get_size("seed") * 7919 + (high ? 2 : 1));

    std::map<std::pair<std::size_t, std::size_t>, PreparedClip> cache;
    std::map<std::pair<std::size_t, std::size_t>, Tensor> generated;
    auto clip_for = [&](std::size_t s, const ClipSample &c) -> PreparedClip & {
        auto key = std::pair{s, c.start};
        auto it = cache.find(key);
        if (it == cache.end()) {
            it = cache.emplace(key, prepare_clip(scenes[s], c, H, W, 3)).first;
            if (V - V_seen > it->second.supervised_unseen.size())
                throw ContractError("train.V - train.V_seen = " + std::to_string(V - V_seen) + " unseen views requested, clip has " +
                                    std::to_string(it->second.supervised_unseen.size()));
            if (dit_model)
                generated[key] = sample_latent(*dit_model, it->second.targets.at(c.start), it->second.seen, sample_steps, cfg.get_size("seed"));
        }
        return it->second;
    };
    auto pick = [&](std::vector<std::size_t> pool, std::size_t n) {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = gen.index(pool.size());
            out.push_back(pool[i]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(i));
        }
        return out;
    };
    auto write_eval = [&](std::size_t step) {
        NoGradGuard ng;
        auto &p = clip_for(0, sample_clip_at(scenes[0].trajectory.size(), T, stride, 0));
        const auto cloud = lalrm::reconstruct(model, p.latent.data, p.seen, H, W);
        std::vector<Tensor> frames;
        for (const auto &pose : p.seen.poses) frames.push_back(reshape(gsplat::rasterize(cloud, pose, rs).color, {1, H, W, 3}));
        char name[32];
        std::snprintf(name, sizeof name, "step_%05zu", step);
        write_frames(opt.out_dir / (tag + "_eval") / name, concat(frames, 0));
    };

    std::filesystem::create_directories(opt.out_dir);
    TrainResult result;
    for (std::size_t step = 0; step < steps; ++step) {
        const std::size_t s = gen.index(scenes.size());
        const ClipSample c = sample_clip(scenes[s].trajectory.size(), T, stride, gen);
        PreparedClip &p = clip_for(s, c);
        Tensor z = p.latent.data;
        if (dit_model && gen.uniform() < mix) z = generated.at({s, c.start});
        std::vector<std::size_t> views = pick(p.clip.seen, V_seen);
        for (std::size_t f : pick(p.supervised_unseen, V - V_seen)) views.push_back(f);

        optim.zero_grad();
        ReconLoss L;
        try {
            const auto cloud = lalrm::reconstruct(model, z, p.seen, H, W);
            std::vector<Tensor> rendered, target;
            for (std::size_t f : views) {
                rendered.push_back(gsplat::rasterize(cloud, p.poses.at(f), rs).color);
                target.push_back(p.targets.at(f));
            }
            L = loss_recon(rendered, target, lambda1, lambda2, net);
        } catch (const NumericError &e) {
            throw NumericError("non-finite " + tag + " loss at step " + std::to_string(step) + " (" + e.what() + ")");
        }
        const double loss = L.total.item();
        if (!std::isfinite(loss)) throw NumericError("non-finite " + tag + " loss at step " + std::to_string(step));
        L.total.backward();
        optim.clip_grad_norm(clip_norm);
        const float step_lr = nn::cosine_lr(step, steps, lr, warmup);
        optim.step(step_lr);
        if (step % log_every == 0) {
            result.log.push_back({step, loss, L.mse.item(), L.perceptual.item(), step_lr});
            if (opt.verbose) std::cout << tag << " step " << step << " loss " << loss << std::endl;
        }
        if (eval_every > 0 && step > 0 && step % eval_every == 0) write_eval(step);
        result.final_loss = loss;
    }
    if (steps > 0) write_eval(steps);
    result.checkpoint = opt.out_dir / lalrm_checkpoint_name(opt.stage);
    write_checkpoint(result.checkpoint, checkpoint_of(model, snapshot(cfg, "lalrm", to_string(opt.stage))));
    write_loss_csv(opt.out_dir / (tag + "_loss.csv"), result.log);
    return result;
}

// ---------------------------------------------------------------- DiT training

struct DiTTrainOptions {
    std::filesystem::path out_dir;
    bool verbose = false;
};

/// Trains at the dataset raster on encoded seen clips conditioned on their first frame.
inline TrainResult train_dit(const Config &cfg, const std::vector<SceneRecord> &scenes, const DiTTrainOptions &opt) {
    if (scenes.empty()) throw ContractError("training needs at least one scene");
    dit::CamDiT model(dit_config(cfg));
    const std::size_t T = cfg.get_size("train.T"), stride = cfg.get_size("train.stride");
    const std::size_t H = cfg.get_size("data.height"), W = cfg.get_size("data.width");
    const std::size_t steps = cfg.get_size("dit.steps"), batch = std::max<std::size_t>(1, cfg.get_size("dit.batch"));
    const std::size_t log_every = std::max<std::size_t>(1, cfg.get_size("train.log_every"));
    const float lr = static_cast<float>(cfg.get_double("dit.lr"));
    const std::size_t warmup = cfg.get_size("dit.warmup");
    nn::AdamW optim(model.parameters(), {});
    Generator gen(cfg.get_size("seed") * 7919 + 3);
    std::map<std::pair<std::size_t, std::size_t>, dit::DiTExample> cache;
    auto example = [&](std::size_t s, const ClipSample &c) -> const dit::DiTExample & {
        auto key = std::pair{s, c.start};
        auto it = cache.find(key);
        if (it == cache.end()) {
            const PreparedClip p = prepare_clip(scenes[s], c, H, W, 0);
            const Tensor &z = p.latent.data;
            it = cache.emplace(key, dit::DiTExample{z, slice(z, 0, 0, 1), camera::plucker_embed(p.seen, H, W, model.config().plucker), Tensor()}).first;
        }
        return it->second;
    };
    std::filesystem::create_directories(opt.out_dir);
    TrainResult result;
    for (std::size_t step = 0; step < steps; ++step) {
        std::vector<dit::DiTExample> b;
        for (std::size_t k = 0; k < batch; ++k) {
            const std::size_t s = gen.index(scenes.size());
            b.push_back(example(s, sample_clip(scenes[s].trajectory.size(), T, stride, gen)));
        }
        optim.zero_grad();
        double loss = 0;
        try {
            loss = model.training_step(b, gen);
        } catch (const NumericError &e) {
            throw NumericError(std::string(e.what()) + " at DiT step " + std::to_string(step));
        }
        optim.clip_grad_norm(cfg.get_double("train.clip_norm"));
        const float step_lr = nn::cosine_lr(step, steps, lr, warmup);
        optim.step(step_lr);
        if (step % log_every == 0) {
            result.log.push_back({step, loss, loss, 0.0, step_lr});
            if (opt.verbose) std::cout << "dit step " << step << " loss " << loss << std::endl;
        }
        result.final_loss = loss;
    }
    result.checkpoint = opt.out_dir / "dit.wlck";
    write_checkpoint(result.checkpoint, checkpoint_of(model, snapshot(cfg, "dit", "")));
    write_loss_csv(opt.out_dir / "dit_loss.csv", result.log);
    return result;
}

}  // namespace wonderland::pipeline
