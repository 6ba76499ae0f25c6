#pragma once

#include <functional>

#include <json.hpp>

#include "wonderland/pipeline/reconstruct.hpp"

namespace wonderland::pipeline {

struct SceneMetrics {
    std::string name;
    double psnr_first14 = 0, ssim_first14 = 0, psnr_unseen = 0, ssim_unseen = 0;
    std::size_t n_first14 = 0, n_unseen = 0;
};

struct EvalReport {
    std::vector<SceneMetrics> scenes;

    double mean(double SceneMetrics::*field) const {
        double s = 0;
        for (const auto &m : scenes) s += m.*field;
        return scenes.empty() ? 0.0 : s / double(scenes.size());
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["n_scenes"] = scenes.size();
        for (auto [key, field] : {std::pair{"psnr_first14", &SceneMetrics::psnr_first14}, {"ssim_first14", &SceneMetrics::ssim_first14},
                                  {"psnr_unseen", &SceneMetrics::psnr_unseen}, {"ssim_unseen", &SceneMetrics::ssim_unseen}}) {
            if (scenes.empty())
                j[key] = nullptr;
            else
                j[key] = mean(field);
        }
        j["scenes"] = nlohmann::ordered_json::array();
        for (const auto &m : scenes)
            j["scenes"].push_back({{"name", m.name},
                                   {"psnr_first14", m.psnr_first14},
                                   {"ssim_first14", m.ssim_first14},
                                   {"psnr_unseen", m.psnr_unseen},
                                   {"ssim_unseen", m.ssim_unseen},
                                   {"n_first14", m.n_first14},
                                   {"n_unseen", m.n_unseen}});
        return j;
    }
};

/// World-frame Gaussians for a scene given the evaluation clip.
using Reconstructor = std::function<gsplat::GaussianCloud(const SceneRecord &, const ClipSample &)>;

/// Renders the 14 frames after the conditioning frame and every in-range unseen frame at the
/// dataset raster and scores them against ground-truth renders.
inline EvalReport evaluate(const std::vector<SceneRecord> &scenes, std::size_t T, std::size_t stride, const Reconstructor &reconstruct) {
    EvalReport report;
    for (const auto &scene : scenes) {
        const ClipSample clip = sample_clip_at(scene.trajectory.size(), T, stride, 0);
        const gsplat::GaussianCloud cloud = reconstruct(scene, clip);
        const auto rs = scene_render_settings(scene.height, scene.width);
        SceneMetrics m;
        m.name = scene.name;
        auto score = [&](std::size_t f, double &p, double &s) {
            NoGradGuard ng;
            const Tensor gt = gsplat::rasterize(scene.cloud, scene.trajectory[f], rs).color;
            const Tensor img = clamp(gsplat::rasterize(cloud, scene.trajectory[f], rs).color, 0.0f, 1.0f);
            p += psnr(img, gt);
            s += ssim(img, gt);
        };
        for (std::size_t f = clip.start + 1; f <= clip.start + 14 && f < scene.trajectory.size(); ++f, ++m.n_first14)
            score(f, m.psnr_first14, m.ssim_first14);
        for (std::size_t f : clip.unseen) score(f, m.psnr_unseen, m.ssim_unseen), ++m.n_unseen;
        if (m.n_first14) m.psnr_first14 /= double(m.n_first14), m.ssim_first14 /= double(m.n_first14);
        if (m.n_unseen) m.psnr_unseen /= double(m.n_unseen), m.ssim_unseen /= double(m.n_unseen);
        report.scenes.push_back(m);
    }
    return report;
}

/// The ground-truth cloud, round-tripped through the clip's normalized frame.
inline Reconstructor ground_truth_reconstructor() {
    return [](const SceneRecord &scene, const ClipSample &clip) {
        camera::Trajectory seen;
        for (std::size_t f : clip.seen) seen.poses.push_back(scene.trajectory[f]);
        const auto n = camera::normalization_of(seen);
        return to_world(to_normalized(scene.cloud, n), n);
    };
}

/// LaLRM on the clip at the model's stage raster; the latent is the encoded seen clip, or a
/// DiT sample from the first frame when a DiT is given.
inline Reconstructor lalrm_reconstructor(const lalrm::LaLRM &model, const dit::CamDiT *dit_model, std::size_t sample_steps, std::uint64_t seed,
                                         std::size_t data_H, std::size_t data_W) {
    if (dit_model && model.config().variant == lalrm::Variant::kLowRes)
        throw ContractError("generated latents are at the dataset raster; evaluate them with a high_res LaLRM checkpoint");
    return [&model, dit_model, sample_steps, seed, data_H, data_W](const SceneRecord &scene, const ClipSample &clip) {
        const std::size_t div = model.config().variant == lalrm::Variant::kLowRes ? 2 : 1;
        const std::size_t H = data_H / div, W = data_W / div;
        const PreparedClip p = prepare_clip(scene, clip, H, W, 0);
        Tensor z = p.latent.data;
        if (dit_model) z = sample_latent(*dit_model, p.targets.at(clip.start), p.seen, sample_steps, seed);
        NoGradGuard ng;
        return to_world(lalrm::reconstruct(model, z, p.seen, H, W).detach(), p.norm);
    };
}

}  // namespace wonderland::pipeline
