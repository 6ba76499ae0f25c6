// wonderland: synthesize scenes, train the DiT and LaLRM, reconstruct, evaluate.
//
// Exit codes: 0 success, 1 contract/validation failure, 2 I/O failure, 3 numeric failure.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "wonderland/pipeline/evaluate.hpp"
#include "wonderland/pipeline/selfcheck.hpp"

namespace fs = std::filesystem;
namespace wl = wonderland;
namespace pl = wonderland::pipeline;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    std::vector<std::string> overrides;
    bool verbose = false;

    pl::Config resolve() const {
        pl::Config cfg;
        if (!config_path.empty()) cfg.merge_file(config_path);
        for (const auto &o : overrides) cfg.set_assignment(o);
        if (seed) cfg.set("seed", std::to_string(*seed));
        return cfg;
    }
};

void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw wl::IoError("cannot create directory " + dir.string());
}

void write_lock(const fs::path &dir, const pl::Config &cfg, const std::string &command) {
    std::ofstream os(dir / "run.lock");
    if (!os) throw wl::IoError("cannot write " + (dir / "run.lock").string());
    os << "# " << command << "\n" << cfg.text();
}

std::string joined(int argc, char **argv) {
    std::string s;
    for (int i = 1; i < argc; ++i) s += (i > 1 ? " " : "") + std::string(argv[i]);
    return s;
}

int cmd_selfcheck(const std::vector<std::string> &faults) {
    const std::set<std::string> f(faults.begin(), faults.end());
    std::size_t failed = 0;
    for (const auto &r : pl::run_selfcheck(f)) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.name << r.detail << "\n";
        failed += !r.passed;
    }
    std::cout << (failed ? std::to_string(failed) + " check(s) failed" : "all checks passed") << std::endl;
    return failed ? int(wl::ExitCode::kContract) : 0;
}

int cmd_synth(const pl::Config &cfg, std::size_t scenes, const fs::path &out, const std::string &command) {
    ensure_dir(out);
    pl::SceneOptions opt;
    opt.complexity = pl::parse_complexity(cfg.get("data.complexity"));
    opt.frames = cfg.get_size("data.frames");
    opt.height = cfg.get_size("data.height");
    opt.width = cfg.get_size("data.width");
    pl::write_dataset(out, scenes, cfg.get_size("seed"), opt);
    write_lock(out, cfg, command);
    std::cout << "wrote " << scenes << " scene(s) to " << out.string() << std::endl;
    return 0;
}

int cmd_train(pl::Config cfg, const std::string &model, const std::string &stage, const fs::path &dataset, const fs::path &out,
              const std::string &branches, const std::string &init, const std::string &dit, bool verbose, const std::string &command) {
    if (!branches.empty()) cfg.set("dit.branches", branches);
    const auto scenes = pl::read_dataset(dataset);
    if (scenes.empty()) throw wl::ContractError("dataset " + dataset.string() + " has no scenes");
    ensure_dir(out);
    write_lock(out, cfg, command);
    pl::TrainResult r;
    if (model == "dit") {
        r = pl::train_dit(cfg, scenes, {out, verbose});
    } else {
        pl::LaLRMTrainOptions opt;
        opt.stage = pl::parse_stage(stage);
        opt.out_dir = out;
        if (!init.empty()) opt.low_res_checkpoint = init;
        opt.dit_checkpoint = dit.empty() ? out / "dit.wlck" : fs::path(dit);
        opt.verbose = verbose;
        r = pl::train_lalrm(cfg, scenes, opt);
    }
    std::cout << "checkpoint " << r.checkpoint.string() << "  final loss " << r.final_loss << "  logged rows " << r.log.size() << std::endl;
    return 0;
}

struct ReconstructArgs {
    std::string image, trajectory, dit, lalrm, out, latent, reference;
    bool skip_dit = false;
    std::size_t stride = 0, frames = 0, orbit = 24;
};

int cmd_reconstruct(const pl::Config &run_cfg, const ReconstructArgs &a, const std::string &command) {
    const pl::Checkpoint lck = pl::read_checkpoint(fs::path(a.lalrm));
    const auto model = pl::load_lalrm(lck, a.lalrm);
    const pl::Config model_cfg = pl::Config::from_snapshot(lck.config);
    const std::size_t stride = a.stride ? a.stride : model_cfg.get_size("train.stride");
    const std::size_t count = a.frames ? a.frames : model_cfg.get_size("train.T");
    const wl::camera::Trajectory full = wl::camera::read_trajectory(fs::path(a.trajectory));
    const wl::camera::Trajectory seen = pl::subsample(full, stride, count);
    const wl::Tensor image = pl::read_png(a.image);
    const std::size_t H = image.dim(0), W = image.dim(1);

    std::optional<wl::Tensor> latent;
    std::unique_ptr<wl::dit::CamDiT> dit_model;
    std::size_t sample_steps = 0;
    if (a.skip_dit) {
        if (a.latent.empty()) throw wl::ContractError("--skip-dit needs --latent");
        latent = pl::latent_from(pl::read_checkpoint(fs::path(a.latent))).data;
    } else {
        if (a.dit.empty()) throw wl::ContractError("reconstruct needs --dit (or --skip-dit with --latent)");
        const pl::Checkpoint dck = pl::read_checkpoint(fs::path(a.dit));
        dit_model = pl::load_dit(dck, a.dit);
        sample_steps = pl::Config::from_snapshot(dck.config).get_size("dit.sample_steps");
    }
    const auto cloud = pl::reconstruct_from_image(*model, dit_model.get(), image, seen, latent, sample_steps, run_cfg.get_size("seed"));

    const fs::path out(a.out);
    ensure_dir(out);
    write_lock(out, run_cfg, command);
    wl::lalrm::write_splat(out / "scene.wlnd", cloud);
    const auto rs = pl::scene_render_settings(H, W);
    std::vector<wl::Tensor> frames;
    for (const auto &pose : full.poses) frames.push_back(wl::reshape(wl::gsplat::rasterize(cloud, pose, rs).color, {1, H, W, 3}));
    const wl::Tensor video = wl::concat(frames, 0);
    pl::write_frames(out / "renders", video);
    std::vector<float> depth;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const wl::camera::Vec3 x(cloud.positions.at(i * 3), cloud.positions.at(i * 3 + 1), cloud.positions.at(i * 3 + 2));
        depth.push_back(static_cast<float>((full[0].R.transpose() * (x - full[0].t)).z()));
    }
    std::nth_element(depth.begin(), depth.begin() + depth.size() / 2, depth.end());
    frames.clear();
    for (const auto &pose : pl::orbit_around(full[0], std::max(0.5f, depth[depth.size() / 2]), a.orbit).poses)
        frames.push_back(wl::reshape(wl::gsplat::rasterize(cloud, pose, rs).color, {1, H, W, 3}));
    pl::write_frames(out / "orbit", wl::concat(frames, 0));
    std::cout << "wrote " << cloud.size() << " Gaussians to " << (out / "scene.wlnd").string() << std::endl;

    if (!a.reference.empty()) {
        double sum = 0;
        for (std::size_t k = 0; k < count; ++k) {
            const wl::Tensor gt = pl::read_png(pl::frame_path(a.reference, k * stride));
            const wl::Tensor img = pl::read_png(pl::frame_path(out / "renders", k * stride));
            sum += pl::psnr(img, gt);
        }
        nlohmann::ordered_json j;
        j["psnr_seen"] = sum / double(count);
        j["n_seen"] = count;
        std::ofstream(out / "metrics.json") << j.dump(2) << "\n";
        std::cout << "seen-view PSNR " << std::fixed << std::setprecision(2) << sum / double(count) << " dB" << std::endl;
    }
    return 0;
}

int cmd_eval(const pl::Config &run_cfg, const std::string &checkpoint, const std::string &dataset, const std::string &report_path,
             const std::string &dit, bool ground_truth, const std::string &traj_a, const std::string &traj_b, const std::string &command) {
    if (!traj_a.empty() || !traj_b.empty()) {
        if (traj_a.empty() || traj_b.empty()) throw wl::ContractError("trajectory-error mode needs both --traj-a and --traj-b");
        const auto e = wl::camera::pose_errors(wl::camera::read_trajectory(fs::path(traj_a)), wl::camera::read_trajectory(fs::path(traj_b)));
        std::cout << std::setprecision(6) << "R_err " << e.rotation << " rad (" << e.rotation * 180.0 / std::numbers::pi << " deg)\n"
                  << "T_err " << e.translation << std::endl;
        return 0;
    }
    if (dataset.empty() || report_path.empty()) throw wl::ContractError("eval needs --dataset and --report");
    const auto scenes = pl::read_dataset(dataset);
    std::unique_ptr<wl::lalrm::LaLRM> model;
    std::unique_ptr<wl::dit::CamDiT> dit_model;
    pl::Config model_cfg = run_cfg;
    std::size_t sample_steps = 0;
    pl::Reconstructor rec;
    if (ground_truth) {
        rec = pl::ground_truth_reconstructor();
    } else {
        if (checkpoint.empty()) throw wl::ContractError("eval needs --checkpoint or --ground-truth");
        const auto ck = pl::read_checkpoint(fs::path(checkpoint));
        model = pl::load_lalrm(ck, checkpoint);
        model_cfg = pl::Config::from_snapshot(ck.config);
        if (!dit.empty()) {
            const auto dck = pl::read_checkpoint(fs::path(dit));
            dit_model = pl::load_dit(dck, dit);
            sample_steps = pl::Config::from_snapshot(dck.config).get_size("dit.sample_steps");
        }
        const std::size_t H = scenes.empty() ? model_cfg.get_size("data.height") : scenes.front().height;
        const std::size_t W = scenes.empty() ? model_cfg.get_size("data.width") : scenes.front().width;
        rec = pl::lalrm_reconstructor(*model, dit_model.get(), sample_steps, run_cfg.get_size("seed"), H, W);
    }
    const auto report = pl::evaluate(scenes, model_cfg.get_size("train.T"), model_cfg.get_size("train.stride"), rec);
    const fs::path rp(report_path);
    if (rp.has_parent_path()) ensure_dir(rp.parent_path());
    std::ofstream os(rp);
    if (!os) throw wl::IoError("cannot write report " + rp.string());
    os << report.to_json().dump(2) << "\n";
    write_lock(rp.has_parent_path() ? rp.parent_path() : fs::path("."), run_cfg, command);

    std::cout << std::left << std::setw(14) << "scene" << std::right << std::setw(14) << "psnr_first14" << std::setw(14) << "ssim_first14"
              << std::setw(13) << "psnr_unseen" << std::setw(13) << "ssim_unseen" << "\n"
              << std::fixed;
    for (const auto &m : report.scenes)
        std::cout << std::left << std::setw(14) << m.name << std::right << std::setprecision(2) << std::setw(14) << m.psnr_first14
                  << std::setprecision(4) << std::setw(14) << m.ssim_first14 << std::setprecision(2) << std::setw(13) << m.psnr_unseen
                  << std::setprecision(4) << std::setw(13) << m.ssim_unseen << "\n";
    if (!report.scenes.empty())
        std::cout << std::left << std::setw(14) << "mean" << std::right << std::setprecision(2) << std::setw(14)
                  << report.mean(&pl::SceneMetrics::psnr_first14) << std::setprecision(4) << std::setw(14)
                  << report.mean(&pl::SceneMetrics::ssim_first14) << std::setprecision(2) << std::setw(13)
                  << report.mean(&pl::SceneMetrics::psnr_unseen) << std::setprecision(4) << std::setw(13)
                  << report.mean(&pl::SceneMetrics::ssim_unseen) << "\n";
    std::cout << "report " << rp.string() << std::endl;
    return 0;
}

int cmd_encode(const std::string &frames, std::size_t stride, std::size_t count, const std::string &out) {
    const wl::Tensor video = pl::read_frames(frames);
    std::vector<wl::Tensor> picked;
    for (std::size_t k = 0; k < count; ++k) {
        if (k * stride >= video.dim(0)) throw wl::ContractError("video has " + std::to_string(video.dim(0)) + " frames, too few for the requested clip");
        picked.push_back(wl::slice(video, 0, k * stride, 1));
    }
    const auto z = wl::codec::LosslessCodec().encode({wl::concat(picked, 0)});
    pl::write_checkpoint(fs::path(out), pl::latent_checkpoint(z));
    std::cout << "latent " << wl::to_string(z.data.shape()) << " -> " << out << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"wonderland: camera-guided latent video diffusion and feed-forward Gaussian reconstruction"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--seed", common.seed, "Seed for every random choice");
    app.add_option("--config", common.config_path, "Config file of `section.key = value` lines");
    app.add_option("--set", common.overrides, "Config override key=value (repeatable)");
    app.add_flag("-v,--verbose", common.verbose, "Print training progress");

    auto *selfcheck = app.add_subcommand("selfcheck", "Run the fast invariant suite");
    std::vector<std::string> faults;
    selfcheck->add_option("--inject-fault", faults, "Corrupt a component on purpose (codec.roundtrip)");

    auto *synth = app.add_subcommand("synth", "Generate synthetic scenes");
    std::size_t n_scenes = 1;
    std::string synth_out;
    synth->add_option("--scenes", n_scenes, "Number of scenes")->required();
    synth->add_option("--out", synth_out, "Dataset directory")->required();

    auto *train = app.add_subcommand("train", "Train the DiT or one LaLRM stage");
    std::string model, stage = "low_res", dataset, train_out = "runs", branches, init, dit_ck;
    train->add_option("--model", model, "dit or lalrm")->required()->check(CLI::IsMember({"dit", "lalrm"}));
    train->add_option("--stage", stage, "low_res or high_res")->check(CLI::IsMember({"low_res", "high_res"}));
    train->add_option("--dataset", dataset, "Dataset directory from synth")->required();
    train->add_option("--out", train_out, "Run directory for checkpoints, loss CSVs and eval renders");
    train->add_option("--branches", branches, "DiT camera branches: none, lora, ctrl or dual");
    train->add_option("--init", init, "low_res checkpoint for the high_res stage (default OUT/lalrm_low_res.wlck)");
    train->add_option("--dit", dit_ck, "DiT checkpoint for generated-latent mixing (default OUT/dit.wlck)");

    auto *recon = app.add_subcommand("reconstruct", "Image + trajectory to Gaussians and renders");
    ReconstructArgs ra;
    recon->add_option("--image", ra.image, "Conditioning PNG")->required();
    recon->add_option("--trajectory", ra.trajectory, "Trajectory file")->required();
    recon->add_option("--dit", ra.dit, "DiT checkpoint");
    recon->add_option("--lalrm", ra.lalrm, "LaLRM checkpoint")->required();
    recon->add_option("--out", ra.out, "Output directory")->required();
    recon->add_flag("--skip-dit", ra.skip_dit, "Use --latent instead of sampling");
    recon->add_option("--latent", ra.latent, "Latent file (see `encode`)");
    recon->add_option("--stride", ra.stride, "Seen-frame stride in the trajectory (default from the checkpoint)");
    recon->add_option("--frames", ra.frames, "Number of seen frames (default from the checkpoint)");
    recon->add_option("--orbit", ra.orbit, "Frames in the held-out orbit");
    recon->add_option("--reference", ra.reference, "Ground-truth frame directory; writes seen-view PSNR to metrics.json");

    auto *eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset, or compare two trajectories");
    std::string eval_ck, eval_dataset, report, eval_dit, traj_a, traj_b;
    bool ground_truth = false;
    eval->add_option("--checkpoint", eval_ck, "LaLRM checkpoint");
    eval->add_option("--dataset", eval_dataset, "Dataset directory");
    eval->add_option("--report", report, "JSON report path");
    eval->add_option("--dit", eval_dit, "DiT checkpoint: reconstruct from generated latents");
    eval->add_flag("--ground-truth", ground_truth, "Score the ground-truth clouds instead of a model");
    eval->add_option("--traj-a", traj_a, "Trajectory-error mode: reference trajectory");
    eval->add_option("--traj-b", traj_b, "Trajectory-error mode: estimated trajectory");

    auto *encode = app.add_subcommand("encode", "Encode frames into a latent file");
    std::string enc_frames, enc_out;
    std::size_t enc_stride = 4, enc_count = 9;
    encode->add_option("--frames", enc_frames, "Directory of frame_%05d.png")->required();
    encode->add_option("--stride", enc_stride, "Frame stride");
    encode->add_option("--count", enc_count, "Number of frames");
    encode->add_option("--out", enc_out, "Latent file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        app.exit(e);
        return int(wl::ExitCode::kContract);
    }

    const std::string command = joined(argc, argv);
    try {
        const pl::Config cfg = common.resolve();
        if (*selfcheck) return cmd_selfcheck(faults);
        if (*synth) return cmd_synth(cfg, n_scenes, synth_out, command);
        if (*train) return cmd_train(cfg, model, stage, dataset, train_out, branches, init, dit_ck, common.verbose, command);
        if (*recon) return cmd_reconstruct(cfg, ra, command);
        if (*eval) return cmd_eval(cfg, eval_ck, eval_dataset, report, eval_dit, ground_truth, traj_a, traj_b, command);
        if (*encode) return cmd_encode(enc_frames, enc_stride, enc_count, enc_out);
    } catch (const wl::Error &e) {
        std::cerr << "error: " << e.what() << std::endl;
        return int(e.code());
    } catch (const fs::filesystem_error &e) {
        std::cerr << "error: " << e.what() << std::endl;
        return int(wl::ExitCode::kIo);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << std::endl;
        return int(wl::ExitCode::kContract);
    }
    return 0;
}
