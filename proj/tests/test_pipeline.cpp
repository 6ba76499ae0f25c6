#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "wonderland/pipeline/evaluate.hpp"
#include "wonderland/pipeline/selfcheck.hpp"

namespace wl = wonderland;
namespace pl = wonderland::pipeline;
namespace cam = wonderland::camera;
namespace fs = std::filesystem;
using wl::Tensor;

namespace {

Tensor constant(std::size_t H, std::size_t W, float v) { return Tensor({H, W, 3}, std::vector<float>(H * W * 3, v)); }

std::string slurp(const fs::path &p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string &name) {
    const fs::path p = fs::temp_directory_path() / ("wonderland_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Small geometry so training tests run in seconds: 9-frame 32×48 scenes, clips of 5 at stride 2.
pl::Config tiny_config() {
    pl::Config c;
    for (auto [k, v] : std::initializer_list<std::pair<const char *, const char *>>{
             {"data.frames", "9"}, {"data.height", "32"}, {"data.width", "48"}, {"train.T", "5"}, {"train.stride", "2"},
             {"train.V", "4"}, {"train.V_seen", "2"}, {"train.steps_low", "4"}, {"train.steps_high", "3"},
             {"train.log_every", "2"}, {"train.eval_every", "0"}, {"train.warmup", "1"}, {"lalrm.p_l", "1"},
             {"lalrm.num_blocks", "1"}, {"lalrm.hidden", "16"}, {"lalrm.heads", "2"}, {"dit.num_blocks", "2"},
             {"dit.ctrl_blocks", "1"}, {"dit.hidden", "16"}, {"dit.heads", "2"}, {"dit.lora_rank", "2"}, {"dit.steps", "3"},
             {"dit.num_timesteps", "50"}, {"dit.sample_steps", "3"}, {"dit.batch", "1"}, {"seed", "3"}})
        c.set(k, v);
    return c;
}

std::vector<pl::SceneRecord> tiny_dataset(const fs::path &dir, std::size_t n = 1) {
    pl::SceneOptions opt;
    opt.frames = 9;
    opt.height = 32;
    opt.width = 48;
    pl::write_dataset(dir, n, 11, opt);
    return pl::read_dataset(dir);
}

}  // namespace

// ---------------------------------------------------------------- metrics

TEST(Psnr, Examples) {
    EXPECT_EQ(pl::psnr(constant(4, 4, 0.3f), constant(4, 4, 0.3f)), 99.0);
    EXPECT_NEAR(pl::psnr(constant(4, 4, 0.0f), constant(4, 4, 0.1f)), 20.0, 1e-5);
    EXPECT_NEAR(pl::psnr(constant(4, 4, 0.0f), constant(4, 4, 1.0f)), 0.0, 1e-9);
    EXPECT_THROW(pl::psnr(constant(4, 4, 0), constant(4, 5, 0)), wl::ContractError);
}

TEST(Psnr, ConsistentWithDirectMse) {
    wl::Generator gen(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = wl::rand_uniform({7, 9, 3}, gen), b = wl::rand_uniform({7, 9, 3}, gen);
        double se = 0;
        for (std::size_t i = 0; i < a.numel(); ++i) se += std::pow(double(a.at(i)) - double(b.at(i)), 2);
        EXPECT_NEAR(pl::psnr(a, b), 10.0 * std::log10(a.numel() / se), 1e-9);
    }
}

TEST(Ssim, Examples) {
    wl::Generator gen(2);
    const Tensor a = wl::rand_uniform({16, 20, 3}, gen), b = wl::rand_uniform({16, 20, 3}, gen);
    EXPECT_NEAR(pl::ssim(a, a), 1.0, 1e-12);
    EXPECT_LT(pl::ssim(constant(12, 12, 0), constant(12, 12, 1)), 0.01);
    EXPECT_DOUBLE_EQ(pl::ssim(a, b), pl::ssim(b, a));
    EXPECT_LT(pl::ssim(a, b), 0.5);
    EXPECT_THROW(pl::ssim(constant(10, 12, 0), constant(10, 12, 0)), wl::ContractError);
}

// ---------------------------------------------------------------- losses

TEST(LossRecon, Examples) {
    pl::FeaturePyramid net;
    wl::Generator gen(3);
    std::vector<Tensor> x{wl::rand_uniform({16, 16, 3}, gen), wl::rand_uniform({16, 16, 3}, gen)};
    EXPECT_EQ(pl::loss_recon(x, x, 1.0, 0.5, net).total.item(), 0.0f);
    const auto l = pl::loss_recon({constant(8, 8, 0)}, {constant(8, 8, 0.1f)}, 2.0, 0.0, net);
    EXPECT_NEAR(l.total.item(), 2.0 * 0.01, 1e-7);
    EXPECT_THROW(pl::loss_recon(x, {x[0]}, 1, 1, net), wl::ContractError);
    EXPECT_THROW(pl::loss_recon({x[0]}, {constant(8, 8, 0)}, 1, 1, net), wl::ContractError);
}

TEST(LossRecon, NonNegativeAndPerceptualTermActive) {
    pl::FeaturePyramid net;
    wl::Generator gen(4);
    for (int trial = 0; trial < 10; ++trial) {
        const auto l = pl::loss_recon({wl::rand_uniform({16, 16, 3}, gen)}, {wl::rand_uniform({16, 16, 3}, gen)}, 1.0, 0.5, net);
        EXPECT_GE(l.total.item(), 0.0f);
        EXPECT_GT(l.perceptual.item(), 0.0f);
        EXPECT_NEAR(l.total.item(), l.mse.item() + 0.5f * l.perceptual.item(), 1e-6);
    }
}

TEST(LossRecon, GradientVanishesAtTarget) {
    pl::FeaturePyramid net;
    wl::Generator gen(5);
    Tensor x = wl::rand_uniform({16, 16, 3}, gen);
    x.set_requires_grad(true);
    pl::loss_recon({x}, {x.detach()}, 1.0, 0.5, net).total.backward();
    for (float g : x.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(LossRecon, GradientMatchesFiniteDifferences) {
    pl::FeaturePyramid net;
    wl::Generator gen(6);
    const Tensor target = wl::rand_uniform({8, 8, 3}, gen);
    Tensor x = wl::rand_uniform({8, 8, 3}, gen);
    auto f = [&](const Tensor &v) { return pl::loss_recon({v}, {target}, 1.0, 0.5, net).total; };
    x.set_requires_grad(true);
    f(x).backward();
    const Tensor fd = wl::finite_diff_grad(f, x.detach(), 1e-2);
    EXPECT_LT(wl::relative_error(x.grad(), fd.data()), 1e-2);
}

// ---------------------------------------------------------------- clips

TEST(SampleClip, Examples) {
    const auto c = pl::sample_clip_at(13, 5, 3, 0);
    EXPECT_EQ(c.seen, (std::vector<std::size_t>{0, 3, 6, 9, 12}));
    EXPECT_EQ(c.unseen, (std::vector<std::size_t>{1, 2, 4, 5, 7, 8, 10, 11}));
    EXPECT_TRUE(pl::sample_clip_at(20, 5, 1, 4).unseen.empty());
    wl::Generator gen(0);
    EXPECT_THROW(pl::sample_clip(10, 5, 3, gen), wl::ContractError);
    EXPECT_NO_THROW(pl::sample_clip(13, 5, 3, gen));
}

TEST(SampleClip, SeenAndUnseenPartitionTheRange) {
    wl::Generator gen(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t T = 1 + gen.index(6), s = 1 + gen.index(5), src = s * (T - 1) + 1 + gen.index(20);
        const auto c = pl::sample_clip(src, T, s, gen);
        ASSERT_EQ(c.seen.size(), T);
        std::set<std::size_t> all(c.seen.begin(), c.seen.end());
        for (auto f : c.unseen) EXPECT_TRUE(all.insert(f).second) << "frame " << f << " is both seen and unseen";
        EXPECT_EQ(all.size(), s * (T - 1) + 1);
        EXPECT_EQ(*all.begin(), c.start);
        EXPECT_LT(*all.rbegin(), src);
    }
}

// ---------------------------------------------------------------- scenes

TEST(Scene, DeterministicNonconstantAndValid) {
    pl::SceneOptions opt;
    opt.frames = 5;
    opt.height = 24;
    opt.width = 32;
    const auto a = pl::generate_scene(21, opt), b = pl::generate_scene(21, opt);
    ASSERT_EQ(a.video.shape(), (wl::Shape{5, 24, 32, 3}));
    EXPECT_EQ(std::memcmp(a.video.data().data(), b.video.data().data(), a.video.numel() * sizeof(float)), 0);
    EXPECT_NO_THROW(cam::validate(a.trajectory));
    EXPECT_NO_THROW(a.cloud.validate());
    for (std::size_t f = 0; f < 5; ++f) {
        const Tensor img = pl::frame_of(a.video, f);
        double m = 0, m2 = 0;
        for (float v : img.data()) m += v, m2 += double(v) * v;
        m /= img.numel();
        EXPECT_GT(m2 / img.numel() - m * m, 1e-4) << "frame " << f;
    }
    const auto c = pl::generate_scene(22, opt);
    EXPECT_NE(std::memcmp(a.video.data().data(), c.video.data().data(), a.video.numel() * sizeof(float)), 0);
}

TEST(Scene, GaussianCountsPerComplexity) {
    pl::SceneOptions opt;
    opt.frames = 1;
    opt.height = 8;
    opt.width = 8;
    for (auto cx : {pl::Complexity::kSmall, pl::Complexity::kMedium}) {
        opt.complexity = cx;
        const auto n = pl::generate_scene(3, opt).cloud.size();
        EXPECT_GE(n, 50u);
        EXPECT_LE(n, 500u);
    }
    EXPECT_THROW(pl::parse_complexity("large"), wl::ContractError);
}

// ---------------------------------------------------------------- file formats

TEST(Png, RoundTripIsByteIdentical) {
    const auto dir = scratch("png");
    wl::Generator gen(8);
    pl::write_png(dir / "a.png", wl::rand_uniform({6, 10, 3}, gen));
    const Tensor back = pl::read_png(dir / "a.png");
    EXPECT_EQ(back.shape(), (wl::Shape{6, 10, 3}));
    pl::write_png(dir / "b.png", back);
    EXPECT_EQ(slurp(dir / "a.png"), slurp(dir / "b.png"));
    std::ofstream(dir / "bad.png") << "not a png";
    EXPECT_THROW(pl::read_png(dir / "bad.png"), wl::FormatError);
    EXPECT_THROW(pl::read_png(dir / "missing.png"), wl::IoError);
    fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
    wl::Generator gen(9);
    pl::Checkpoint ck;
    ck.config = {{"model", "lalrm"}, {"train.lr", "1e-3"}};
    ck.tensors = {{"a", wl::randn({2, 3}, gen)}, {"b.weight", wl::randn({4}, gen)}, {"scalar", Tensor::scalar(2.5f)}};
    std::stringstream s1;
    pl::write_checkpoint(s1, ck);
    const std::string bytes = s1.str();
    EXPECT_EQ(bytes.substr(0, 4), "WLCK");
    std::stringstream in(bytes);
    const auto back = pl::read_checkpoint(in);
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.names(), (std::vector<std::string>{"a", "b.weight", "scalar"}));
    EXPECT_EQ(back.at("a").shape(), (wl::Shape{2, 3}));
    std::stringstream s2;
    pl::write_checkpoint(s2, back);
    EXPECT_EQ(s2.str(), bytes);
}

TEST(Checkpoint, CorruptionIsFormatError) {
    pl::Checkpoint ck;
    ck.tensors = {{"a", Tensor::zeros({3})}};
    std::stringstream s;
    pl::write_checkpoint(s, ck);
    const std::string good = s.str();
    auto expect_format_error = [](std::string bytes) {
        std::stringstream in(bytes);
        EXPECT_THROW(pl::read_checkpoint(in), wl::FormatError);
    };
    expect_format_error("WLCX" + good.substr(4));
    expect_format_error(good.substr(0, good.size() - 1));
    expect_format_error(good + "x");
    std::string bad_version = good;
    bad_version[4] = 9;
    expect_format_error(bad_version);
}

TEST(Checkpoint, ModuleRoundTripAndLatentFile) {
    wl::lalrm::LaLRMConfig cfg;
    cfg.p_l = 1;
    cfg.num_blocks = 1;
    cfg.hidden = 8;
    cfg.heads = 1;
    wl::lalrm::LaLRM a(cfg);
    cfg.seed = 99;
    wl::lalrm::LaLRM b(cfg);
    pl::load_into(pl::checkpoint_of(a, {}), b);
    EXPECT_EQ(a.decoder_weight().data()[5], b.decoder_weight().data()[5]);

    wl::Generator gen(10);
    wl::codec::VideoLatent z{wl::rand_uniform({2, 1, 2, 768}, gen), "lossless-s2d", {}};
    std::stringstream s;
    pl::write_checkpoint(s, pl::latent_checkpoint(z));
    const auto back = pl::latent_from(pl::read_checkpoint(s));
    EXPECT_EQ(back.codec_id, z.codec_id);
    EXPECT_EQ(std::memcmp(back.data.data().data(), z.data.data().data(), z.data.numel() * 4), 0);
    EXPECT_THROW(pl::latent_from(pl::checkpoint_of(a, {})), wl::FormatError);
}

// ---------------------------------------------------------------- config

TEST(Config, FileThenOverridesAndValidation) {
    pl::Config c;
    std::istringstream text("# comment\n dit.num_blocks = 3  # trailing\n\ndit.branches=lora\n");
    c.merge_text(text, "test.cfg");
    EXPECT_EQ(c.get_size("dit.num_blocks"), 3u);
    c.set_assignment("dit.num_blocks = 5");
    EXPECT_EQ(c.get_size("dit.num_blocks"), 5u);
    EXPECT_EQ(pl::dit_config(c).branches, wl::dit::Branches::kLora);
    std::istringstream unknown("dit.colour = red\n");
    EXPECT_THROW(c.merge_text(unknown, "x"), wl::ContractError);
    c.set("dit.hidden", "-4");
    EXPECT_THROW(c.get_size("dit.hidden"), wl::ContractError);
    c.set("train.lr", "fast");
    EXPECT_THROW(c.get_double("train.lr"), wl::ContractError);
    EXPECT_THROW(c.set_assignment("no equals sign"), wl::ContractError);
}

TEST(Config, LockRoundTrip) {
    auto c = tiny_config();
    std::istringstream text(c.text());
    pl::Config d;
    d.merge_text(text, "lock");
    EXPECT_EQ(d.values(), c.values());
}

// ---------------------------------------------------------------- datasets

TEST(Dataset, LayoutDeterminismAndEmpty) {
    const auto root = scratch("dataset");
    pl::SceneOptions opt;
    opt.frames = 3;
    opt.height = 16;
    opt.width = 24;
    pl::write_dataset(root / "a", 2, 5, opt);
    pl::write_dataset(root / "b", 2, 5, opt);
    for (const char *scene : {"scene_00000", "scene_00001"}) {
        EXPECT_TRUE(fs::exists(root / "a" / scene / "trajectory.txt"));
        EXPECT_TRUE(fs::exists(root / "a" / scene / "scene.wlnd"));
        for (std::size_t f = 0; f < 3; ++f)
            EXPECT_EQ(slurp(pl::frame_path(root / "a" / scene / "frames", f)), slurp(pl::frame_path(root / "b" / scene / "frames", f)));
    }
    const auto scenes = pl::read_dataset(root / "a");
    ASSERT_EQ(scenes.size(), 2u);
    EXPECT_EQ(scenes[1].trajectory.size(), 3u);
    EXPECT_EQ(scenes[1].height, 16u);
    pl::write_dataset(root / "empty", 0, 5, opt);
    EXPECT_TRUE(fs::is_directory(root / "empty"));
    EXPECT_TRUE(pl::read_dataset(root / "empty").empty());
    EXPECT_THROW(pl::read_dataset(root / "missing"), wl::IoError);
    fs::remove_all(root);
}

// ---------------------------------------------------------------- frames and clouds

TEST(Reconstruct, NormalizationRoundTripOfClouds) {
    wl::Generator gen(12);
    pl::SceneOptions opt;
    opt.frames = 5;
    opt.height = 8;
    opt.width = 8;
    const auto scene = pl::generate_scene(4, opt);
    const auto n = cam::normalization_of(scene.trajectory);
    const auto back = pl::to_world(pl::to_normalized(scene.cloud, n), n);
    for (std::size_t i = 0; i < scene.cloud.positions.numel(); ++i) EXPECT_NEAR(back.positions.at(i), scene.cloud.positions.at(i), 1e-4);
    // Rendering a normalized cloud from normalized cameras reproduces the world render.
    const auto rs = pl::scene_render_settings(8, 8);
    const auto a = wl::gsplat::rasterize(scene.cloud, scene.trajectory[3], rs).color;
    const auto b = wl::gsplat::rasterize(pl::to_normalized(scene.cloud, n), n.apply(scene.trajectory[3]), rs).color;
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-4);
}

TEST(Reconstruct, SubsampleAndOrbit) {
    pl::SceneOptions opt;
    opt.frames = 9;
    opt.height = 8;
    opt.width = 8;
    const auto traj = pl::generate_scene(4, opt).trajectory;
    EXPECT_EQ(pl::subsample(traj, 4, 3).size(), 3u);
    EXPECT_THROW(pl::subsample(traj, 4, 4), wl::ContractError);
    const auto orbit = pl::orbit_around(traj[0], 3.0, 12);
    EXPECT_EQ(orbit.size(), 12u);
    EXPECT_NO_THROW(cam::validate(orbit));
    EXPECT_LT((orbit[0].t - traj[0].t).norm(), 1e-9);
}

TEST(Reconstruct, SplatRowCountPerVariant) {
    const auto root = scratch("rows");
    const auto scenes = tiny_dataset(root);
    const auto traj = pl::subsample(scenes[0].trajectory, 2, 5);
    const Tensor image = wl::gsplat::rasterize(scenes[0].cloud, traj[0], pl::scene_render_settings(32, 48)).color;
    std::vector<Tensor> frames;
    for (const auto &p : traj.poses) frames.push_back(wl::reshape(wl::gsplat::rasterize(scenes[0].cloud, p, pl::scene_render_settings(32, 48)).color, {1, 32, 48, 3}));
    const Tensor z = wl::codec::LosslessCodec().encode({wl::concat(frames, 0)}).data;
    const auto cfg = tiny_config();
    wl::lalrm::LaLRM low(pl::lalrm_config(cfg, wl::lalrm::Variant::kLowRes)), high(pl::lalrm_config(cfg, wl::lalrm::Variant::kHighRes));
    EXPECT_EQ(pl::reconstruct_from_image(low, nullptr, image, traj, z, 0, 0).size(), 5u * 32 * 48);
    EXPECT_EQ(pl::reconstruct_from_image(high, nullptr, image, traj, z, 0, 0).size(), 5u * 16 * 24);
    EXPECT_THROW(pl::reconstruct_from_image(low, nullptr, image, traj, std::nullopt, 0, 0), wl::StateError);
    fs::remove_all(root);
}

// ---------------------------------------------------------------- training

TEST(TrainLaLRM, HighResRequiresLowResCheckpoint) {
    const auto root = scratch("gating");
    const auto scenes = tiny_dataset(root / "data");
    auto cfg = tiny_config();
    cfg.set("train.mix_ratio", "0");
    pl::LaLRMTrainOptions opt;
    opt.stage = pl::Stage::kHighRes;
    opt.out_dir = root / "run";
    EXPECT_THROW(pl::train_lalrm(cfg, scenes, opt), wl::StateError);
    opt.stage = pl::Stage::kLowRes;
    pl::train_lalrm(cfg, scenes, opt);
    opt.stage = pl::Stage::kHighRes;
    const auto r = pl::train_lalrm(cfg, scenes, opt);
    EXPECT_TRUE(fs::exists(r.checkpoint));
    EXPECT_EQ(pl::read_checkpoint(r.checkpoint).value("stage"), "high_res");
    // A high_res checkpoint cannot stand in for the low_res one.
    opt.low_res_checkpoint = r.checkpoint;
    EXPECT_THROW(pl::train_lalrm(cfg, scenes, opt), wl::StateError);
    fs::remove_all(root);
}

TEST(TrainLaLRM, MixingNeedsDitCheckpointAndUsesIt) {
    const auto root = scratch("mixing");
    const auto scenes = tiny_dataset(root / "data");
    auto cfg = tiny_config();
    pl::LaLRMTrainOptions opt;
    opt.out_dir = root / "run";
    pl::train_lalrm(cfg, scenes, opt);
    opt.stage = pl::Stage::kHighRes;
    opt.dit_checkpoint = root / "run" / "dit.wlck";
    EXPECT_THROW(pl::train_lalrm(cfg, scenes, opt), wl::StateError);
    pl::train_dit(cfg, scenes, {root / "run"});
    cfg.set("train.mix_ratio", "1");
    EXPECT_NO_THROW(pl::train_lalrm(cfg, scenes, opt));
    fs::remove_all(root);
}

TEST(TrainLaLRM, DeterministicCheckpointsAndLossLog) {
    const auto root = scratch("determinism");
    const auto scenes = tiny_dataset(root / "data");
    const auto cfg = tiny_config();
    pl::LaLRMTrainOptions opt;
    opt.out_dir = root / "a";
    const auto a = pl::train_lalrm(cfg, scenes, opt);
    opt.out_dir = root / "b";
    const auto b = pl::train_lalrm(cfg, scenes, opt);
    EXPECT_EQ(a.final_loss, b.final_loss);
    EXPECT_EQ(slurp(a.checkpoint), slurp(b.checkpoint));
    // 4 steps logged every 2 → steps 0 and 2.
    const auto rows = pl::read_loss_csv(root / "a" / "lalrm_low_res_loss.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].step, 2u);
    EXPECT_EQ(rows.size(), a.log.size());
    EXPECT_TRUE(fs::exists(pl::frame_path(root / "a" / "lalrm_low_res_eval" / "step_00004", 0)));
    fs::remove_all(root);
}

TEST(TrainLaLRM, ContractViolations) {
    const auto root = scratch("contracts");
    const auto scenes = tiny_dataset(root / "data");
    auto cfg = tiny_config();
    pl::LaLRMTrainOptions opt;
    opt.out_dir = root / "run";
    cfg.set("train.V", "8");
    cfg.set("train.V_seen", "6");
    EXPECT_THROW(pl::train_lalrm(cfg, scenes, opt), wl::ContractError);  // V' > |seen| = 5
    cfg.set("train.V_seen", "2");
    EXPECT_THROW(pl::train_lalrm(cfg, scenes, opt), wl::ContractError);  // 6 unseen views, 3 available
    EXPECT_THROW(pl::train_lalrm(tiny_config(), {}, opt), wl::ContractError);
    fs::remove_all(root);
}

TEST(TrainLaLRM, NonFiniteLossAbortsWithStep) {
    const auto root = scratch("nan");
    const auto scenes = tiny_dataset(root / "data");
    auto cfg = tiny_config();
    cfg.set("train.lr", "1e30");
    cfg.set("train.clip_norm", "0");
    cfg.set("train.warmup", "0");
    pl::LaLRMTrainOptions opt;
    opt.out_dir = root / "run";
    try {
        pl::train_lalrm(cfg, scenes, opt);
        ADD_FAILURE() << "expected a numeric error";
    } catch (const wl::NumericError &e) {
        EXPECT_NE(std::string(e.what()).find("loss at step "), std::string::npos) << e.what();
    }
    EXPECT_FALSE(fs::exists(root / "run" / "lalrm_low_res.wlck"));
    fs::remove_all(root);
}

TEST(TrainDiT, DualManifestHasControlCopyAndLora) {
    const auto root = scratch("dit");
    const auto scenes = tiny_dataset(root / "data");
    auto cfg = tiny_config();
    const auto r = pl::train_dit(cfg, scenes, {root / "run"});
    const auto names = pl::read_checkpoint(r.checkpoint).names();
    auto has = [&](const std::string &s) { return std::any_of(names.begin(), names.end(), [&](auto &n) { return n.find(s) != std::string::npos; }); };
    EXPECT_TRUE(has("ctrl.block0."));
    EXPECT_TRUE(has("ctrl.out0."));
    EXPECT_TRUE(has(".lora_"));
    EXPECT_TRUE(has("fuse."));
    EXPECT_EQ(pl::read_loss_csv(root / "run" / "dit_loss.csv").size(), 2u);
    cfg.set("dit.branches", "none");
    const auto base = pl::read_checkpoint(pl::train_dit(cfg, scenes, {root / "none"}).checkpoint).names();
    EXPECT_LT(base.size(), names.size());
    const auto m = pl::load_dit(pl::read_checkpoint(r.checkpoint));
    EXPECT_THROW(pl::load_lalrm(pl::read_checkpoint(r.checkpoint)), wl::StateError);
    fs::remove_all(root);
}

// ---------------------------------------------------------------- evaluation

TEST(Evaluate, SchemaEmptyAndGroundTruth) {
    const auto empty = pl::evaluate({}, 5, 2, pl::ground_truth_reconstructor()).to_json();
    EXPECT_EQ(empty["n_scenes"], 0);
    EXPECT_TRUE(empty["scenes"].empty());
    for (const char *k : {"psnr_first14", "ssim_first14", "psnr_unseen", "ssim_unseen"}) EXPECT_TRUE(empty.contains(k)) << k;

    const auto root = scratch("eval");
    const auto scenes = tiny_dataset(root, 2);
    const auto report = pl::evaluate(scenes, 5, 2, pl::ground_truth_reconstructor());
    const auto j = report.to_json();
    EXPECT_EQ(j["n_scenes"], 2);
    EXPECT_GE(j["psnr_first14"].get<double>(), 40.0);
    EXPECT_GE(j["psnr_unseen"].get<double>(), 40.0);
    ASSERT_EQ(j["scenes"].size(), 2u);
    EXPECT_EQ(j["scenes"][0]["n_first14"], 8);  // frames 1..8 of a 9-frame scene
    EXPECT_EQ(j["scenes"][0]["n_unseen"], 4);

    const auto cfg = tiny_config();
    wl::lalrm::LaLRM model(pl::lalrm_config(cfg, wl::lalrm::Variant::kLowRes));
    const auto a = pl::evaluate(scenes, 5, 2, pl::lalrm_reconstructor(model, nullptr, 0, 0, 32, 48)).to_json();
    const auto b = pl::evaluate(scenes, 5, 2, pl::lalrm_reconstructor(model, nullptr, 0, 0, 32, 48)).to_json();
    EXPECT_EQ(a.dump(), b.dump());
    EXPECT_LT(a["psnr_unseen"].get<double>(), 40.0);
    fs::remove_all(root);
}

// ---------------------------------------------------------------- selfcheck

TEST(Selfcheck, AllPassAndFaultIsNamed) {
    const auto ok = pl::run_selfcheck();
    EXPECT_GE(ok.size(), 6u);
    for (const auto &r : ok) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
    const auto bad = pl::run_selfcheck({"codec.roundtrip"});
    for (const auto &r : bad) EXPECT_EQ(r.passed, r.name != "codec.roundtrip") << r.name;
}
