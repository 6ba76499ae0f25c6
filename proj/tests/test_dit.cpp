#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "wonderland/dit/cam_dit.hpp"
#include "wonderland/nn/optim.hpp"

namespace wl = wonderland;
namespace cam = wonderland::camera;
using wl::Tensor;
using wl::dit::Branches;
using wl::dit::CamDiT;
using wl::dit::DiffusionSchedule;
using wl::dit::DiTConfig;

namespace {

// Latent 2×4×6×12 for a 5×8×12 video (r_t 4, r_s 2).
DiTConfig small(Branches b = Branches::kDual, std::uint64_t seed = 1) {
    DiTConfig cfg;
    cfg.num_blocks = 4;
    cfg.ctrl_blocks = 2;
    cfg.hidden = 32;
    cfg.heads = 2;
    cfg.lora_rank = 4;
    cfg.latent_channels = 12;
    cfg.r_s = 2;
    cfg.cond_dim = 4;
    cfg.num_steps = 100;
    cfg.branches = b;
    cfg.seed = seed;
    return cfg;
}

cam::Trajectory walk(std::size_t T, std::size_t H, std::size_t W, double step = 0.1) {
    cam::Trajectory traj;
    const auto K = cam::intrinsics(W, W, W / 2.0, H / 2.0);
    for (std::size_t f = 0; f < T; ++f) traj.poses.push_back(cam::look_at({step * f, 0, -2}, {0, 0, 0}, K));
    return traj;
}

double max_abs_diff(const Tensor &a, const Tensor &b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.at(i)) - b.at(i)));
    return m;
}

struct Inputs {
    Tensor z, cond, plucker, y;
    std::size_t tau;
};

Inputs random_inputs(const CamDiT &m, wl::Generator &gen) {
    Inputs in;
    in.z = wl::randn({2, 4, 6, 12}, gen);
    in.cond = m.condition(wl::rand_uniform({1, 4, 6, 12}, gen), 2);
    in.plucker = cam::plucker_embed(walk(5, 8, 12, gen.uniform(0.05, 0.3)), 8, 12);
    in.y = wl::randn({4}, gen);
    in.tau = gen.index(m.schedule().num_steps);
    return in;
}

}  // namespace

TEST(Schedule, VariancePreservingAndMonotone) {
    const auto s = DiffusionSchedule::cosine(1000);
    ASSERT_EQ(s.alpha.size(), 1000u);
    for (std::size_t k = 0; k < s.num_steps; ++k) {
        EXPECT_NEAR(s.alpha[k] * s.alpha[k] + s.sigma[k] * s.sigma[k], 1.0, 1e-6);
        if (k) {
            EXPECT_LE(s.alpha[k], s.alpha[k - 1]);
        }
    }
    EXPECT_EQ(s.alpha.front(), 1.0);
    EXPECT_EQ(s.sigma.front(), 0.0);
    EXPECT_EQ(s.alpha.back(), 0.0);
    EXPECT_EQ(s.sigma.back(), 1.0);
}

TEST(Schedule, AddNoiseEndpointsAreExact) {
    const auto s = DiffusionSchedule::cosine(50);
    wl::Generator gen(4);
    auto z = wl::randn({3, 4, 5}, gen), eps = wl::randn({3, 4, 5}, gen);
    auto clean = wl::dit::add_noise(s, z, 0, eps);
    auto noise = wl::dit::add_noise(s, z, 49, eps);
    for (std::size_t i = 0; i < z.numel(); ++i) {
        EXPECT_EQ(clean.at(i), z.at(i));
        EXPECT_EQ(noise.at(i), eps.at(i));
    }
}

TEST(Schedule, AddNoiseArithmeticAndErrors) {
    const auto s = DiffusionSchedule::from_arrays({1.0, 0.6}, {0.0, 0.8});
    auto out = wl::dit::add_noise(s, Tensor::ones({4}), 1, Tensor::ones({4}));
    for (float v : out.data()) EXPECT_FLOAT_EQ(v, 1.4f);
    EXPECT_THROW(wl::dit::add_noise(s, Tensor::ones({4}), 1, Tensor::ones({5})), wl::ContractError);
    EXPECT_THROW(wl::dit::add_noise(s, Tensor::ones({4}), 2, Tensor::ones({4})), wl::ContractError);
    EXPECT_THROW(DiffusionSchedule::from_arrays({1.0, 0.6}, {0.0, 0.7}), wl::ContractError);
}

TEST(Patchify, TokenCountsAndDivisibility) {
    DiTConfig cfg = small(Branches::kNone);
    cfg.latent_channels = 1;
    cfg.hidden = 8;
    cfg.num_blocks = 1;
    cfg.ctrl_blocks = 1;
    cfg.patch_s = 2;
    CamDiT m(cfg);
    EXPECT_EQ(m.patchify(Tensor::zeros({13, 30, 44, 2})).dim(0), 4290u);
    EXPECT_THROW(m.patchify(Tensor::zeros({13, 30, 45, 2})), wl::ShapeError);
}

TEST(Patchify, ZeroLatentGivesPositionalEncoding) {
    CamDiT m(small(Branches::kNone));
    auto tokens = m.patchify(Tensor::zeros({2, 4, 6, 24}));
    EXPECT_EQ(max_abs_diff(tokens, m.positional_encoding(2, 4, 6)), 0.0);
}

TEST(CameraEncoder, ZeroAtInitAndMatchesTokenCount) {
    CamDiT m(small());
    wl::Generator gen(2);
    auto in = random_inputs(m, gen);
    const std::size_t nv = m.patchify(wl::concat({in.z, in.cond}, 3)).dim(0);
    for (const char *branch : {"ctrl", "lora"}) {
        auto tok = m.encode_camera(in.plucker, branch);
        EXPECT_EQ(tok.dim(0), nv);
        for (float v : tok.data()) ASSERT_EQ(v, 0.0f) << branch;
    }
}

TEST(CameraEncoder, MismatchedRasterNamesFactors) {
    CamDiT m(small());
    try {
        m.encode_camera(cam::plucker_embed(walk(5, 9, 12), 9, 12), "ctrl");
        FAIL() << "expected ShapeError";
    } catch (const wl::ShapeError &e) {
        EXPECT_NE(std::string(e.what()).find("downsample"), std::string::npos);
    }
    EXPECT_THROW(m.encode_camera(cam::plucker_embed(walk(4, 8, 12), 8, 12), "lora"), wl::ShapeError);
}

TEST(CameraEncoder, NonzeroAfterOneStep) {
    CamDiT m(small());
    wl::Generator gen(3);
    auto in = random_inputs(m, gen);
    for (const char *branch : {"ctrl", "lora"}) {
        auto probe = wl::randn({48, 32}, gen);
        wl::nn::AdamW opt(m.parameters(), {});
        opt.zero_grad();
        wl::sum(m.encode_camera(in.plucker, branch) * probe).backward();
        opt.step(1e-3f);
        double mx = 0.0;
        for (float v : m.encode_camera(in.plucker, branch).data()) mx = std::max(mx, double(std::abs(v)));
        EXPECT_GT(mx, 0.0) << branch;
    }
}

TEST(FuseLora, IdentityAtInit) {
    CamDiT m(small());
    wl::Generator gen(5);
    for (int trial = 0; trial < 20; ++trial) {
        auto ov = wl::randn({48, 32}, gen, 3.0f), ol = wl::randn({48, 32}, gen, 3.0f);
        EXPECT_LT(max_abs_diff(m.fuse_lora(ov, ol), ov), 1e-6);
    }
    EXPECT_THROW(m.fuse_lora(wl::randn({48, 32}, gen), wl::randn({47, 32}, gen)), wl::ContractError);
}

TEST(FuseLora, ZeroLoraTokensUseTopBlockOnly) {
    CamDiT m(small());
    wl::Generator gen(6);
    for (auto &[name, t] : m.named_parameters())
        if (name.rfind("fuse.", 0) == 0)
            for (auto &v : const_cast<Tensor &>(t).mutable_data()) v += static_cast<float>(gen.normal() * 0.1);
    auto ov = wl::randn({48, 32}, gen);
    Tensor w, b;
    for (auto &[name, t] : m.named_parameters()) {
        if (name == "fuse.weight") w = t;
        if (name == "fuse.bias") b = t;
    }
    auto expect = wl::matmul(ov, wl::slice(w, 0, 0, 32)) + b;
    EXPECT_LT(max_abs_diff(m.fuse_lora(ov, Tensor::zeros({48, 32})), expect), 1e-5);
    EXPECT_GT(max_abs_diff(m.fuse_lora(ov, wl::randn({48, 32}, gen)), expect), 1e-3);
}

TEST(Forward, InitEquivalenceWithBaseModel) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        CamDiT dual(small(Branches::kDual, seed));
        CamDiT base(small(Branches::kNone, seed));
        wl::Generator gen(100 + seed);
        auto in = random_inputs(dual, gen);
        auto a = dual.forward(in.z, in.cond, in.plucker, in.y, in.tau);
        auto b = base.forward(in.z, in.cond, in.plucker, in.y, in.tau);
        auto c = dual.forward(in.z, in.cond, in.plucker, in.y, in.tau, false);
        EXPECT_EQ(a.shape(), in.z.shape());
        EXPECT_LT(max_abs_diff(a, b), 1e-5) << seed;
        EXPECT_LT(max_abs_diff(c, b), 1e-5) << seed;
        double mag = 0.0;
        for (float v : b.data()) mag = std::max(mag, double(std::abs(v)));
        EXPECT_GT(mag, 1e-2);
    }
}

TEST(Forward, LoraOnlyWithZeroAdaptersIsBase) {
    CamDiT lora(small(Branches::kLora, 3));
    CamDiT base(small(Branches::kNone, 3));
    wl::Generator gen(8);
    for (auto &[name, t] : lora.named_parameters())
        if (name.find("lora_") != std::string::npos) std::fill(const_cast<Tensor &>(t).mutable_data().begin(), const_cast<Tensor &>(t).mutable_data().end(), 0.0f);
    auto in = random_inputs(lora, gen);
    EXPECT_LT(max_abs_diff(lora.forward(in.z, in.cond, in.plucker, in.y, in.tau), base.forward(in.z, in.cond, in.plucker, in.y, in.tau)), 1e-5);
}

TEST(Forward, NonFiniteActivationNamesBlock) {
    CamDiT m(small(Branches::kNone));
    for (auto &[name, t] : m.named_parameters())
        if (name == "block2.fc1.bias") const_cast<Tensor &>(t).mutable_data()[0] = std::numeric_limits<float>::quiet_NaN();
    wl::Generator gen(9);
    auto in = random_inputs(m, gen);
    try {
        m.forward(in.z, in.cond, in.plucker, in.y, in.tau);
        FAIL() << "expected NumericError";
    } catch (const wl::NumericError &e) {
        EXPECT_NE(std::string(e.what()).find("block 2"), std::string::npos) << e.what();
    }
}

TEST(Training, UntrainedLossNearUnitVariance) {
    auto cfg = small();
    cfg.data_shift = 0.0f;
    cfg.data_scale = 1.0f;
    CamDiT m(cfg);
    wl::Generator gen(10);
    std::vector<wl::dit::DiTExample> batch;
    for (int i = 0; i < 4; ++i)
        batch.push_back({wl::randn({2, 4, 6, 12}, gen), wl::randn({1, 4, 6, 12}, gen), cam::plucker_embed(walk(5, 8, 12), 8, 12), Tensor()});
    const double loss = m.training_step(batch, gen);
    EXPECT_NEAR(loss, 1.0, 0.3);
    EXPECT_THROW(m.training_step({}, gen), wl::ContractError);
}

TEST(Training, FrozenBaseReceivesNoGradientAndPartitionIsDisjoint) {
    auto cfg = small();
    cfg.freeze_base = true;
    CamDiT m(cfg);
    wl::Generator gen(11);
    std::vector<wl::dit::DiTExample> batch{{wl::rand_uniform({2, 4, 6, 12}, gen), wl::rand_uniform({1, 4, 6, 12}, gen),
                                            cam::plucker_embed(walk(5, 8, 12), 8, 12), Tensor()}};
    m.training_step(batch, gen);
    const auto &base = m.base_parameter_names();
    const std::set<std::string> base_set(base.begin(), base.end());
    std::size_t lora = 0, ctrl = 0;
    for (auto &[name, t] : m.named_parameters()) {
        if (base_set.count(name)) {
            EXPECT_FALSE(t.requires_grad()) << name;
            EXPECT_FALSE(t.has_grad()) << name;
        }
    }
    for (auto &[name, t] : m.trainable_parameters()) {
        EXPECT_EQ(base_set.count(name), 0u) << name;
        lora += name.find("lora_") != std::string::npos;
        ctrl += name.rfind("ctrl.", 0) == 0;
    }
    EXPECT_EQ(lora, 4u * 4u * 2u);
    EXPECT_GT(ctrl, 0u);
}

TEST(Training, EveryBranchConfigurationTrains) {
    for (Branches b : {Branches::kLora, Branches::kCtrl, Branches::kDual}) {
        auto cfg = small(b);
        cfg.freeze_base = true;
        CamDiT m(cfg);
        wl::Generator gen(12);
        std::vector<wl::dit::DiTExample> batch{{wl::rand_uniform({2, 4, 6, 12}, gen), wl::rand_uniform({1, 4, 6, 12}, gen),
                                                cam::plucker_embed(walk(5, 8, 12), 8, 12), Tensor()}};
        wl::nn::AdamW opt(m.parameters(), {});
        for (int step = 0; step < 3; ++step) {
            opt.zero_grad();
            EXPECT_NO_THROW(m.training_step(batch, gen)) << to_string(b);
            opt.step(1e-3f);
        }
    }
}

TEST(Training, LossDecreasesOnRepeatedBatch) {
    CamDiT m(small());
    wl::Generator data(13);
    std::vector<wl::dit::DiTExample> batch{{wl::rand_uniform({2, 4, 6, 12}, data), wl::rand_uniform({1, 4, 6, 12}, data),
                                            cam::plucker_embed(walk(5, 8, 12), 8, 12), Tensor()}};
    wl::nn::AdamW opt(m.parameters(), {});
    wl::Generator gen(14);
    std::vector<double> losses;
    for (int step = 0; step < 200; ++step) {
        opt.zero_grad();
        losses.push_back(m.training_step(batch, gen));
        opt.step(2e-3f);
    }
    auto mean = [&](std::size_t a, std::size_t b) { return std::accumulate(losses.begin() + a, losses.begin() + b, 0.0) / double(b - a); };
    EXPECT_LT(mean(150, 200), mean(0, 50));
    EXPECT_LT(mean(100, 150), mean(50, 100));
}

TEST(Sample, ShapeFinitenessAndDeterminism) {
    CamDiT m(small());
    wl::Generator gen(15);
    auto first = wl::rand_uniform({1, 4, 6, 12}, gen);
    auto p = cam::plucker_embed(walk(5, 8, 12), 8, 12);
    auto a = m.sample(first, p, Tensor(), 1, 42);
    EXPECT_EQ(a.shape(), (wl::Shape{2, 4, 6, 12}));
    EXPECT_TRUE(a.all_finite());
    auto b = m.sample(first, p, Tensor(), 5, 42);
    auto c = m.sample(first, p, Tensor(), 5, 42);
    EXPECT_EQ(max_abs_diff(b, c), 0.0);
    m.set_weights_ready(false);
    EXPECT_THROW(m.sample(first, p, Tensor(), 1, 42), wl::StateError);
}
