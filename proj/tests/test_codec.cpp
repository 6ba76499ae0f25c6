#include <gtest/gtest.h>

#include <chrono>
#include <cstring>

#include "wonderland/codec/codec.hpp"

namespace wl = wonderland;
namespace codec = wonderland::codec;
using wl::Tensor;

namespace {

codec::Video random_video(std::size_t T, std::size_t H, std::size_t W, std::uint64_t seed) {
    wl::Generator gen(seed);
    return {wl::rand_uniform({T, H, W, 3}, gen)};
}

/// Smooth drifting color field, the kind of content the desk scenes produce.
codec::Video smooth_video(std::size_t T, std::size_t H, std::size_t W) {
    std::vector<float> v(T * H * W * 3);
    for (std::size_t f = 0; f < T; ++f)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double u = (x + 0.7 * f) / W, s = static_cast<double>(y) / H;
                float *p = v.data() + ((f * H + y) * W + x) * 3;
                p[0] = static_cast<float>(0.5 + 0.35 * std::sin(6.0 * u + 1.0));
                p[1] = static_cast<float>(0.5 + 0.3 * std::cos(4.0 * s + 3.0 * u));
                p[2] = static_cast<float>(0.3 + 0.4 * s * u);
            }
    return {Tensor({T, H, W, 3}, std::move(v))};
}

double psnr(const Tensor &a, const Tensor &b) {
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) se += std::pow(double(a.at(i)) - b.at(i), 2);
    return 10.0 * std::log10(1.0 / std::max(se / a.numel(), 1e-20));
}

bool bit_equal(const Tensor &a, const Tensor &b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace

TEST(Lossless, SingleBlockShape) {
    codec::LosslessCodec c;
    auto z = c.encode(random_video(1, 8, 8, 1));
    EXPECT_EQ(z.data.shape(), (wl::Shape{1, 1, 1, 768}));
    EXPECT_EQ(z.codec_id, c.id());
}

TEST(Lossless, DivisibilityErrorsNameTheAxis) {
    codec::LosslessCodec c;
    try {
        c.encode({Tensor::zeros({50, 8, 8, 3})});
        FAIL();
    } catch (const wl::ShapeError &e) {
        EXPECT_NE(std::string(e.what()).find("time"), std::string::npos);
    }
    try {
        c.encode({Tensor::zeros({5, 8, 12, 3})});
        FAIL();
    } catch (const wl::ShapeError &e) {
        EXPECT_NE(std::string(e.what()).find("width"), std::string::npos);
    }
}

TEST(Lossless, RoundTripIsBitExactOverShapeGrid) {
    codec::LosslessCodec c;
    std::uint64_t seed = 0;
    for (std::size_t T : {1, 5, 9, 49})
        for (std::size_t H : {8, 16, 32})
            for (std::size_t W : {8, 16, 32}) {
                auto v = random_video(T, H, W, ++seed);
                auto z = c.encode(v);
                EXPECT_EQ(z.data.shape(), (wl::Shape{1 + (T - 1) / 4, H / 8, W / 8, 768}));
                EXPECT_TRUE(bit_equal(c.decode(z).data, v.data)) << T << "x" << H << "x" << W;
            }
}

TEST(Lossless, FirstGroupReplicatesFrameZero) {
    codec::LosslessCodec c;
    auto z = c.encode(random_video(5, 8, 8, 4));
    const float *g0 = z.data.data().data();
    for (std::size_t slot = 1; slot < 4; ++slot)
        EXPECT_EQ(0, std::memcmp(g0, g0 + slot * 192, 192 * sizeof(float)));
}

TEST(Lossless, ZeroLatentDecodesToZeroVideo) {
    codec::LosslessCodec c;
    auto v = c.decode({Tensor::zeros({13, 2, 3, 768}), c.id(), c.rates()});
    EXPECT_EQ(v.data.shape(), (wl::Shape{49, 16, 24, 3}));
    for (float x : v.data.data()) EXPECT_EQ(x, 0.0f);
}

TEST(Lossless, DecodeRejectsForeignLatent) {
    codec::LosslessCodec c;
    EXPECT_THROW(c.decode({Tensor::zeros({1, 1, 1, 768}), "other", c.rates()}), wl::ContractError);
}

TEST(Lossless, EncodeIsLinear) {
    codec::LosslessCodec c;
    auto v = random_video(9, 16, 8, 12);
    auto a = c.encode(v).data;
    auto b = c.encode({wl::scale(v.data, 0.37f)}).data;
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(b.at(i), a.at(i) * 0.37f);
}

TEST(Lossless, CompressionRatio) {
    codec::LosslessCodec c;
    for (std::size_t T : {13, 17, 49}) {
        const std::size_t t = 1 + (T - 1) / 4;
        const std::size_t H = 32, W = 48;
        EXPECT_LE(t * (H / 8) * (W / 8) * 192, T * H * W) << "T=" << T;
    }
}

TEST(Learned, EmptyDatasetIsContractError) {
    codec::LearnedCodec lc({});
    EXPECT_THROW(codec::train_learned_codec(lc, {}), wl::ContractError);
}

TEST(Learned, LatentGeometryMatchesLossless) {
    codec::LearnedCodec lc({});
    auto z = lc.encode(smooth_video(9, 16, 24));
    EXPECT_EQ(z.data.shape(), (wl::Shape{3, 2, 3, 16}));
    EXPECT_EQ(lc.decode(z).data.shape(), (wl::Shape{9, 16, 24, 3}));
    EXPECT_THROW(lc.decode({z.data, "lossless-s2d", z.rates}), wl::ContractError);
}

TEST(Learned, OverfitsOneVideo) {
    codec::LearnedCodec lc({});
    auto v = smooth_video(9, 32, 48);
    auto curve = codec::train_learned_codec(lc, {v}, {.steps = 500});
    const double p = psnr(lc.decode(lc.encode(v)).data, v.data);
    RecordProperty("psnr", std::to_string(p));
    EXPECT_GE(p, 25.0);
    double first = 0, last = 0;
    for (int i = 0; i < 50; ++i) {
        first += curve[i];
        last += curve[curve.size() - 50 + i];
    }
    EXPECT_LT(last, first);
}

TEST(Learned, FullCapacityReachesHighFidelity) {
    codec::LearnedCodec lc({.channels = 768, .hidden = 8, .rates = {}});
    auto v = smooth_video(5, 16, 16);
    codec::train_learned_codec(lc, {v}, {.steps = 400, .lr = 3e-3f});
    const double p = psnr(lc.decode(lc.encode(v)).data, v.data);
    RecordProperty("psnr", std::to_string(p));
    EXPECT_GE(p, 40.0);
}
