#include "cropadapt/error.hpp"
#include "cropadapt/net.hpp"
#include "cropadapt/sim.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cropadapt;

namespace {

using cropadapt::testing::fill_random;
using cropadapt::testing::rel_err;
using cropadapt::testing::tiny_arch;

void check_network_gradients(Entry entry, const std::array<bool, kNumGroups>& frozen) {
    const auto r = cropadapt::testing::network_gradient_check(entry, frozen);
    EXPECT_GT(r.checked, 0);
    EXPECT_TRUE(r.frozen_zero);
    EXPECT_LT(r.max_error, 1e-4);
}

std::vector<StereoSample> small_source(std::size_t n, std::uint64_t seed) {
    return generate_samples(cropadapt::testing::example_rig(), cropadapt::testing::example_rows(), domain_preset("early_corn"), PoseRanges{}, n,
                            seed);
}

}  // namespace

TEST(Layers, ConvGradientMatchesFiniteDifferences) {
    EXPECT_LT(cropadapt::testing::conv_gradient_error(), 1e-4);
}

TEST(Layers, BatchNormGradientMatchesFiniteDifferences) {
    EXPECT_LT(cropadapt::testing::batchnorm_gradient_error(), 1e-4);
}

TEST(Layers, BatchNormRunningStatsOnlyWhenRequested) {
    Tensor4<double> in, out;
    in.resize(2, 1, 1, 2);
    in.data = {1, 2, 3, 4};
    std::vector<double> gamma{1}, beta{0}, mean{0}, var{1};
    BatchNormCache<double> cache;
    batchnorm_train_forward<double>(in, gamma, beta, {}, {}, out, cache);
    EXPECT_EQ(mean[0], 0.0);
    batchnorm_train_forward<double>(in, gamma, beta, mean, var, out, cache);
    EXPECT_NEAR(mean[0], 0.1 * 2.5, 1e-12);
    // unbiased variance of {1,2,3,4} is 5/3
    EXPECT_NEAR(var[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);
}

TEST(Layers, UpsampleBackwardIsAdjoint) {
    std::mt19937_64 rng(4);
    Tensor4<double> x, y, dy, dx;
    x.resize(1, 2, 3, 4);
    fill_random(x.data, rng);
    upsample2x_forward(x, y);
    dy = y;
    fill_random(dy.data, rng);
    upsample2x_backward(dy, dx);
    double lhs = 0, rhs = 0;
    for (std::size_t k = 0; k < y.size(); ++k) lhs += y.data[k] * dy.data[k];
    for (std::size_t k = 0; k < x.size(); ++k) rhs += x.data[k] * dx.data[k];
    EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Network, GradientsAllGroupsFromImage) { check_network_gradients(Entry::Image, {}); }

TEST(Network, GradientsDecoderFromFeatures) {
    check_network_gradients(Entry::Features, {true, false, false, false, false});
}

TEST(Network, GradientsStageTwoGroupsFromDec1Conv) {
    check_network_gradients(Entry::Dec1Conv, {true, true, false, false, false});
}

TEST(Network, GradientsHeadOnly) { check_network_gradients(Entry::Image, {true, true, true, true, false}); }

TEST(Network, OutputIsHalfResolution) {
    Model m = init_params<float>(Architecture{}, 1);
    Image img(160, 120);
    const Image* imgs[1] = {&img};
    const Tensor4<float> hm = predict_heatmaps(m, imgs);
    EXPECT_EQ(hm.n, 1);
    EXPECT_EQ(hm.c, 3);
    EXPECT_EQ(hm.h, 60);
    EXPECT_EQ(hm.w, 80);
}

TEST(Network, ZeroImageGivesFiniteOutput) {
    Model m = init_params<float>(Architecture{}, 5);
    Image img(160, 120);
    const Image* imgs[1] = {&img};
    for (float v : predict_heatmaps(m, imgs).data) ASSERT_TRUE(std::isfinite(v));
}

TEST(Network, InferenceIsDeterministic) {
    Model m = init_params<float>(Architecture{}, 9);
    const auto s = small_source(1, 3);
    const Image* imgs[1] = {&s[0].left};
    const auto a = predict_heatmaps(m, imgs);
    const auto b = predict_heatmaps(m, imgs);
    EXPECT_EQ(a.data, b.data);
}

TEST(Network, RejectsBadShapes) {
    Model m = init_params<float>(Architecture{}, 1);
    Image img(30, 20);
    const Image* imgs[1] = {&img};
    try {
        predict_heatmaps(m, imgs);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(Network, ComputeEntryMatchesFullForward) {
    Model m = init_params<float>(Architecture{}, 2);
    const auto s = small_source(3, 4);
    const Image* imgs[3] = {&s[0].left, &s[1].left, &s[2].left};
    const auto full = predict_heatmaps(m, imgs);
    for (Entry e : {Entry::Features, Entry::Dec1Conv}) {
        Activations<float> act;
        act.entry = e;
        (e == Entry::Features ? act.a3 : act.c1) = compute_entry(m, imgs, e);
        forward(m, act, NormMode::Inference);
        EXPECT_EQ(act.logits.data, full.data);
    }
}

TEST(SoftArgmax, OneHot) {
    std::vector<double> s(6 * 8, -1e9);
    s[4 * 8 + 5] = 10.0;
    const PixelPoint p = soft_argmax<double>(s, 6, 8);
    EXPECT_DOUBLE_EQ(p.u, 10.0);
    EXPECT_DOUBLE_EQ(p.v, 8.0);
}

TEST(SoftArgmax, UniformGivesCenter) {
    std::vector<double> s(60 * 80, 0.3);
    const PixelPoint p = soft_argmax<double>(s, 60, 80);
    EXPECT_NEAR(p.u, 79.0, 1e-9);
    EXPECT_NEAR(p.v, 59.0, 1e-9);
}

TEST(SoftArgmax, SymmetricPeaksGiveCenter) {
    std::vector<double> s(5 * 9, -1e9);
    s[2 * 9 + 1] = 5.0;
    s[2 * 9 + 7] = 5.0;
    const PixelPoint p = soft_argmax<double>(s, 5, 9);
    EXPECT_NEAR(p.u, 8.0, 1e-9);
    EXPECT_NEAR(p.v, 4.0, 1e-9);
}

TEST(SoftArgmax, GradientMatchesFiniteDifferences) {
    EXPECT_LT(cropadapt::testing::soft_argmax_gradient_error(), 1e-4);
}

TEST(Targets, PeakAtRoundedLocation) {
    std::vector<float> t(3 * 60 * 80);
    const KeypointTriple kp{{80.6, 41.2}, {20.0, 119.0}, {140.0, 119.0}};
    const TargetFlags f = render_target_heatmaps(kp, 2.0, 60, 80, t);
    EXPECT_FALSE(f.clamped[0]);
    // vp maps to (40.3, 20.6) -> rounded cell (40, 21)
    EXPECT_EQ(t[21 * 80 + 40], 1.0f);
    for (float v : t) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Targets, GaussianFalloff) {
    std::vector<float> t(3 * 60 * 80);
    const KeypointTriple kp{{80, 40}, {20, 100}, {140, 100}};
    render_target_heatmaps(kp, 2.0, 60, 80, t);
    EXPECT_NEAR(t[20 * 80 + 42], std::exp(-0.5), 1e-7);  // float storage
    EXPECT_NEAR(t[22 * 80 + 40], std::exp(-0.5), 1e-7);
}

TEST(Targets, OffImageInterceptIsClamped) {
    std::vector<float> t(3 * 60 * 80);
    const KeypointTriple kp{{80, 40}, {-20, 119}, {140, 119}};
    const TargetFlags f = render_target_heatmaps(kp, 2.0, 60, 80, t);
    EXPECT_TRUE(f.clamped[1]);
    EXPECT_FALSE(f.clamped[2]);
    const float* li = t.data() + 60 * 80;
    // v = 119 -> 59.5 rounds to 60 which also clamps to the last row
    EXPECT_EQ(li[59 * 80 + 0], 1.0f);
}

TEST(HeatmapLoss, LogitOfTargetIsNearZero) {
    std::mt19937_64 rng(7);
    Tensor4<double> target, pred;
    target.resize(1, 3, 6, 8);
    fill_random(target.data, rng, 0.0, 1.0);
    pred = target;
    for (double& x : pred.data) {
        const double c = std::clamp(x, 1e-6, 1 - 1e-6);
        x = std::log(c / (1 - c));
    }
    EXPECT_LT(heatmap_loss<double>(pred, target, nullptr), 1e-6);
}

TEST(HeatmapLoss, GradientMatchesFiniteDifferences) {
    EXPECT_LT(cropadapt::testing::heatmap_loss_gradient_error(), 1e-4);
}

TEST(HeatmapLoss, NonNegativeOnRandomInputs) {
    std::mt19937_64 rng(9);
    Tensor4<double> target, pred;
    target.resize(2, 3, 4, 5);
    pred.resize(2, 3, 4, 5);
    for (int trial = 0; trial < 200; ++trial) {
        fill_random(target.data, rng, 0.0, 1.0);
        fill_random(pred.data, rng, -20.0, 20.0);
        EXPECT_GE(heatmap_loss<double>(pred, target, nullptr), 0.0);
    }
}

TEST(HeatmapLoss, ShapeMismatchThrows) {
    Tensor4<double> a, b;
    a.resize(1, 3, 6, 8);
    b.resize(1, 3, 6, 7);
    EXPECT_THROW(heatmap_loss<double>(a, b, nullptr), Error);
}

TEST(KeypointLoss, GradientMatchesFiniteDifferences) {
    EXPECT_LT(cropadapt::testing::keypoint_loss_gradient_error(), 1e-4);
}

TEST(Flip, DoubleFlipIsIdentity) {
    const auto s = small_source(1, 11);
    const FlippedSample once = flip_augment(s[0].left, s[0].gt_left);
    const FlippedSample twice = flip_augment(once.image, once.label);
    EXPECT_EQ(twice.image, s[0].left);
    EXPECT_NEAR(twice.label.vp.u, s[0].gt_left.vp.u, 1e-12);
    EXPECT_NEAR(twice.label.li.u, s[0].gt_left.li.u, 1e-12);
    EXPECT_NEAR(twice.label.ri.u, s[0].gt_left.ri.u, 1e-12);
    EXPECT_EQ(twice.label.li.v, s[0].gt_left.li.v);
}

TEST(Flip, CenteredVpIsFixed) {
    const KeypointTriple t{{79.5, 30.0}, {10, 119}, {150, 119}};
    const KeypointTriple f = flip_triple(t, 160);
    EXPECT_DOUBLE_EQ(f.vp.u, 79.5);
    EXPECT_DOUBLE_EQ(f.vp.v, 30.0);
}

TEST(Flip, InterceptsSwapRoles) {
    const KeypointTriple t{{80, 30}, {5.2667, 119}, {150, 119}};
    const KeypointTriple f = flip_triple(t, 160);
    EXPECT_NEAR(f.ri.u, 153.7333, 1e-9);
    EXPECT_EQ(f.ri.v, 119.0);
    EXPECT_NEAR(f.li.u, 9.0, 1e-9);
    EXPECT_LT(f.li.u, f.ri.u);
}

TEST(ColorJitter, StaysInUnitRangeAndIsSeeded) {
    std::mt19937_64 fill(5);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    std::vector<float> img(3 * 12 * 10);
    for (float& x : img) x = d(fill);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> a = img, b = img;
        std::mt19937_64 ra(trial), rb(trial);
        photometric_jitter(a, ra);
        photometric_jitter(b, rb);
        EXPECT_EQ(a, b);
        for (float x : a) {
            EXPECT_GE(x, 0.0f);
            EXPECT_LE(x, 1.0f);
        }
    }
}

TEST(ColorJitter, ConstantGrayStaysUniform) {
    std::vector<float> img(3 * 8 * 8, 0.5f);
    std::mt19937_64 rng(9);
    photometric_jitter(img, rng);
    // a uniform image keeps one value per channel: no spatial structure is invented
    for (int c = 0; c < 3; ++c)
        for (int i = 1; i < 64; ++i) EXPECT_FLOAT_EQ(img[c * 64 + i], img[c * 64]);
}

TEST(Optimizer, FrozenGroupsAreBitIdentical) {
    Model m = init_params<float>(Architecture{}, 12);
    m.set_frozen(ParamGroup::Encoder, true);
    m.set_frozen(ParamGroup::DecBlock1, true);
    const Model before = m;
    Gradients<float> g = zero_gradients(m);
    std::mt19937_64 rng(1);
    for (auto& t : g) fill_random(t, rng);
    AdamState st;
    for (int i = 0; i < 3; ++i) adamw_step(m, g, st, 1e-2, 0.01);
    const auto info = m.arch.layout();
    for (int id = 0; id < kNumParams; ++id) {
        const bool frozen = m.is_frozen(info[id].group) || info[id].buffer;
        if (frozen)
            EXPECT_EQ(m.tensors[id], before.tensors[id]) << info[id].name;
        else
            EXPECT_NE(m.tensors[id], before.tensors[id]) << info[id].name;
    }
}

TEST(TrainSource, ZeroEpochsOnlyChangesFlags) {
    Model m = init_params<float>(Architecture{}, 13);
    const Model before = m;
    const auto s = small_source(4, 1);
    std::vector<LabeledImage> data;
    for (const auto& x : s) data.push_back({&x.left, x.gt_left});
    TrainConfig cfg;
    cfg.epochs = 0;
    const TrainResult r = train_source(m, data, cfg);
    EXPECT_TRUE(r.epoch_loss.empty());
    EXPECT_EQ(m.tensors, before.tensors);
    EXPECT_TRUE(m.is_frozen(ParamGroup::Encoder));
    EXPECT_FALSE(m.is_frozen(ParamGroup::Head));
}

TEST(TrainSource, EmptyDatasetThrows) {
    Model m = init_params<float>(Architecture{}, 13);
    try {
        train_source(m, {}, TrainConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyDataset);
    }
}

TEST(TrainSource, DeterministicAndLossDecreases) {
    const auto s = small_source(16, 2);
    std::vector<LabeledImage> data;
    for (const auto& x : s) data.push_back({&x.left, x.gt_left});
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.seed = 5;
    Model a = init_params<float>(Architecture{}, 21);
    Model b = a;
    const TrainResult ra = train_source(a, data, cfg);
    const TrainResult rb = train_source(b, data, cfg);
    EXPECT_EQ(a.tensors, b.tensors);
    EXPECT_EQ(ra.epoch_loss, rb.epoch_loss);
    ASSERT_EQ(ra.epoch_loss.size(), 4u);
    EXPECT_LT(ra.epoch_loss.back(), ra.epoch_loss.front());
}

TEST(TrainConfig, RejectsNonPositive) {
    TrainConfig c;
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), Error);
    c = TrainConfig{};
    c.learning_rate = 0;
    EXPECT_THROW(c.validate(), Error);
    c = TrainConfig{};
    c.optimizer = "lbfgs";
    EXPECT_THROW(c.validate(), Error);
}
