#include "cropadapt/adapt.hpp"
#include "cropadapt/error.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

using namespace cropadapt;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

std::vector<StereoSample> samples(std::size_t n, std::uint64_t seed, const char* domain = "early_corn",
                                  SimOptions opts = {}) {
    return generate_samples(CameraRig{}, RowGeometry{}, domain_preset(domain), PoseRanges{}, n, seed, opts);
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an Error";
    return ErrorCode::InvalidArgument;
}

void expect_near(const KeypointTriple& a, const KeypointTriple& b, double tol) {
    EXPECT_NEAR(a.vp.u, b.vp.u, tol);
    EXPECT_NEAR(a.vp.v, b.vp.v, tol);
    EXPECT_NEAR(a.li.u, b.li.u, tol);
    EXPECT_NEAR(a.li.v, b.li.v, tol);
    EXPECT_NEAR(a.ri.u, b.ri.u, tol);
    EXPECT_NEAR(a.ri.v, b.ri.v, tol);
}

std::vector<Pose> random_poses(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Pose> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_pose(PoseRanges{}, rng));
    return out;
}

}  // namespace

TEST(Gate, CountingOracle) {
    std::vector<double> d(10, 3.0);
    for (int i = 0; i < 6; ++i) d[i] = 12.0;
    const GateResult g = gate_from_disparities(d, 10.0, 0.5);
    EXPECT_TRUE(g.run_stage1);
    EXPECT_DOUBLE_EQ(g.fraction, 0.6);
}

TEST(Gate, StrictThreshold) {
    const GateResult g = gate_from_disparities(std::vector<double>(8, 10.0), 10.0, 0.5);
    EXPECT_FALSE(g.run_stage1);
    EXPECT_EQ(g.fraction, 0.0);
}

TEST(Gate, StrictFraction) {
    std::vector<double> d{11, 11, 0, 0};
    EXPECT_FALSE(gate_from_disparities(d, 10.0, 0.5).run_stage1);
}

TEST(Gate, GroundTruthVpHasZeroDisparity) {
    std::vector<double> d;
    for (const StereoSample& s : samples(20, 3)) d.push_back(std::abs(s.gt_left.vp.u - s.gt_right.vp.u));
    const GateResult g = gate_from_disparities(d, 10.0, 0.5);
    EXPECT_EQ(g.fraction, 0.0);
    EXPECT_FALSE(g.run_stage1);
}

TEST(Gate, EmptySet) {
    EXPECT_EQ(code_of([] { gate_from_disparities({}, 10, 0.5); }), ErrorCode::EmptyDataset);
    Model m = init_params<float>(Architecture{}, 1);
    EXPECT_EQ(code_of([&] { vp_disparity_gate(m, {}, AdaptConfig{}); }), ErrorCode::EmptyDataset);
}

TEST(Stage1, VerticalTermVanishesOnRectifiedGroundTruth) {
    for (const StereoSample& s : samples(20, 4)) EXPECT_EQ(s.gt_left.vp.v, s.gt_right.vp.v);
}

TEST(Stage1, RefusesWithoutGateUnlessForced) {
    Model m = init_params<float>(Architecture{}, 1);
    const auto set = samples(4, 5);
    AdaptConfig cfg;
    cfg.gate_disp_threshold = 1e9;
    EXPECT_EQ(code_of([&] { stage1_adapt_vp(m, set, cfg); }), ErrorCode::GateNotPassed);
}

TEST(Stage1, EarlyStopLeavesParamsUnchanged) {
    Model m = init_params<float>(Architecture{}, 1);
    m.set_frozen(ParamGroup::Encoder, true);
    const Model before = m;
    const auto set = samples(4, 5);
    AdaptConfig cfg;
    cfg.stage1_stop_loss = 1e9;
    const Stage1Result r = stage1_adapt_vp(m, set, cfg, true);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(r.loss_curve.size(), 1u);
    EXPECT_EQ(m.tensors, before.tensors);
}

TEST(Stage1, StepsReduceDisparityLossAndKeepEncoder) {
    Model m = init_params<float>(Architecture{}, 2);
    m.set_frozen(ParamGroup::Encoder, true);
    const Model before = m;
    const auto set = samples(8, 6);
    AdaptConfig cfg;
    cfg.stage1_max_steps = 6;
    cfg.stage1_stop_loss = 0.0;
    cfg.stage1_learning_rate = 1e-3;
    const Stage1Result r = stage1_adapt_vp(m, set, cfg, true);
    ASSERT_EQ(r.loss_curve.size(), 6u);
    EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
    for (int id = kEnc1W; id <= kEnc3B; ++id) EXPECT_EQ(m.tensors[id], before.tensors[id]);
    EXPECT_NE(m.tensors[kHeadW], before.tensors[kHeadW]);
}

TEST(PoseEstimate, GroundTruthVpRecoversAngles) {
    const CameraRig rig;
    for (const Pose& p : random_poses(200, 7)) {
        const KeypointTriple gt = gt_keypoints(rig, p, RowGeometry{}, Eye::Left);
        const Angles a = estimate_pose_from_vp(rig, gt.vp, p.roll);
        EXPECT_NEAR(a.roll, p.roll, 1e-12);
        EXPECT_NEAR(a.pitch, p.pitch, 1e-9);
        EXPECT_NEAR(a.yaw, p.yaw, 1e-9);
    }
}

TEST(PoseEstimate, PrincipalPointIsZeroPose) {
    const CameraRig rig;
    const Angles a = estimate_pose_from_vp(rig, {rig.cx, rig.cy}, 0.0);
    EXPECT_NEAR(a.pitch, 0.0, 1e-15);
    EXPECT_NEAR(a.yaw, 0.0, 1e-15);
}

TEST(PoseEstimate, ImuNoiseInducedErrorIsBounded) {
    const CameraRig rig;
    std::mt19937_64 rng(8);
    std::normal_distribution<double> noise(0.0, 0.2 * kDeg);
    double worst = 0.0;
    for (const Pose& p : random_poses(1000, 9)) {
        const KeypointTriple gt = gt_keypoints(rig, p, RowGeometry{}, Eye::Left);
        const Angles a = estimate_pose_from_vp(rig, gt.vp, p.roll + noise(rng));
        worst = std::max({worst, std::abs(a.pitch - p.pitch), std::abs(a.yaw - p.yaw)});
    }
    EXPECT_LT(worst, 0.6 * kDeg);
}

TEST(PseudoLabels, GroundTruthPredictionsReproduceGroundTruth) {
    const CameraRig rig;
    const GeometricPrior prior = compute_prior(rig, RowGeometry{});
    int count = 0;
    for (const Pose& p : random_poses(500, 10)) {
        const KeypointTriple l = gt_keypoints(rig, p, RowGeometry{}, Eye::Left);
        const KeypointTriple r = gt_keypoints(rig, p, RowGeometry{}, Eye::Right);
        const auto pl = pseudo_label_from_predictions(rig, prior, l, r, p.roll, ConstraintTolerances{});
        ASSERT_TRUE(pl.has_value());
        EXPECT_EQ(pl->source, LabelSource::Both);
        EXPECT_TRUE(pl->report.passed);
        expect_near(pl->left, l, 1e-6);
        expect_near(pl->right, r, 1e-6);
        ++count;
    }
    EXPECT_EQ(count, 500);
}

TEST(PseudoLabels, DisplacedInterceptInBothEyesIsRejected) {
    const CameraRig rig;
    const GeometricPrior prior = compute_prior(rig, RowGeometry{});
    for (const Pose& p : random_poses(50, 11)) {
        KeypointTriple l = gt_keypoints(rig, p, RowGeometry{}, Eye::Left);
        KeypointTriple r = gt_keypoints(rig, p, RowGeometry{}, Eye::Right);
        const double shift = 0.3 * prior.base_width;
        l.ri.u += shift;
        r.ri.u += shift;
        EXPECT_FALSE(pseudo_label_from_predictions(rig, prior, l, r, p.roll, ConstraintTolerances{}).has_value());
    }
}

TEST(PseudoLabels, LeftPassRightGarbageUsesTransfer) {
    const CameraRig rig;
    const GeometricPrior prior = compute_prior(rig, RowGeometry{});
    for (const Pose& p : random_poses(50, 12)) {
        const KeypointTriple l = gt_keypoints(rig, p, RowGeometry{}, Eye::Left);
        const KeypointTriple garbage{{40, 90}, {150, 119}, {155, 119}};
        const auto pl = pseudo_label_from_predictions(rig, prior, l, garbage, p.roll, ConstraintTolerances{});
        ASSERT_TRUE(pl.has_value());
        EXPECT_EQ(pl->source, LabelSource::Left);
        expect_near(pl->left, l, 1e-6);
        const Angles a = estimate_pose_from_vp(rig, l.vp, p.roll);
        expect_near(pl->right, transfer_to_other_eye(rig, pl->left, a, Eye::Left), 1e-6);
    }
}

TEST(PseudoLabels, RightPassLeftGarbageUsesTransfer) {
    const CameraRig rig;
    const GeometricPrior prior = compute_prior(rig, RowGeometry{});
    for (const Pose& p : random_poses(50, 13)) {
        const KeypointTriple l = gt_keypoints(rig, p, RowGeometry{}, Eye::Left);
        const KeypointTriple r = gt_keypoints(rig, p, RowGeometry{}, Eye::Right);
        // Left intercepts are broken but its vp (used for pose) is intact.
        KeypointTriple bad = l;
        bad.li.u = bad.ri.u - 5.0;
        const auto pl = pseudo_label_from_predictions(rig, prior, bad, r, p.roll, ConstraintTolerances{});
        ASSERT_TRUE(pl.has_value());
        EXPECT_EQ(pl->source, LabelSource::Right);
        expect_near(pl->right, r, 1e-6);
        expect_near(pl->left, l, 1e-6);
    }
}

TEST(Stage2, OnlyAdaptableGroupsChange) {
    Model m = init_params<float>(Architecture{}, 3);
    m.set_frozen(ParamGroup::Encoder, true);
    const Model before = m;
    const auto set = samples(6, 14);
    std::vector<PseudoLabel> labels;
    for (std::size_t i = 0; i < set.size(); ++i) {
        PseudoLabel pl;
        pl.sample_id = set[i].id;
        pl.sample_index = i;
        pl.left = set[i].gt_left;
        pl.right = set[i].gt_right;
        labels.push_back(pl);
    }
    AdaptConfig cfg;
    cfg.stage2_epochs = 2;
    cfg.stage2_batch_size = 4;
    stage2_finetune(m, set, labels, cfg);
    const auto info = m.arch.layout();
    for (int id = 0; id < kNumParams; ++id) {
        const ParamGroup g = info[id].group;
        if (g == ParamGroup::Encoder || g == ParamGroup::DecBlock1)
            EXPECT_EQ(m.tensors[id], before.tensors[id]) << info[id].name;
        else
            EXPECT_NE(m.tensors[id], before.tensors[id]) << info[id].name;
    }
    EXPECT_EQ(m.frozen, before.frozen);
}

TEST(Stage2, ZeroEpochsIsIdentity) {
    Model m = init_params<float>(Architecture{}, 3);
    const Model before = m;
    const auto set = samples(2, 15);
    PseudoLabel pl;
    pl.sample_id = set[0].id;
    pl.left = set[0].gt_left;
    pl.right = set[0].gt_right;
    AdaptConfig cfg;
    cfg.stage2_epochs = 0;
    stage2_finetune(m, set, std::vector<PseudoLabel>{pl}, cfg);
    EXPECT_EQ(m.tensors, before.tensors);
}

TEST(Stage2, EmptyLabels) {
    Model m = init_params<float>(Architecture{}, 3);
    const auto set = samples(2, 15);
    EXPECT_EQ(code_of([&] { stage2_finetune(m, set, {}, AdaptConfig{}); }), ErrorCode::EmptyPseudoLabels);
}

Model quick_source_model() {
    static const Model trained = [] {
        const auto src = samples(48, 20);
        std::vector<LabeledImage> data;
        for (const StereoSample& s : src) data.push_back({&s.left, s.gt_left});
        Model m = init_params<float>(Architecture{}, 4);
        TrainConfig tc;
        tc.epochs = 4;
        tc.batch_size = 16;
        tc.learning_rate = 3e-3;
        train_source(m, data, tc);
        return m;
    }();
    return trained;
}

AdaptConfig permissive_config() {
    AdaptConfig cfg;
    cfg.pseudo_iterations = 2;
    cfg.stage2_epochs = 1;
    cfg.tolerances = {1e6, 1e6, 1e6};
    return cfg;
}

TEST(Pipeline, UntrainedNetworkYieldsNoLabels) {
    const auto set = samples(3, 17);
    Model m = init_params<float>(Architecture{}, 4);
    AdaptConfig cfg = permissive_config();
    cfg.stage1 = Stage1Mode::Skip;
    EXPECT_EQ(code_of([&] { adapt_pipeline(CameraRig{}, RowGeometry{}, m, set, cfg); }),
              ErrorCode::EmptyPseudoLabels);
}

TEST(Pipeline, DeterministicWithReport) {
    const auto set = samples(6, 16);
    AdaptConfig cfg = permissive_config();
    cfg.stage1 = Stage1Mode::Force;
    cfg.stage1_max_steps = 2;
    cfg.stage1_stop_loss = 0.0;
    Model a = quick_source_model(), b = quick_source_model();
    const Model before = a;
    const AdaptReport ra = adapt_pipeline(CameraRig{}, RowGeometry{}, a, set, cfg);
    const AdaptReport rb = adapt_pipeline(CameraRig{}, RowGeometry{}, b, set, cfg);
    EXPECT_EQ(a.tensors, b.tensors);
    EXPECT_TRUE(ra.stage1_ran);
    EXPECT_EQ(ra.stage1_loss.size(), 2u);
    ASSERT_EQ(ra.iterations.size(), 2u);
    EXPECT_GT(ra.iterations[0].pseudo_labels, 0u);
    EXPECT_EQ(ra.to_json(), rb.to_json());
    EXPECT_EQ(ra.to_csv(), rb.to_csv());
    for (int id = kEnc1W; id <= kEnc3B; ++id) EXPECT_EQ(a.tensors[id], before.tensors[id]);
    EXPECT_EQ(a.frozen, before.frozen);
}

TEST(Pipeline, SkipModeNeverRunsStageOne) {
    const auto set = samples(3, 17);
    Model m = quick_source_model();
    AdaptConfig cfg = permissive_config();
    cfg.stage1 = Stage1Mode::Skip;
    cfg.gate_disp_threshold = 0.0;
    cfg.gate_fraction = 1e-9;
    cfg.pseudo_iterations = 1;
    cfg.stage2_epochs = 0;
    const AdaptReport r = adapt_pipeline(CameraRig{}, RowGeometry{}, m, set, cfg);
    EXPECT_FALSE(r.stage1_ran);
    EXPECT_TRUE(r.stage1_loss.empty());
}

TEST(AdaptConfig, Validation) {
    AdaptConfig c;
    c.gate_fraction = 0.0;
    EXPECT_THROW(c.validate(), Error);
    c = AdaptConfig{};
    c.pseudo_iterations = 0;
    EXPECT_THROW(c.validate(), Error);
    c = AdaptConfig{};
    c.gate_disp_threshold = -1;
    EXPECT_THROW(c.validate(), Error);
}
