#pragma once

#include "cropadapt/geometry.hpp"
#include "cropadapt/net.hpp"
#include "cropadapt/sim.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cropadapt {

enum class Stage1Mode { Auto, Force, Skip };
const char* stage1_mode_name(Stage1Mode m);
Stage1Mode stage1_mode_from_name(const std::string& name);

struct AdaptConfig {
    double gate_disp_threshold = 10.0;  // pixels
    double gate_fraction = 0.5;
    int stage1_batch_size = 64;
    double stage1_weight_decay = 0.01;
    double stage1_learning_rate = 1e-4;
    int stage1_max_steps = 60;
    double stage1_stop_loss = 1.0;  // pixels
    double lambda_v = 1.0;
    int pseudo_iterations = 5;
    double stage2_learning_rate = 1e-4;
    int stage2_epochs = 10;
    int stage2_batch_size = 16;
    double stage2_weight_decay = 1e-4;
    double heatmap_sigma = 2.0;
    double keypoint_weight = 0.3;
    bool flip_augment = true;
    ConstraintTolerances tolerances;
    std::uint64_t seed = 0;
    Stage1Mode stage1 = Stage1Mode::Auto;

    void validate() const;
};

struct GateResult {
    bool run_stage1 = false;
    double fraction = 0.0;
    std::vector<double> disparities;  // |u_vp(left) - u_vp(right)| per sample
};

// Decision from vp disparities alone: strictly more than `fraction` of the
// samples must exceed `threshold` strictly.
GateResult gate_from_disparities(std::vector<double> disparities, double threshold, double fraction);

GateResult vp_disparity_gate(Model& params, std::span<const StereoSample> set, const AdaptConfig& cfg);

struct Stage1Result {
    std::vector<double> loss_curve;  // batch loss per step, pixels
    bool early_stopped = false;
};

// Throws GateNotPassed unless the gate triggers or `force` is set.
Stage1Result stage1_adapt_vp(Model& params, std::span<const StereoSample> set, const AdaptConfig& cfg,
                             bool force = false);

// Roll from the IMU, pitch and yaw from the left-eye vanishing point.
Angles estimate_pose_from_vp(const CameraRig& rig, const PixelPoint& left_vp, double imu_roll);
Angles estimate_pose_for_sample(const CameraRig& rig, Model& params, const StereoSample& sample);

enum class LabelSource { Both, Left, Right };
const char* label_source_name(LabelSource s);

struct PseudoLabel {
    std::string sample_id;
    std::size_t sample_index = 0;
    LabelSource source = LabelSource::Both;
    KeypointTriple left;
    KeypointTriple right;
    ConstraintReport report;
    Angles angles;

    const KeypointTriple& label(Eye eye) const { return eye == Eye::Left ? left : right; }
};

// Applies the constraint rule to one pair of predictions. Returns nothing when
// neither eye passes, or when canonicalization or transfer is degenerate.
std::optional<PseudoLabel> pseudo_label_from_predictions(const CameraRig& rig, const GeometricPrior& prior,
                                                         const KeypointTriple& pred_left,
                                                         const KeypointTriple& pred_right, double imu_roll,
                                                         const ConstraintTolerances& tol);

std::vector<PseudoLabel> generate_pseudo_labels(const CameraRig& rig, const RowGeometry& rows, Model& params,
                                                std::span<const StereoSample> set, const AdaptConfig& cfg);

// First-decoder-conv activations of every image, plain and mirrored. Valid as
// long as the encoder and dec_block1 stay unchanged.
struct Stage2Cache {
    // [sample][eye][flipped]
    std::vector<std::array<std::array<std::vector<float>, 2>, 2>> c1;
    int c = 0, h = 0, w = 0;
    int image_width = 0;
};

Stage2Cache build_stage2_cache(Model& params, std::span<const StereoSample> set);

// Trains only head, dec_block2 and dec_block1_norm on both eyes' labels with
// flip augmentation. Frozen flags are restored on return.
void stage2_finetune(Model& params, std::span<const StereoSample> set, std::span<const PseudoLabel> labels,
                     const AdaptConfig& cfg, const Stage2Cache* cache = nullptr, std::uint64_t stream = 0);

struct AdaptIteration {
    std::size_t pseudo_labels = 0;
    std::size_t from_both = 0;
    std::size_t from_left = 0;
    std::size_t from_right = 0;
};

struct AdaptReport {
    bool stage1_ran = false;
    Stage1Mode stage1_mode = Stage1Mode::Auto;
    double gate_fraction = 0.0;
    double gate_median_disparity = 0.0;
    double stage1_median_disparity = 0.0;  // after stage 1, when it ran
    std::vector<double> stage1_loss;
    std::vector<AdaptIteration> iterations;
    std::vector<std::pair<std::string, double>> delta_norms;  // per group, whole pipeline

    std::string to_json() const;
    std::string to_csv() const;
};

// Optional hooks into a running pipeline; iterations count from 0.
struct AdaptObserver {
    std::function<void(const Model&)> after_stage1;  // also called when stage 1 is skipped
    std::function<void(int, std::span<const PseudoLabel>, const Model&)> on_labels;
    std::function<void(int, const Model&)> after_iteration;
};

AdaptReport adapt_pipeline(const CameraRig& rig, const RowGeometry& rows, Model& params,
                           std::span<const StereoSample> target_set, const AdaptConfig& cfg,
                           const AdaptObserver* observer = nullptr);

}  // namespace cropadapt
