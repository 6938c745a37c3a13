#pragma once

#include "cropadapt/geometry.hpp"
#include "cropadapt/image.hpp"
#include "cropadapt/layers.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cropadapt {

// Keypoint channel order is fixed.
constexpr int kVp = 0, kLi = 1, kRi = 2, kNumKeypoints = 3;

enum class ParamGroup { Encoder = 0, DecBlock1, DecBlock1Norm, DecBlock2, Head };
constexpr int kNumGroups = 5;
const char* group_name(ParamGroup g);
ParamGroup group_from_name(const std::string& name);

enum ParamId {
    kEnc1W, kEnc1B, kEnc2W, kEnc2B, kEnc3W, kEnc3B,
    kDec1W,
    kDec1Gamma, kDec1Beta, kDec1Mean, kDec1Var,
    kDec2W, kDec2Gamma, kDec2Beta, kDec2Mean, kDec2Var,
    kHeadW, kHeadB,
    kNumParams
};

struct ParamInfo {
    std::string name;
    ParamGroup group;
    std::vector<int> shape;
    bool buffer = false;  // running statistics: updated by forward passes, never by gradients
    std::size_t numel() const;
};

// Encoder: three stride-2 3x3 conv+ReLU blocks. Decoder: two blocks of
// (2x nearest upsample, 3x3 conv, batch norm, ReLU). Head: 1x1 conv to 3 maps.
// Output resolution is half the input resolution.
struct Architecture {
    std::array<int, 3> encoder_channels{16, 32, 64};
    int encoder_kernel = 4;  // stride-2 convs, pad 1; 3 or 4
    int dec1_channels = 32;
    int dec2_channels = 16;

    std::vector<ParamInfo> layout() const;
    bool operator==(const Architecture&) const = default;
};

template <class S>
struct ModelParams {
    Architecture arch;
    std::vector<std::vector<S>> tensors;
    std::array<bool, kNumGroups> frozen{};

    std::span<S> operator[](ParamId id) { return tensors[id]; }
    std::span<const S> operator[](ParamId id) const { return tensors[id]; }
    bool is_frozen(ParamGroup g) const { return frozen[static_cast<int>(g)]; }
    void set_frozen(ParamGroup g, bool value) { frozen[static_cast<int>(g)] = value; }
    std::size_t trainable_count() const;
};

using Model = ModelParams<float>;

template <class S>
ModelParams<S> init_params(const Architecture& arch, std::uint64_t seed);

enum class NormMode { Inference, Train };
// Where a forward pass starts: raw image, frozen encoder output, or the
// pre-normalization output of the first decoder conv.
enum class Entry { Image, Features, Dec1Conv };

template <class S>
struct Activations {
    Entry entry = Entry::Image;
    Tensor4<S> x, a1, a2, a3;  // image and encoder outputs
    Tensor4<S> u1, c1, r1;     // decoder block 1
    Tensor4<S> u2, c2, r2;     // decoder block 2
    Tensor4<S> logits;
    BatchNormCache<S> bn1, bn2;
    std::vector<S> scratch;
};

// In Train mode running statistics of non-frozen norm groups are updated.
template <class S>
void forward(ModelParams<S>& p, Activations<S>& act, NormMode mode);

template <class S>
using Gradients = std::vector<std::vector<S>>;

template <class S>
Gradients<S> zero_gradients(const ModelParams<S>& p);

// Accumulates gradients for all non-frozen parameters. Requires a Train-mode
// forward on the same activations.
template <class S>
void backward(const ModelParams<S>& p, Activations<S>& act, const Tensor4<S>& d_logits, Gradients<S>& grads);

// --- decoding -------------------------------------------------------------

template <class S>
PixelPoint soft_argmax(std::span<const S> scores, int h, int w);

// d(score) for upstream gradients (du, dv) on the decoded point.
template <class S>
void soft_argmax_backward(std::span<const S> scores, int h, int w, double du, double dv, std::span<S> d_scores);

KeypointTriple decode_triple(const Tensor4<float>& logits, int index);

// --- supervision ----------------------------------------------------------

struct TargetFlags {
    std::array<bool, 3> clamped{};
};

// Unnormalized Gaussian bumps (peak 1) at each keypoint's rounded output cell.
TargetFlags render_target_heatmaps(const KeypointTriple& t, double sigma, int out_h, int out_w, std::span<float> out);

// Mean squared error between sigmoid(pred) and target over all cells.
template <class S>
double heatmap_loss(const Tensor4<S>& pred, const Tensor4<S>& target, Tensor4<S>* d_pred);

// weight * mean Huber distance (1 px knee) between soft-argmax points and
// targets clamped into the reachable range. Gradient is added into d_pred.
template <class S>
double keypoint_loss(const Tensor4<S>& pred, std::span<const KeypointTriple> targets, double weight,
                     Tensor4<S>* d_pred);

// Decoded points are limited to the grid the soft-argmax can reach.
PixelPoint reachable(const PixelPoint& p, int out_h, int out_w);

struct FlippedSample {
    Image image;
    KeypointTriple label;
};

KeypointTriple flip_triple(const KeypointTriple& t, int width);
FlippedSample flip_augment(const Image& image, const KeypointTriple& label);

// Random channel permutation, per-channel gain, contrast, brightness and
// desaturation, in place on one planar [0,1] image.
void photometric_jitter(std::span<float> planar, std::mt19937_64& rng);

// --- optimisation ---------------------------------------------------------

struct AdamState {
    std::vector<std::vector<float>> m, v;
    long step = 0;
};

// Decoupled weight decay; frozen groups and buffers are never touched.
void adamw_step(Model& p, const Gradients<float>& g, AdamState& state, double lr, double weight_decay,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 30;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    bool augment = true;
    bool color_jitter = false;  // photometric jitter on top of flips; needs augment
    double heatmap_sigma = 2.0;
    std::string optimizer = "adam";
    double keypoint_weight = 0.3;
    bool cosine_schedule = true;

    void validate() const;
};

struct LabeledImage {
    const Image* image = nullptr;
    KeypointTriple label;
};

struct TrainResult {
    std::vector<double> epoch_loss;
};

using ProgressFn = std::function<void(int epoch, double loss)>;

// Supervised training of all groups on monocular labeled images; freezes the
// encoder afterwards.
TrainResult train_source(Model& params, std::span<const LabeledImage> data, const TrainConfig& cfg,
                         const ProgressFn& progress = {});

// --- inference ------------------------------------------------------------

Tensor4<float> predict_heatmaps(Model& params, std::span<const Image* const> images);
std::vector<KeypointTriple> predict_triples(Model& params, std::span<const Image* const> images);
KeypointTriple predict_triple(Model& params, const Image& image);

// Inference-mode activations at `stop` (Entry::Features: encoder output,
// Entry::Dec1Conv: first decoder conv before normalization).
Tensor4<float> compute_entry(Model& params, std::span<const Image* const> images, Entry stop);

void fill_image_batch(std::span<const Image* const> images, Tensor4<float>& x);

}  // namespace cropadapt
