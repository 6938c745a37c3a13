#include "cropadapt/net.hpp"

#include "cropadapt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cropadapt {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kHeadBiasInit = -4.0;
constexpr int kInferenceChunk = 32;

// Pad 1 with an even kernel centers output o on input 2o + 0.5, so features
// stay aligned with the upsampled decoder grid.
ConvSpec enc_spec(int cin, int cout, int k) { return {cin, cout, k, 2, 1}; }
ConvSpec dec_spec(int cin, int cout) { return {cin, cout, 3, 1, 1}; }
ConvSpec head_spec(int cin) { return {cin, kNumKeypoints, 1, 1, 0}; }

template <class S>
std::span<S> none() {
    return {};
}

}  // namespace

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Encoder: return "encoder";
        case ParamGroup::DecBlock1: return "dec_block1";
        case ParamGroup::DecBlock1Norm: return "dec_block1_norm";
        case ParamGroup::DecBlock2: return "dec_block2";
        case ParamGroup::Head: return "head";
    }
    return "?";
}

ParamGroup group_from_name(const std::string& name) {
    for (int g = 0; g < kNumGroups; ++g)
        if (name == group_name(static_cast<ParamGroup>(g))) return static_cast<ParamGroup>(g);
    throw Error(ErrorCode::InvalidArgument, "unknown parameter group '" + name + "'");
}

std::size_t ParamInfo::numel() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::vector<ParamInfo> Architecture::layout() const {
    const auto [e1, e2, e3] = encoder_channels;
    const int d1 = dec1_channels, d2 = dec2_channels;
    using G = ParamGroup;
    const int k = encoder_kernel;
    return {
        {"enc1.weight", G::Encoder, {e1, 3, k, k}},
        {"enc1.bias", G::Encoder, {e1}},
        {"enc2.weight", G::Encoder, {e2, e1, k, k}},
        {"enc2.bias", G::Encoder, {e2}},
        {"enc3.weight", G::Encoder, {e3, e2, k, k}},
        {"enc3.bias", G::Encoder, {e3}},
        {"dec1.conv.weight", G::DecBlock1, {d1, e3, 3, 3}},
        {"dec1.norm.gamma", G::DecBlock1Norm, {d1}},
        {"dec1.norm.beta", G::DecBlock1Norm, {d1}},
        {"dec1.norm.running_mean", G::DecBlock1Norm, {d1}, true},
        {"dec1.norm.running_var", G::DecBlock1Norm, {d1}, true},
        {"dec2.conv.weight", G::DecBlock2, {d2, d1, 3, 3}},
        {"dec2.norm.gamma", G::DecBlock2, {d2}},
        {"dec2.norm.beta", G::DecBlock2, {d2}},
        {"dec2.norm.running_mean", G::DecBlock2, {d2}, true},
        {"dec2.norm.running_var", G::DecBlock2, {d2}, true},
        {"head.weight", G::Head, {kNumKeypoints, d2, 1, 1}},
        {"head.bias", G::Head, {kNumKeypoints}},
    };
}

template <class S>
std::size_t ModelParams<S>::trainable_count() const {
    const auto info = arch.layout();
    std::size_t n = 0;
    for (int i = 0; i < kNumParams; ++i)
        if (!info[i].buffer && !is_frozen(info[i].group)) n += info[i].numel();
    return n;
}

template <class S>
ModelParams<S> init_params(const Architecture& arch, std::uint64_t seed) {
    if (arch.encoder_kernel != 3 && arch.encoder_kernel != 4)
        throw Error(ErrorCode::InvalidArgument, "encoder_kernel must be 3 or 4");
    ModelParams<S> p;
    p.arch = arch;
    const auto info = arch.layout();
    std::mt19937_64 rng(seed);
    p.tensors.resize(info.size());
    for (std::size_t i = 0; i < info.size(); ++i) {
        auto& t = p.tensors[i];
        t.assign(info[i].numel(), S(0));
        const std::string& name = info[i].name;
        const bool is_weight = name.ends_with(".weight");
        if (is_weight) {
            // He-normal over fan-in.
            const auto& sh = info[i].shape;
            const double fan_in = static_cast<double>(sh[1]) * sh[2] * sh[3];
            std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
            for (S& x : t) x = static_cast<S>(nd(rng));
        } else if (name.ends_with("gamma") || name.ends_with("running_var")) {
            std::fill(t.begin(), t.end(), S(1));
        } else if (name == "head.bias") {
            std::fill(t.begin(), t.end(), static_cast<S>(kHeadBiasInit));
        }
    }
    return p;
}

template <class S>
void forward(ModelParams<S>& p, Activations<S>& act, NormMode mode) {
    const Architecture& a = p.arch;
    const auto [e1, e2, e3] = a.encoder_channels;
    const int ek = a.encoder_kernel;
    auto& s = act.scratch;
    if (act.entry == Entry::Image) {
        if (act.x.c != 3 || act.x.h % 8 != 0 || act.x.w % 8 != 0 || act.x.n == 0)
            throw Error(ErrorCode::ShapeMismatch, "input must be N x 3 x H x W with H, W multiples of 8");
        conv2d_forward<S>(enc_spec(3, e1, ek), act.x, p[kEnc1W], p[kEnc1B], act.a1, s);
        relu_forward(act.a1);
        conv2d_forward<S>(enc_spec(e1, e2, ek), act.a1, p[kEnc2W], p[kEnc2B], act.a2, s);
        relu_forward(act.a2);
        conv2d_forward<S>(enc_spec(e2, e3, ek), act.a2, p[kEnc3W], p[kEnc3B], act.a3, s);
        relu_forward(act.a3);
    }
    if (act.entry != Entry::Dec1Conv) {
        if (act.a3.c != e3 || act.a3.n == 0) throw Error(ErrorCode::ShapeMismatch, "encoder features have wrong shape");
        upsample2x_forward(act.a3, act.u1);
        conv2d_forward<S>(dec_spec(e3, a.dec1_channels), act.u1, p[kDec1W], none<const S>(), act.c1, s);
    }
    if (act.c1.c != a.dec1_channels || act.c1.n == 0)
        throw Error(ErrorCode::ShapeMismatch, "decoder activations have wrong shape");

    const bool train = mode == NormMode::Train;
    const bool upd1 = !p.is_frozen(ParamGroup::DecBlock1Norm);
    const bool upd2 = !p.is_frozen(ParamGroup::DecBlock2);
    if (train)
        batchnorm_train_forward<S>(act.c1, p[kDec1Gamma], p[kDec1Beta], upd1 ? p[kDec1Mean] : none<S>(),
                                   upd1 ? p[kDec1Var] : none<S>(), act.r1, act.bn1);
    else
        batchnorm_infer_forward<S>(act.c1, p[kDec1Gamma], p[kDec1Beta], p[kDec1Mean], p[kDec1Var], act.r1);
    relu_forward(act.r1);

    upsample2x_forward(act.r1, act.u2);
    conv2d_forward<S>(dec_spec(a.dec1_channels, a.dec2_channels), act.u2, p[kDec2W], none<const S>(), act.c2, s);
    if (train)
        batchnorm_train_forward<S>(act.c2, p[kDec2Gamma], p[kDec2Beta], upd2 ? p[kDec2Mean] : none<S>(),
                                   upd2 ? p[kDec2Var] : none<S>(), act.r2, act.bn2);
    else
        batchnorm_infer_forward<S>(act.c2, p[kDec2Gamma], p[kDec2Beta], p[kDec2Mean], p[kDec2Var], act.r2);
    relu_forward(act.r2);

    conv2d_forward<S>(head_spec(a.dec2_channels), act.r2, p[kHeadW], p[kHeadB], act.logits, s);
}

template <class S>
Gradients<S> zero_gradients(const ModelParams<S>& p) {
    Gradients<S> g(p.tensors.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i].assign(p.tensors[i].size(), S(0));
    return g;
}

template <class S>
void backward(const ModelParams<S>& p, Activations<S>& act, const Tensor4<S>& d_logits, Gradients<S>& g) {
    if (!d_logits.same_shape(act.logits)) throw Error(ErrorCode::ShapeMismatch, "logit gradient shape mismatch");
    const Architecture& a = p.arch;
    const auto [e1, e2, e3] = a.encoder_channels;
    const int ek = a.encoder_kernel;
    using G = ParamGroup;
    const bool t_enc = !p.is_frozen(G::Encoder) && act.entry == Entry::Image;
    const bool t_dec1 = !p.is_frozen(G::DecBlock1) && act.entry != Entry::Dec1Conv;
    const bool t_norm1 = !p.is_frozen(G::DecBlock1Norm);
    const bool t_dec2 = !p.is_frozen(G::DecBlock2);
    const bool t_head = !p.is_frozen(G::Head);

    // Stages: 0 encoder, 1 dec1 conv, 2 dec1 norm, 3 dec2, 4 head.
    int lowest = 5;
    if (t_head) lowest = 4;
    if (t_dec2) lowest = 3;
    if (t_norm1) lowest = 2;
    if (t_dec1) lowest = 1;
    if (t_enc) lowest = 0;
    if (lowest == 5) return;

    auto gs = [&](ParamId id, bool on) { return on ? std::span<S>(g[id]) : std::span<S>(); };
    auto& s = act.scratch;
    Tensor4<S> d_a, d_b;

    conv2d_backward<S>(head_spec(a.dec2_channels), act.r2, p[kHeadW], d_logits, gs(kHeadW, t_head),
                       gs(kHeadB, t_head), lowest < 4 ? &d_a : nullptr, s);
    if (lowest >= 4) return;
    relu_backward(act.r2, d_a);
    batchnorm_backward<S>(act.bn2, p[kDec2Gamma], d_a, gs(kDec2Gamma, t_dec2), gs(kDec2Beta, t_dec2), &d_b);
    conv2d_backward<S>(dec_spec(a.dec1_channels, a.dec2_channels), act.u2, p[kDec2W], d_b, gs(kDec2W, t_dec2),
                       none<S>(), lowest < 3 ? &d_a : nullptr, s);
    if (lowest >= 3) return;
    upsample2x_backward(d_a, d_b);
    relu_backward(act.r1, d_b);
    batchnorm_backward<S>(act.bn1, p[kDec1Gamma], d_b, gs(kDec1Gamma, t_norm1), gs(kDec1Beta, t_norm1),
                          lowest < 2 ? &d_a : nullptr);
    if (lowest >= 2) return;
    conv2d_backward<S>(dec_spec(e3, a.dec1_channels), act.u1, p[kDec1W], d_a, gs(kDec1W, t_dec1), none<S>(),
                       lowest < 1 ? &d_b : nullptr, s);
    if (lowest >= 1) return;
    upsample2x_backward(d_b, d_a);
    relu_backward(act.a3, d_a);
    conv2d_backward<S>(enc_spec(e2, e3, ek), act.a2, p[kEnc3W], d_a, gs(kEnc3W, true), gs(kEnc3B, true), &d_b, s);
    relu_backward(act.a2, d_b);
    conv2d_backward<S>(enc_spec(e1, e2, ek), act.a1, p[kEnc2W], d_b, gs(kEnc2W, true), gs(kEnc2B, true), &d_a, s);
    relu_backward(act.a1, d_a);
    conv2d_backward<S>(enc_spec(3, e1, ek), act.x, p[kEnc1W], d_a, gs(kEnc1W, true), gs(kEnc1B, true), nullptr, s);
}

template <class S>
PixelPoint soft_argmax(std::span<const S> scores, int h, int w) {
    const double mx = static_cast<double>(*std::max_element(scores.begin(), scores.end()));
    double z = 0.0, ej = 0.0, ei = 0.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double e = std::exp(static_cast<double>(scores[i * w + j]) - mx);
            z += e;
            ej += e * j;
            ei += e * i;
        }
    return {2.0 * ej / z, 2.0 * ei / z};
}

template <class S>
void soft_argmax_backward(std::span<const S> scores, int h, int w, double du, double dv, std::span<S> d_scores) {
    const double mx = static_cast<double>(*std::max_element(scores.begin(), scores.end()));
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<double> prob(n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += prob[k] = std::exp(static_cast<double>(scores[k]) - mx);
    double ej = 0.0, ei = 0.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            double& pk = prob[i * w + j];
            pk /= z;
            ej += pk * j;
            ei += pk * i;
        }
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double pk = prob[i * w + j];
            d_scores[i * w + j] += static_cast<S>(2.0 * pk * (du * (j - ej) + dv * (i - ei)));
        }
}

KeypointTriple decode_triple(const Tensor4<float>& logits, int index) {
    const float* base = logits.sample(index);
    const std::size_t plane = logits.plane();
    auto ch = [&](int c) { return soft_argmax<float>({base + c * plane, plane}, logits.h, logits.w); };
    return {ch(kVp), ch(kLi), ch(kRi)};
}

TargetFlags render_target_heatmaps(const KeypointTriple& t, double sigma, int out_h, int out_w,
                                   std::span<float> out) {
    if (out.size() != static_cast<std::size_t>(kNumKeypoints) * out_h * out_w)
        throw Error(ErrorCode::ShapeMismatch, "target buffer has wrong size");
    if (!(sigma > 0)) throw Error(ErrorCode::InvalidArgument, "heatmap sigma must be positive");
    TargetFlags flags;
    const PixelPoint pts[3] = {t.vp, t.li, t.ri};
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int c = 0; c < kNumKeypoints; ++c) {
        if (!std::isfinite(pts[c].u) || !std::isfinite(pts[c].v))
            throw Error(ErrorCode::InvalidArgument, "keypoint is not finite");
        // Cell j covers input pixels 2j and 2j+1; only points outside the image
        // count as clamped.
        const double cj = std::clamp(std::round(pts[c].u / 2.0), 0.0, out_w - 1.0);
        const double ci = std::clamp(std::round(pts[c].v / 2.0), 0.0, out_h - 1.0);
        flags.clamped[c] = pts[c].u < 0 || pts[c].u > 2.0 * out_w - 1 || pts[c].v < 0 || pts[c].v > 2.0 * out_h - 1;
        float* dst = out.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (int i = 0; i < out_h; ++i)
            for (int j = 0; j < out_w; ++j) {
                const double d2 = (j - cj) * (j - cj) + (i - ci) * (i - ci);
                dst[i * out_w + j] = static_cast<float>(std::exp(-d2 * inv));
            }
    }
    return flags;
}

template <class S>
double heatmap_loss(const Tensor4<S>& pred, const Tensor4<S>& target, Tensor4<S>* d_pred) {
    if (!pred.same_shape(target)) throw Error(ErrorCode::ShapeMismatch, "prediction and target shapes differ");
    const double count = static_cast<double>(pred.size());
    if (d_pred && !d_pred->same_shape(pred)) d_pred->resize(pred.n, pred.c, pred.h, pred.w);
    double sum = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        const double sg = 1.0 / (1.0 + std::exp(-static_cast<double>(pred.data[k])));
        const double r = sg - static_cast<double>(target.data[k]);
        sum += r * r;
        if (d_pred) d_pred->data[k] += static_cast<S>(2.0 * r * sg * (1.0 - sg) / count);
    }
    return sum / count;
}

PixelPoint reachable(const PixelPoint& p, int out_h, int out_w) {
    return {std::clamp(p.u, 0.0, 2.0 * (out_w - 1)), std::clamp(p.v, 0.0, 2.0 * (out_h - 1))};
}

template <class S>
double keypoint_loss(const Tensor4<S>& pred, std::span<const KeypointTriple> targets, double weight,
                     Tensor4<S>* d_pred) {
    if (pred.c != kNumKeypoints || static_cast<std::size_t>(pred.n) != targets.size())
        throw Error(ErrorCode::ShapeMismatch, "keypoint targets do not match predictions");
    if (d_pred && !d_pred->same_shape(pred)) d_pred->resize(pred.n, pred.c, pred.h, pred.w);
    const double count = static_cast<double>(pred.n) * kNumKeypoints;
    const std::size_t plane = pred.plane();
    auto huber = [](double x) { return std::abs(x) <= 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; };
    auto dhuber = [](double x) { return std::clamp(x, -1.0, 1.0); };
    double sum = 0.0;
    for (int i = 0; i < pred.n; ++i) {
        const PixelPoint tp[3] = {targets[i].vp, targets[i].li, targets[i].ri};
        for (int c = 0; c < kNumKeypoints; ++c) {
            std::span<const S> sc(pred.sample(i) + c * plane, plane);
            const PixelPoint q = soft_argmax<S>(sc, pred.h, pred.w);
            const PixelPoint t = reachable(tp[c], pred.h, pred.w);
            const double du = q.u - t.u, dv = q.v - t.v;
            sum += huber(du) + huber(dv);
            if (d_pred)
                soft_argmax_backward<S>(sc, pred.h, pred.w, weight * dhuber(du) / count, weight * dhuber(dv) / count,
                                        {d_pred->sample(i) + c * plane, plane});
        }
    }
    return weight * sum / count;
}

KeypointTriple flip_triple(const KeypointTriple& t, int width) {
    const double m = width - 1.0;
    return {{m - t.vp.u, t.vp.v}, {m - t.ri.u, t.ri.v}, {m - t.li.u, t.li.v}};
}

FlippedSample flip_augment(const Image& image, const KeypointTriple& label) {
    return {flip_horizontal(image), flip_triple(label, image.width)};
}

void adamw_step(Model& p, const Gradients<float>& g, AdamState& st, double lr, double weight_decay, double beta1,
                double beta2, double eps) {
    const auto info = p.arch.layout();
    if (st.m.empty()) {
        st.m.resize(p.tensors.size());
        st.v.resize(p.tensors.size());
        for (std::size_t i = 0; i < p.tensors.size(); ++i) {
            st.m[i].assign(p.tensors[i].size(), 0.0f);
            st.v[i].assign(p.tensors[i].size(), 0.0f);
        }
    }
    ++st.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    for (int i = 0; i < kNumParams; ++i) {
        if (info[i].buffer || p.is_frozen(info[i].group)) continue;
        auto& w = p.tensors[i];
        auto& m = st.m[i];
        auto& v = st.v[i];
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[i][k];
            m[k] = static_cast<float>(beta1 * m[k] + (1.0 - beta1) * gk);
            v[k] = static_cast<float>(beta2 * v[k] + (1.0 - beta2) * gk * gk);
            const double step = (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
            w[k] = static_cast<float>(w[k] * (1.0 - lr * weight_decay) - lr * step);
        }
    }
}

namespace {

void sgd_step(Model& p, const Gradients<float>& g, AdamState& st, double lr, double weight_decay) {
    constexpr double kMomentum = 0.9;
    const auto info = p.arch.layout();
    if (st.m.empty()) {
        st.m.resize(p.tensors.size());
        for (std::size_t i = 0; i < p.tensors.size(); ++i) st.m[i].assign(p.tensors[i].size(), 0.0f);
    }
    ++st.step;
    for (int i = 0; i < kNumParams; ++i) {
        if (info[i].buffer || p.is_frozen(info[i].group)) continue;
        for (std::size_t k = 0; k < p.tensors[i].size(); ++k) {
            float& w = p.tensors[i][k];
            st.m[i][k] = static_cast<float>(kMomentum * st.m[i][k] + g[i][k] + weight_decay * w);
            w = static_cast<float>(w - lr * st.m[i][k]);
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || batch_size <= 0 || epochs < 0 || weight_decay < 0 || !(heatmap_sigma > 0) ||
        keypoint_weight < 0)
        throw Error(ErrorCode::InvalidArgument, "training config requires positive rates and sizes");
    if (optimizer != "adam" && optimizer != "sgd")
        throw Error(ErrorCode::InvalidArgument, "optimizer must be 'adam' or 'sgd'");
}

void fill_image_batch(std::span<const Image* const> images, Tensor4<float>& x) {
    if (images.empty()) throw Error(ErrorCode::EmptyDataset, "no images");
    const int w = images[0]->width, h = images[0]->height;
    x.resize(static_cast<int>(images.size()), 3, h, w);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->width != w || images[i]->height != h)
            throw Error(ErrorCode::ShapeMismatch, "images in a batch must share dimensions");
        to_planar(*images[i], {x.sample(static_cast<int>(i)), x.sample_size()});
    }
}

void photometric_jitter(std::span<float> planar, std::mt19937_64& rng) {
    const std::size_t plane = planar.size() / 3;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    std::array<int, 3> perm{0, 1, 2};
    if (unit(rng) < 0.5) std::shuffle(perm.begin(), perm.end(), rng);
    const std::array<double, 3> gain{draw(0.7, 1.3), draw(0.7, 1.3), draw(0.7, 1.3)};
    const double contrast = draw(0.6, 1.4);
    const double offset = draw(-0.15, 0.15);
    const double gray = unit(rng) < 0.3 ? draw(0.3, 1.0) : 0.0;

    std::vector<float> src(planar.begin(), planar.end());
    double mean = 0.0;
    for (float v : src) mean += v;
    mean /= static_cast<double>(src.size());
    for (std::size_t i = 0; i < plane; ++i) {
        std::array<double, 3> c;
        for (int k = 0; k < 3; ++k) c[k] = gain[k] * src[perm[k] * plane + i];
        const double y = (c[0] + c[1] + c[2]) / 3.0;
        for (int k = 0; k < 3; ++k) {
            const double v = (1.0 - gray) * c[k] + gray * y;
            planar[k * plane + i] = static_cast<float>(std::clamp(mean + contrast * (v - mean) + offset, 0.0, 1.0));
        }
    }
}

TrainResult train_source(Model& params, std::span<const LabeledImage> data, const TrainConfig& cfg,
                         const ProgressFn& progress) {
    cfg.validate();
    if (data.empty()) throw Error(ErrorCode::EmptyDataset, "source dataset is empty");
    for (int g = 0; g < kNumGroups; ++g) params.frozen[g] = false;

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const int steps_per_epoch = static_cast<int>((data.size() + cfg.batch_size - 1) / cfg.batch_size);
    const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;

    AdamState state;
    Activations<float> act;
    Tensor4<float> targets, d_logits;
    std::vector<Image> flipped;
    std::vector<const Image*> batch_images;
    std::vector<KeypointTriple> batch_labels;
    TrainResult result;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch_images.clear();
            batch_labels.clear();
            flipped.clear();
            flipped.reserve(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const LabeledImage& s = data[order[k]];
                const bool flip = cfg.augment && (rng() & 1u);
                if (flip) {
                    FlippedSample f = flip_augment(*s.image, s.label);
                    flipped.push_back(std::move(f.image));
                    batch_images.push_back(&flipped.back());
                    batch_labels.push_back(f.label);
                } else {
                    batch_images.push_back(s.image);
                    batch_labels.push_back(s.label);
                }
            }
            act.entry = Entry::Image;
            fill_image_batch(batch_images, act.x);
            if (cfg.augment && cfg.color_jitter)
                for (int i = 0; i < act.x.n; ++i) photometric_jitter({act.x.sample(i), act.x.sample_size()}, rng);
            forward(params, act, NormMode::Train);

            const Tensor4<float>& lg = act.logits;
            targets.resize(lg.n, lg.c, lg.h, lg.w);
            for (int i = 0; i < lg.n; ++i)
                render_target_heatmaps(batch_labels[i], cfg.heatmap_sigma, lg.h, lg.w,
                                       {targets.sample(i), targets.sample_size()});
            d_logits.resize(lg.n, lg.c, lg.h, lg.w);
            double loss = heatmap_loss(lg, targets, &d_logits);
            loss += keypoint_loss<float>(lg, batch_labels, cfg.keypoint_weight, &d_logits);

            Gradients<float> grads = zero_gradients(params);
            backward(params, act, d_logits, grads);
            const double lr = cfg.cosine_schedule
                                  ? cfg.learning_rate * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / total_steps))
                                  : cfg.learning_rate;
            if (cfg.optimizer == "adam")
                adamw_step(params, grads, state, lr, cfg.weight_decay);
            else
                sgd_step(params, grads, state, lr, cfg.weight_decay);
            ++step;
            epoch_loss += loss * static_cast<double>(end - start);
        }
        epoch_loss /= static_cast<double>(data.size());
        result.epoch_loss.push_back(epoch_loss);
        if (progress) progress(epoch, epoch_loss);
    }
    params.set_frozen(ParamGroup::Encoder, true);
    return result;
}

Tensor4<float> compute_entry(Model& params, std::span<const Image* const> images, Entry stop) {
    if (stop == Entry::Image) throw Error(ErrorCode::InvalidArgument, "entry point must be after the input");
    Tensor4<float> out;
    Activations<float> act;
    const auto [e1, e2, e3] = params.arch.encoder_channels;
    const int ek = params.arch.encoder_kernel;
    auto& s = act.scratch;
    for (std::size_t start = 0; start < images.size(); start += kInferenceChunk) {
        const std::size_t end = std::min(images.size(), start + kInferenceChunk);
        fill_image_batch(images.subspan(start, end - start), act.x);
        if (act.x.h % 8 != 0 || act.x.w % 8 != 0)
            throw Error(ErrorCode::ShapeMismatch, "image dimensions must be multiples of 8");
        conv2d_forward<float>(enc_spec(3, e1, ek), act.x, params[kEnc1W], params[kEnc1B], act.a1, s);
        relu_forward(act.a1);
        conv2d_forward<float>(enc_spec(e1, e2, ek), act.a1, params[kEnc2W], params[kEnc2B], act.a2, s);
        relu_forward(act.a2);
        conv2d_forward<float>(enc_spec(e2, e3, ek), act.a2, params[kEnc3W], params[kEnc3B], act.a3, s);
        relu_forward(act.a3);
        const Tensor4<float>* res = &act.a3;
        if (stop == Entry::Dec1Conv) {
            upsample2x_forward(act.a3, act.u1);
            conv2d_forward<float>(dec_spec(e3, params.arch.dec1_channels), act.u1, params[kDec1W],
                                  none<const float>(), act.c1, s);
            res = &act.c1;
        }
        if (start == 0) out.resize(static_cast<int>(images.size()), res->c, res->h, res->w);
        std::copy(res->data.begin(), res->data.end(), out.sample(static_cast<int>(start)));
    }
    return out;
}

Tensor4<float> predict_heatmaps(Model& params, std::span<const Image* const> images) {
    Tensor4<float> out;
    Activations<float> act;
    for (std::size_t start = 0; start < images.size(); start += kInferenceChunk) {
        const std::size_t end = std::min(images.size(), start + kInferenceChunk);
        act.entry = Entry::Image;
        fill_image_batch(images.subspan(start, end - start), act.x);
        forward(params, act, NormMode::Inference);
        const auto& lg = act.logits;
        if (start == 0) out.resize(static_cast<int>(images.size()), lg.c, lg.h, lg.w);
        std::copy(lg.data.begin(), lg.data.end(), out.sample(static_cast<int>(start)));
    }
    return out;
}

std::vector<KeypointTriple> predict_triples(Model& params, std::span<const Image* const> images) {
    const Tensor4<float> hm = predict_heatmaps(params, images);
    std::vector<KeypointTriple> out(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = decode_triple(hm, static_cast<int>(i));
    return out;
}

KeypointTriple predict_triple(Model& params, const Image& image) {
    const Image* one[1] = {&image};
    return predict_triples(params, one)[0];
}

#define CROPADAPT_INSTANTIATE(S)                                                                               \
    template struct ModelParams<S>;                                                                            \
    template ModelParams<S> init_params<S>(const Architecture&, std::uint64_t);                                \
    template void forward<S>(ModelParams<S>&, Activations<S>&, NormMode);                                      \
    template Gradients<S> zero_gradients<S>(const ModelParams<S>&);                                            \
    template void backward<S>(const ModelParams<S>&, Activations<S>&, const Tensor4<S>&, Gradients<S>&);       \
    template PixelPoint soft_argmax<S>(std::span<const S>, int, int);                                          \
    template void soft_argmax_backward<S>(std::span<const S>, int, int, double, double, std::span<S>);         \
    template double heatmap_loss<S>(const Tensor4<S>&, const Tensor4<S>&, Tensor4<S>*);                        \
    template double keypoint_loss<S>(const Tensor4<S>&, std::span<const KeypointTriple>, double, Tensor4<S>*);

CROPADAPT_INSTANTIATE(float)
CROPADAPT_INSTANTIATE(double)

}  // namespace cropadapt
