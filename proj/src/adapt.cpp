#include "cropadapt/adapt.hpp"

#include "cropadapt/config.hpp"
#include "cropadapt/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace cropadapt {

namespace {

constexpr int kCacheChunk = 16;

std::vector<const Image*> eye_images(std::span<const StereoSample> set, Eye eye) {
    std::vector<const Image*> out;
    out.reserve(set.size());
    for (const StereoSample& s : set) out.push_back(&s.image(eye));
    return out;
}

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

constexpr std::uint64_t kStage1Stream = 0x5151;

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    const double hi = v[mid];
    if (v.size() % 2) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

}  // namespace

const char* stage1_mode_name(Stage1Mode m) {
    switch (m) {
        case Stage1Mode::Auto: return "auto";
        case Stage1Mode::Force: return "force";
        case Stage1Mode::Skip: return "skip";
    }
    return "?";
}

Stage1Mode stage1_mode_from_name(const std::string& name) {
    if (name == "auto") return Stage1Mode::Auto;
    if (name == "force") return Stage1Mode::Force;
    if (name == "skip") return Stage1Mode::Skip;
    throw Error(ErrorCode::InvalidArgument, "stage1 mode must be auto, force or skip, got '" + name + "'");
}

const char* label_source_name(LabelSource s) {
    switch (s) {
        case LabelSource::Both: return "both";
        case LabelSource::Left: return "left";
        case LabelSource::Right: return "right";
    }
    return "?";
}

void AdaptConfig::validate() const {
    if (gate_disp_threshold < 0 || !(gate_fraction > 0 && gate_fraction <= 1) || pseudo_iterations < 1)
        throw Error(ErrorCode::InvalidArgument, "adapt config: bad gate threshold, gate fraction or iteration count");
    if (stage1_batch_size <= 0 || stage2_batch_size <= 0 || stage1_max_steps < 0 || stage2_epochs < 0 ||
        !(stage1_learning_rate > 0) || !(stage2_learning_rate > 0) || stage1_weight_decay < 0 ||
        stage2_weight_decay < 0 || lambda_v < 0 || stage1_stop_loss < 0 || !(heatmap_sigma > 0) ||
        keypoint_weight < 0)
        throw Error(ErrorCode::InvalidArgument, "adapt config: rates, sizes and weights must be positive");
    if (tolerances.width_rel_tol < 0 || tolerances.disp_abs_tol < 0 || tolerances.bounds_margin < 0)
        throw Error(ErrorCode::InvalidArgument, "adapt config: tolerances must be non-negative");
}

GateResult gate_from_disparities(std::vector<double> disparities, double threshold, double fraction) {
    if (disparities.empty()) throw Error(ErrorCode::EmptyDataset, "gate needs at least one sample");
    GateResult g;
    const auto over = std::count_if(disparities.begin(), disparities.end(), [&](double d) { return d > threshold; });
    g.fraction = static_cast<double>(over) / static_cast<double>(disparities.size());
    g.run_stage1 = g.fraction > fraction;
    g.disparities = std::move(disparities);
    return g;
}

GateResult vp_disparity_gate(Model& params, std::span<const StereoSample> set, const AdaptConfig& cfg) {
    if (set.empty()) throw Error(ErrorCode::EmptyDataset, "gate needs at least one sample");
    const auto left = predict_triples(params, eye_images(set, Eye::Left));
    const auto right = predict_triples(params, eye_images(set, Eye::Right));
    std::vector<double> d(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) d[i] = std::abs(left[i].vp.u - right[i].vp.u);
    return gate_from_disparities(std::move(d), cfg.gate_disp_threshold, cfg.gate_fraction);
}

Stage1Result stage1_adapt_vp(Model& params, std::span<const StereoSample> set, const AdaptConfig& cfg, bool force) {
    cfg.validate();
    if (set.empty()) throw Error(ErrorCode::EmptyDataset, "stage 1 needs at least one sample");
    if (!force) {
        const GateResult g = vp_disparity_gate(params, set, cfg);
        if (!g.run_stage1)
            throw Error(ErrorCode::GateNotPassed, "only " + std::to_string(g.fraction * 100) +
                                                      "% of samples exceed the vp disparity threshold");
    }
    const Tensor4<float> fl = compute_entry(params, eye_images(set, Eye::Left), Entry::Features);
    const Tensor4<float> fr = compute_entry(params, eye_images(set, Eye::Right), Entry::Features);
    const std::size_t fsize = fl.sample_size();

    std::mt19937_64 rng = stream_rng(cfg.seed, kStage1Stream);
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    Stage1Result res;
    AdamState adam;
    Activations<float> act;
    Tensor4<float> d_logits;
    for (int step = 0; step < cfg.stage1_max_steps; ++step) {
        std::vector<std::size_t> batch;
        while (batch.size() < static_cast<std::size_t>(cfg.stage1_batch_size) && batch.size() < order.size()) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        const int b = static_cast<int>(batch.size());
        act.entry = Entry::Features;
        act.a3.resize(2 * b, fl.c, fl.h, fl.w);
        for (int k = 0; k < b; ++k) {
            std::copy_n(fl.sample(static_cast<int>(batch[k])), fsize, act.a3.sample(k));
            std::copy_n(fr.sample(static_cast<int>(batch[k])), fsize, act.a3.sample(b + k));
        }
        const auto running = std::array{params.tensors[kDec1Mean], params.tensors[kDec1Var],
                                        params.tensors[kDec2Mean], params.tensors[kDec2Var]};
        forward(params, act, NormMode::Train);

        const Tensor4<float>& lg = act.logits;
        const std::size_t plane = lg.plane();
        double loss = 0.0;
        std::vector<PixelPoint> pl(b), pr(b);
        for (int k = 0; k < b; ++k) {
            pl[k] = soft_argmax<float>({lg.sample(k) + kVp * plane, plane}, lg.h, lg.w);
            pr[k] = soft_argmax<float>({lg.sample(b + k) + kVp * plane, plane}, lg.h, lg.w);
            loss += std::abs(pl[k].u - pr[k].u) + cfg.lambda_v * std::abs(pl[k].v - pr[k].v);
        }
        loss /= b;
        res.loss_curve.push_back(loss);
        if (loss < cfg.stage1_stop_loss) {
            // Leave the model exactly as it was before this probe.
            params.tensors[kDec1Mean] = running[0];
            params.tensors[kDec1Var] = running[1];
            params.tensors[kDec2Mean] = running[2];
            params.tensors[kDec2Var] = running[3];
            res.early_stopped = true;
            break;
        }
        d_logits.resize(lg.n, lg.c, lg.h, lg.w);
        for (int k = 0; k < b; ++k) {
            const double gu = sign(pl[k].u - pr[k].u) / b;
            const double gv = cfg.lambda_v * sign(pl[k].v - pr[k].v) / b;
            soft_argmax_backward<float>({lg.sample(k) + kVp * plane, plane}, lg.h, lg.w, gu, gv,
                                        {d_logits.sample(k) + kVp * plane, plane});
            soft_argmax_backward<float>({lg.sample(b + k) + kVp * plane, plane}, lg.h, lg.w, -gu, -gv,
                                        {d_logits.sample(b + k) + kVp * plane, plane});
        }
        Gradients<float> grads = zero_gradients(params);
        backward(params, act, d_logits, grads);
        adamw_step(params, grads, adam, cfg.stage1_learning_rate, cfg.stage1_weight_decay);
    }
    return res;
}

Angles estimate_pose_from_vp(const CameraRig& rig, const PixelPoint& left_vp, double imu_roll) {
    const PitchYaw py = estimate_pitch_yaw(rig, left_vp, imu_roll);
    return {imu_roll, py.pitch, py.yaw};
}

Angles estimate_pose_for_sample(const CameraRig& rig, Model& params, const StereoSample& sample) {
    return estimate_pose_from_vp(rig, predict_triple(params, sample.left).vp, sample.imu_roll);
}

std::optional<PseudoLabel> pseudo_label_from_predictions(const CameraRig& rig, const GeometricPrior& prior,
                                                         const KeypointTriple& pred_left,
                                                         const KeypointTriple& pred_right, double imu_roll,
                                                         const ConstraintTolerances& tol) {
    // Intercepts lie on the bottom edge by definition, and soft-argmax cannot
    // reach it, so only the predicted u is kept. Extending the vp line to the
    // edge instead would turn the residual v offset into an outward u shift.
    auto on_edge = [&](KeypointTriple t) {
        t.li.v = rig.bottom_v();
        t.ri.v = rig.bottom_v();
        return t;
    };
    try {
        PseudoLabel pl;
        pl.angles = estimate_pose_from_vp(rig, pred_left.vp, imu_roll);
        const KeypointTriple canon_l = canonicalize_triple(rig, on_edge(pred_left), pl.angles);
        const KeypointTriple canon_r = canonicalize_triple(rig, on_edge(pred_right), pl.angles);
        pl.report = check_constraints(prior, canon_l, canon_r, tol);
        const bool left_ok = pl.report.left.ok();
        const bool right_ok = pl.report.right.ok();
        if (left_ok && right_ok && pl.report.disparity_ok) {
            pl.source = LabelSource::Both;
            pl.left = decanonicalize_triple(rig, canon_l, pl.angles);
            pl.right = decanonicalize_triple(rig, canon_r, pl.angles);
        } else if (left_ok) {
            pl.source = LabelSource::Left;
            pl.left = decanonicalize_triple(rig, canon_l, pl.angles);
            pl.right = transfer_to_other_eye(rig, pl.left, pl.angles, Eye::Left);
        } else if (right_ok) {
            pl.source = LabelSource::Right;
            pl.right = decanonicalize_triple(rig, canon_r, pl.angles);
            pl.left = transfer_to_other_eye(rig, pl.right, pl.angles, Eye::Right);
        } else {
            return std::nullopt;
        }
        if (!(pl.left.li.u < pl.left.ri.u) || !(pl.right.li.u < pl.right.ri.u)) return std::nullopt;
        return pl;
    } catch (const Error& e) {
        switch (e.code()) {
            case ErrorCode::DegenerateView:
            case ErrorCode::TransferFailed:
            case ErrorCode::RayAboveHorizon:
            case ErrorCode::PointBehindCamera: return std::nullopt;
            default: throw;
        }
    }
}

std::vector<PseudoLabel> generate_pseudo_labels(const CameraRig& rig, const RowGeometry& rows, Model& params,
                                                std::span<const StereoSample> set, const AdaptConfig& cfg) {
    if (set.empty()) return {};
    const GeometricPrior prior = compute_prior(rig, rows);
    const auto left = predict_triples(params, eye_images(set, Eye::Left));
    const auto right = predict_triples(params, eye_images(set, Eye::Right));
    std::vector<PseudoLabel> out;
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto pl = pseudo_label_from_predictions(rig, prior, left[i], right[i], set[i].imu_roll, cfg.tolerances);
        if (!pl) continue;
        pl->sample_id = set[i].id;
        pl->sample_index = i;
        out.push_back(std::move(*pl));
    }
    return out;
}

Stage2Cache build_stage2_cache(Model& params, std::span<const StereoSample> set) {
    Stage2Cache cache;
    cache.c1.resize(set.size());
    if (set.empty()) return cache;
    cache.image_width = set[0].left.width;
    for (std::size_t start = 0; start < set.size(); start += kCacheChunk) {
        const std::size_t end = std::min(set.size(), start + kCacheChunk);
        std::vector<Image> flipped;
        flipped.reserve((end - start) * 2);
        std::vector<const Image*> imgs;
        for (std::size_t i = start; i < end; ++i)
            for (Eye eye : {Eye::Left, Eye::Right}) {
                flipped.push_back(flip_horizontal(set[i].image(eye)));
                imgs.push_back(&set[i].image(eye));
                imgs.push_back(&flipped.back());
            }
        const Tensor4<float> c1 = compute_entry(params, imgs, Entry::Dec1Conv);
        cache.c = c1.c;
        cache.h = c1.h;
        cache.w = c1.w;
        int k = 0;
        for (std::size_t i = start; i < end; ++i)
            for (int eye = 0; eye < 2; ++eye)
                for (int f = 0; f < 2; ++f, ++k) cache.c1[i][eye][f].assign(c1.sample(k), c1.sample(k) + c1.sample_size());
    }
    return cache;
}

void stage2_finetune(Model& params, std::span<const StereoSample> set, std::span<const PseudoLabel> labels,
                     const AdaptConfig& cfg, const Stage2Cache* cache, std::uint64_t stream) {
    cfg.validate();
    if (labels.empty()) throw Error(ErrorCode::EmptyPseudoLabels, "no pseudo-labels to fine-tune on");
    for (const PseudoLabel& pl : labels)
        if (pl.sample_index >= set.size() || set[pl.sample_index].id != pl.sample_id)
            throw Error(ErrorCode::InvalidArgument, "pseudo-label " + pl.sample_id + " does not match the sample set");

    const auto saved_flags = params.frozen;
    using G = ParamGroup;
    params.set_frozen(G::Encoder, true);
    params.set_frozen(G::DecBlock1, true);
    params.set_frozen(G::DecBlock1Norm, false);
    params.set_frozen(G::DecBlock2, false);
    params.set_frozen(G::Head, false);

    Stage2Cache local;
    if (!cache) {
        local = build_stage2_cache(params, set);
        cache = &local;
    }

    struct Item {
        std::size_t label;
        int eye;
    };
    std::vector<Item> items;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        items.push_back({i, 0});
        items.push_back({i, 1});
    }

    std::mt19937_64 rng = stream_rng(cfg.seed, stream);
    AdamState adam;
    Activations<float> act;
    Tensor4<float> targets, d_logits;
    std::vector<KeypointTriple> batch_labels;
    const std::size_t csize = static_cast<std::size_t>(cache->c) * cache->h * cache->w;
    for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        std::shuffle(items.begin(), items.end(), rng);
        for (std::size_t start = 0; start < items.size(); start += cfg.stage2_batch_size) {
            const std::size_t end = std::min(items.size(), start + static_cast<std::size_t>(cfg.stage2_batch_size));
            const int b = static_cast<int>(end - start);
            act.entry = Entry::Dec1Conv;
            act.c1.resize(b, cache->c, cache->h, cache->w);
            batch_labels.clear();
            for (int k = 0; k < b; ++k) {
                const Item& it = items[start + k];
                const PseudoLabel& pl = labels[it.label];
                const bool flip = cfg.flip_augment && (rng() & 1u);
                const auto& src = cache->c1[pl.sample_index][it.eye][flip ? 1 : 0];
                std::copy_n(src.data(), csize, act.c1.sample(k));
                const KeypointTriple& lbl = pl.label(it.eye == 0 ? Eye::Left : Eye::Right);
                batch_labels.push_back(flip ? flip_triple(lbl, cache->image_width) : lbl);
            }
            forward(params, act, NormMode::Train);
            const Tensor4<float>& lg = act.logits;
            targets.resize(lg.n, lg.c, lg.h, lg.w);
            for (int k = 0; k < b; ++k)
                render_target_heatmaps(batch_labels[k], cfg.heatmap_sigma, lg.h, lg.w,
                                       {targets.sample(k), targets.sample_size()});
            d_logits.resize(lg.n, lg.c, lg.h, lg.w);
            heatmap_loss(lg, targets, &d_logits);
            keypoint_loss<float>(lg, batch_labels, cfg.keypoint_weight, &d_logits);
            Gradients<float> grads = zero_gradients(params);
            backward(params, act, d_logits, grads);
            adamw_step(params, grads, adam, cfg.stage2_learning_rate, cfg.stage2_weight_decay);
        }
    }
    params.frozen = saved_flags;
}

AdaptReport adapt_pipeline(const CameraRig& rig, const RowGeometry& rows, Model& params,
                           std::span<const StereoSample> target_set, const AdaptConfig& cfg,
                           const AdaptObserver* observer) {
    cfg.validate();
    if (target_set.empty()) throw Error(ErrorCode::EmptyDataset, "target set is empty");
    const Model before = params;

    AdaptReport report;
    report.stage1_mode = cfg.stage1;
    const GateResult gate = vp_disparity_gate(params, target_set, cfg);
    report.gate_fraction = gate.fraction;
    report.gate_median_disparity = median(gate.disparities);
    report.stage1_ran =
        cfg.stage1 == Stage1Mode::Force || (cfg.stage1 == Stage1Mode::Auto && gate.run_stage1);
    if (report.stage1_ran) {
        report.stage1_loss = stage1_adapt_vp(params, target_set, cfg, true).loss_curve;
        report.stage1_median_disparity = median(vp_disparity_gate(params, target_set, cfg).disparities);
    }
    if (observer && observer->after_stage1) observer->after_stage1(params);

    const Stage2Cache cache = build_stage2_cache(params, target_set);
    for (int it = 0; it < cfg.pseudo_iterations; ++it) {
        const std::vector<PseudoLabel> labels = generate_pseudo_labels(rig, rows, params, target_set, cfg);
        AdaptIteration rec;
        rec.pseudo_labels = labels.size();
        for (const PseudoLabel& pl : labels) {
            rec.from_both += pl.source == LabelSource::Both;
            rec.from_left += pl.source == LabelSource::Left;
            rec.from_right += pl.source == LabelSource::Right;
        }
        report.iterations.push_back(rec);
        if (observer && observer->on_labels) observer->on_labels(it, labels, params);
        stage2_finetune(params, target_set, labels, cfg, &cache, static_cast<std::uint64_t>(it) + 1);
        if (observer && observer->after_iteration) observer->after_iteration(it, params);
    }

    const auto info = params.arch.layout();
    for (int g = 0; g < kNumGroups; ++g) {
        double sq = 0.0;
        for (int id = 0; id < kNumParams; ++id) {
            if (static_cast<int>(info[id].group) != g || info[id].buffer) continue;
            for (std::size_t k = 0; k < params.tensors[id].size(); ++k) {
                const double d = static_cast<double>(params.tensors[id][k]) - before.tensors[id][k];
                sq += d * d;
            }
        }
        report.delta_norms.emplace_back(group_name(static_cast<ParamGroup>(g)), std::sqrt(sq));
    }
    return report;
}

std::string AdaptReport::to_json() const {
    Json iters = Json::array();
    for (const AdaptIteration& it : iterations)
        iters.push_back({{"pseudo_labels", it.pseudo_labels},
                         {"from_both", it.from_both},
                         {"from_left", it.from_left},
                         {"from_right", it.from_right}});
    Json deltas = Json::object();
    for (const auto& [name, v] : delta_norms) deltas[name] = v;
    const Json j = {{"stage1_ran", stage1_ran},
                    {"stage1_mode", stage1_mode_name(stage1_mode)},
                    {"gate_fraction", gate_fraction},
                    {"gate_median_disparity", gate_median_disparity},
                    {"stage1_median_disparity", stage1_median_disparity},
                    {"stage1_loss", stage1_loss},
                    {"iterations", iters},
                    {"delta_norms", deltas}};
    return j.dump(2);
}

std::string AdaptReport::to_csv() const {
    std::ostringstream out;
    out << "iteration,pseudo_labels,from_both,from_left,from_right\n";
    for (std::size_t i = 0; i < iterations.size(); ++i)
        out << i + 1 << ',' << iterations[i].pseudo_labels << ',' << iterations[i].from_both << ','
            << iterations[i].from_left << ',' << iterations[i].from_right << '\n';
    return out.str();
}

}  // namespace cropadapt
