#include "cropadapt/eval.hpp"

#include "cropadapt/config.hpp"
#include "cropadapt/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

namespace cropadapt {

namespace {

using Rgb8 = std::array<std::uint8_t, 3>;
constexpr Rgb8 kPredColor{230, 30, 30};
constexpr Rgb8 kGtColor{30, 220, 60};

struct Segment {
    double x0, y0, x1, y1;
};

// Liang-Barsky clip against [0, w-1] x [0, h-1].
std::optional<Segment> clip(Segment s, int w, int h) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    double t0 = 0.0, t1 = 1.0;
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {s.x0, (w - 1) - s.x0, s.y0, (h - 1) - s.y0};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0) return std::nullopt;
            continue;
        }
        const double r = q[i] / p[i];
        if (p[i] < 0)
            t0 = std::max(t0, r);
        else
            t1 = std::min(t1, r);
        if (t0 > t1) return std::nullopt;
    }
    return Segment{s.x0 + t0 * dx, s.y0 + t0 * dy, s.x0 + t1 * dx, s.y0 + t1 * dy};
}

bool inside(const PixelPoint& p, int w, int h) { return p.u >= 0 && p.u <= w - 1 && p.v >= 0 && p.v <= h - 1; }

Pixel to_pixel(double x, double y, int w, int h) {
    return {std::clamp(static_cast<int>(std::lround(x)), 0, w - 1),
            std::clamp(static_cast<int>(std::lround(y)), 0, h - 1)};
}

void rasterize(const Segment& s, int w, int h, std::vector<Pixel>& out) {
    const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))));
    for (int k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        out.push_back(to_pixel(s.x0 + t * dx, s.y0 + t * dy, w, h));
    }
}

void put(Image& img, int x, int y, const Rgb8& c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = c[ch];
}

void draw_triangle(Image& img, const KeypointTriple& t, const Rgb8& color) {
    for (const Pixel& p : triangle_pixels(t, img.width, img.height)) put(img, p.first, p.second, color);
    for (const PixelPoint& k : {t.vp, t.li, t.ri}) {
        if (!inside(k, img.width, img.height)) continue;
        const Pixel c = to_pixel(k.u, k.v, img.width, img.height);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) put(img, c.first + dx, c.second + dy, color);
    }
    for (const Pixel& e : edge_exit_points(t, img.width, img.height))
        for (int d = -2; d <= 2; ++d) {
            put(img, e.first + d, e.second - 2, color);
            put(img, e.first + d, e.second + 2, color);
            put(img, e.first - 2, e.second + d, color);
            put(img, e.first + 2, e.second + d, color);
        }
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v;
    return s.str();
}

}  // namespace

double l1_distance(const PixelPoint& a, const PixelPoint& b) { return std::abs(a.u - b.u) + std::abs(a.v - b.v); }

EvalReport mean_l1_of(std::span<const KeypointTriple> pred, std::span<const KeypointTriple> gt) {
    if (pred.size() != gt.size()) throw Error(ErrorCode::ShapeMismatch, "prediction and label counts differ");
    if (gt.empty()) throw Error(ErrorCode::EmptyDataset, "no labeled samples to evaluate");
    EvalReport r;
    r.count = gt.size();
    for (std::size_t i = 0; i < gt.size(); ++i) {
        r.mean_l1[0] += l1_distance(pred[i].vp, gt[i].vp);
        r.mean_l1[1] += l1_distance(pred[i].li, gt[i].li);
        r.mean_l1[2] += l1_distance(pred[i].ri, gt[i].ri);
    }
    for (double& e : r.mean_l1) e /= static_cast<double>(gt.size());
    return r;
}

EvalReport mean_l1(Model& params, std::span<const StereoSample> labeled, Eye eye,
                   std::span<const std::string> adaptation_ids) {
    if (labeled.empty()) throw Error(ErrorCode::EmptyDataset, "no labeled samples to evaluate");
    const std::set<std::string> adapted(adaptation_ids.begin(), adaptation_ids.end());
    std::vector<const Image*> imgs;
    std::vector<KeypointTriple> gt;
    EvalReport base;
    for (const StereoSample& s : labeled) {
        if (adapted.count(s.id))
            throw Error(ErrorCode::OverlapWithAdaptationSet, "sample " + s.id + " was used for adaptation");
        imgs.push_back(&s.image(eye));
        gt.push_back(s.gt(eye));
        base.sample_ids.push_back(s.id);
    }
    const std::vector<KeypointTriple> pred = predict_triples(params, imgs);
    EvalReport r = mean_l1_of(pred, gt);
    r.domain = labeled[0].domain;
    r.eye = eye;
    r.sample_ids = std::move(base.sample_ids);
    std::sort(r.sample_ids.begin(), r.sample_ids.end());
    return r;
}

std::string EvalReport::to_json() const {
    Json errs = Json::object();
    for (int k = 0; k < 3; ++k) errs[kKeypointNames[k]] = mean_l1[k];
    const Json j = {{"domain", domain}, {"model_hash", model_hash}, {"eye", eye_name(eye)},
                    {"count", count},   {"mean_l1", errs},          {"sample_ids", sample_ids}};
    return j.dump(2);
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "keypoint,mean_l1,count\n";
    out << std::setprecision(10);
    for (int k = 0; k < 3; ++k) out << kKeypointNames[k] << ',' << mean_l1[k] << ',' << count << '\n';
    return out.str();
}

double relative_reduction(double before, double after) {
    if (before == 0.0) return after == 0.0 ? 0.0 : -100.0;
    return 100.0 * (before - after) / before;
}

Comparison compare_report(const EvalReport& before, const EvalReport& after) {
    if (before.count != after.count || before.eye != after.eye || before.sample_ids != after.sample_ids)
        throw Error(ErrorCode::MismatchedSets, "before and after reports cover different labeled sets");
    Comparison c;
    for (int k = 0; k < 3; ++k)
        c.rows.push_back({kKeypointNames[k], before.mean_l1[k], after.mean_l1[k],
                          relative_reduction(before.mean_l1[k], after.mean_l1[k])});
    return c;
}

std::string Comparison::to_csv() const {
    std::ostringstream out;
    out << "keypoint,before,after,reduction_pct\n" << std::setprecision(10);
    for (const auto& r : rows) out << r.keypoint << ',' << r.before << ',' << r.after << ',' << r.reduction << '\n';
    return out.str();
}

std::string Comparison::to_text() const {
    std::ostringstream out;
    out << std::left << std::setw(10) << "keypoint" << std::right << std::setw(10) << "before" << std::setw(10)
        << "after" << std::setw(12) << "reduction" << '\n';
    for (const auto& r : rows)
        out << std::left << std::setw(10) << r.keypoint << std::right << std::setw(10) << fmt(r.before)
            << std::setw(10) << fmt(r.after) << std::setw(11) << fmt(r.reduction) << "%\n";
    return out.str();
}

std::vector<Pixel> triangle_pixels(const KeypointTriple& t, int width, int height) {
    std::vector<Pixel> out;
    for (const PixelPoint& end : {t.li, t.ri})
        if (auto s = clip({t.vp.u, t.vp.v, end.u, end.v}, width, height)) rasterize(*s, width, height, out);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<Pixel> edge_exit_points(const KeypointTriple& t, int width, int height) {
    std::vector<Pixel> out;
    for (const PixelPoint& end : {t.li, t.ri}) {
        auto s = clip({t.vp.u, t.vp.v, end.u, end.v}, width, height);
        if (!s) continue;
        if (!inside(t.vp, width, height)) out.push_back(to_pixel(s->x0, s->y0, width, height));
        if (!inside(end, width, height)) out.push_back(to_pixel(s->x1, s->y1, width, height));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Image render_overlay(const Image& image, const KeypointTriple& pred, const KeypointTriple& gt) {
    Image out = image;
    draw_triangle(out, gt, kGtColor);
    draw_triangle(out, pred, kPredColor);
    return out;
}

}  // namespace cropadapt
