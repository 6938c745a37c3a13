#pragma once

#include "cropadapt/geometry.hpp"
#include "cropadapt/image.hpp"
#include "cropadapt/net.hpp"
#include "cropadapt/sim.hpp"

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cropadapt {

inline constexpr std::array<const char*, 3> kKeypointNames{"vp", "li", "ri"};

// L1 per keypoint is |du| + |dv| in input pixels.
struct EvalReport {
    std::string domain;
    std::string model_hash;
    Eye eye = Eye::Left;
    std::size_t count = 0;
    std::array<double, 3> mean_l1{};
    std::vector<std::string> sample_ids;  // sorted

    std::string to_json() const;
    std::string to_csv() const;
};

double l1_distance(const PixelPoint& a, const PixelPoint& b);

EvalReport mean_l1_of(std::span<const KeypointTriple> pred, std::span<const KeypointTriple> gt);

// Refuses any sample whose id appears in `adaptation_ids`.
EvalReport mean_l1(Model& params, std::span<const StereoSample> labeled, Eye eye,
                   std::span<const std::string> adaptation_ids = {});

struct ComparisonRow {
    std::string keypoint;
    double before = 0.0;
    double after = 0.0;
    double reduction = 0.0;  // percent
};

struct Comparison {
    std::vector<ComparisonRow> rows;
    std::string to_csv() const;
    std::string to_text() const;
};

double relative_reduction(double before, double after);

Comparison compare_report(const EvalReport& before, const EvalReport& after);

using Pixel = std::pair<int, int>;  // (x, y)

// In-image pixels of the vp-li and vp-ri edges, sorted and unique.
std::vector<Pixel> triangle_pixels(const KeypointTriple& t, int width, int height);

// Border points where triangle edges leave the image.
std::vector<Pixel> edge_exit_points(const KeypointTriple& t, int width, int height);

// Ground truth in green, prediction in red, drawn over the image. Keypoints
// outside the image get a hollow marker where their edge meets the border.
Image render_overlay(const Image& image, const KeypointTriple& pred, const KeypointTriple& gt);

}  // namespace cropadapt
