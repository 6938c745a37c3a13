#pragma once

#include "cropadapt/geometry.hpp"
#include "cropadapt/image.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cropadapt {

using Rgb = std::array<double, 3>;

// Appearance of one field domain. Geometry never changes between domains.
struct DomainAppearance {
    std::string name;
    std::array<Rgb, 2> ground_palette{};
    std::array<Rgb, 2> row_palette{};
    Rgb sky{};
    double texture_scale = 0.05;    // meters per texture cell
    double row_wall_height = 0.3;   // meters
    double clutter_density = 0.1;   // [0,1]
    double noise_sigma = 0.02;      // intensity units

    void validate() const;
};

// Presets: early_corn (source), late_corn_green, late_corn_brown, orchard.
DomainAppearance domain_preset(const std::string& name);
std::vector<std::string> domain_preset_names();

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct PoseRanges {
    Range roll{-0.05, 0.05};
    Range pitch{-0.04, 0.04};
    Range yaw{-0.06, 0.06};
    Range x_off{-0.10, 0.10};

    void validate(const RowGeometry& rows) const;
};

struct SimOptions {
    double imu_sigma = 0.2 * 3.14159265358979323846 / 180.0;  // radians
};

struct StereoSample {
    std::string id;
    std::string domain;
    Image left;
    Image right;
    double imu_roll = 0.0;
    Pose true_pose;
    KeypointTriple gt_left;
    KeypointTriple gt_right;

    const Image& image(Eye eye) const { return eye == Eye::Left ? left : right; }
    const KeypointTriple& gt(Eye eye) const { return eye == Eye::Left ? gt_left : gt_right; }
};

enum class Surface { Sky, Ground, LeftRow, RightRow };

struct RayHit {
    Surface surface = Surface::Sky;
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    double elevation = 0.0;  // meters above the ground plane
};

// First surface hit by the ray through pixel (u, v) of the given eye.
RayHit cast_ray(const CameraRig& rig, const Pose& pose, const RowGeometry& rows, const DomainAppearance& domain,
                Eye eye, double u, double v);

// Albedo attached to world coordinates; `field_seed` selects the field's texture.
Rgb surface_albedo(const RayHit& hit, const DomainAppearance& domain, std::uint64_t field_seed,
                   const Eigen::Vector3d& ray_dir);

StereoSample render_stereo(const CameraRig& rig, const Pose& pose, const RowGeometry& rows,
                           const DomainAppearance& domain, std::uint64_t seed, const SimOptions& opts = {});

Pose sample_pose(const PoseRanges& ranges, std::mt19937_64& rng);

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index);
std::string sample_id(const std::string& domain, std::uint64_t seed, std::size_t index);

// In-memory equivalent of sim::generate_dataset; sample i depends only on
// (inputs, seed, i).
std::vector<StereoSample> generate_samples(const CameraRig& rig, const RowGeometry& rows,
                                           const DomainAppearance& domain, const PoseRanges& ranges,
                                           std::size_t n, std::uint64_t seed, const SimOptions& opts = {});

}  // namespace cropadapt
