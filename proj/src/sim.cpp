#include "cropadapt/sim.hpp"

#include "cropadapt/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace cropadapt {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_cell(std::int64_t i, std::int64_t j, std::uint64_t salt) {
    return splitmix64(splitmix64(static_cast<std::uint64_t>(i) ^ salt) + static_cast<std::uint64_t>(j));
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0); }

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Bilinearly interpolated lattice noise in [0,1).
double value_noise(double x, double y, std::uint64_t salt) {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    const double tx = smooth(x - fx), ty = smooth(y - fy);
    const double a = unit(hash_cell(ix, iy, salt)), b = unit(hash_cell(ix + 1, iy, salt));
    const double c = unit(hash_cell(ix, iy + 1, salt)), d = unit(hash_cell(ix + 1, iy + 1, salt));
    return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
}

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Rgb scale(const Rgb& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

bool in_unit_cube(const Rgb& c) {
    return std::all_of(c.begin(), c.end(), [](double x) { return x >= 0.0 && x <= 1.0; });
}

// Round blobs scattered on a lattice of `cell`-sized squares.
bool speckle(double a, double b, double cell, double density, std::uint64_t salt) {
    const auto i = static_cast<std::int64_t>(std::floor(a / cell));
    const auto j = static_cast<std::int64_t>(std::floor(b / cell));
    const std::uint64_t h = hash_cell(i, j, salt);
    if (unit(h) >= density) return false;
    const double ca = (i + 0.2 + 0.6 * unit(splitmix64(h))) * cell;
    const double cb = (j + 0.2 + 0.6 * unit(splitmix64(h + 1))) * cell;
    const double r = cell * (0.15 + 0.2 * unit(splitmix64(h + 2)));
    return (a - ca) * (a - ca) + (b - cb) * (b - cb) < r * r;
}

constexpr std::uint64_t kSaltGround = 0x67726f756e64ULL;
constexpr std::uint64_t kSaltRow = 0x726f77ULL;
constexpr std::uint64_t kSaltClutter = 0x636c7574ULL;

}  // namespace

void DomainAppearance::validate() const {
    for (const auto& c : ground_palette)
        if (!in_unit_cube(c)) throw Error(ErrorCode::InvalidArgument, name + ": ground palette outside [0,1]^3");
    for (const auto& c : row_palette)
        if (!in_unit_cube(c)) throw Error(ErrorCode::InvalidArgument, name + ": row palette outside [0,1]^3");
    if (!in_unit_cube(sky)) throw Error(ErrorCode::InvalidArgument, name + ": sky color outside [0,1]^3");
    if (!(row_wall_height > 0)) throw Error(ErrorCode::InvalidArgument, name + ": row_wall_height must be positive");
    if (!(texture_scale > 0)) throw Error(ErrorCode::InvalidArgument, name + ": texture_scale must be positive");
    if (!(clutter_density >= 0 && clutter_density <= 1))
        throw Error(ErrorCode::InvalidArgument, name + ": clutter_density outside [0,1]");
    if (!(noise_sigma >= 0)) throw Error(ErrorCode::InvalidArgument, name + ": noise_sigma must be >= 0");
}

std::vector<std::string> domain_preset_names() {
    return {"early_corn", "late_corn_green", "late_corn_brown", "orchard"};
}

DomainAppearance domain_preset(const std::string& name) {
    DomainAppearance d;
    d.name = name;
    if (name == "early_corn") {
        // Short green rows on bare brown soil.
        d.ground_palette = {Rgb{0.45, 0.33, 0.22}, Rgb{0.58, 0.45, 0.32}};
        d.row_palette = {Rgb{0.20, 0.52, 0.15}, Rgb{0.38, 0.70, 0.25}};
        d.sky = {0.62, 0.74, 0.90};
        d.texture_scale = 0.05;
        d.row_wall_height = 0.30;
        d.clutter_density = 0.10;
        d.noise_sigma = 0.02;
    } else if (name == "late_corn_green") {
        // Tall dark canopy walls, shaded soil with leaf litter.
        d.ground_palette = {Rgb{0.26, 0.22, 0.16}, Rgb{0.36, 0.30, 0.22}};
        d.row_palette = {Rgb{0.08, 0.28, 0.08}, Rgb{0.20, 0.45, 0.14}};
        d.sky = {0.55, 0.65, 0.75};
        d.texture_scale = 0.08;
        d.row_wall_height = 1.6;
        d.clutter_density = 0.35;
        d.noise_sigma = 0.03;
    } else if (name == "late_corn_brown") {
        // Senesced brown stalks over brown soil: low row/ground contrast.
        d.ground_palette = {Rgb{0.40, 0.32, 0.24}, Rgb{0.52, 0.42, 0.30}};
        d.row_palette = {Rgb{0.55, 0.43, 0.26}, Rgb{0.72, 0.60, 0.40}};
        d.sky = {0.80, 0.80, 0.78};
        d.texture_scale = 0.07;
        d.row_wall_height = 1.8;
        d.clutter_density = 0.40;
        d.noise_sigma = 0.03;
    } else if (name == "orchard") {
        // Grass alley between hedge-like tree rows.
        d.ground_palette = {Rgb{0.30, 0.50, 0.20}, Rgb{0.45, 0.62, 0.30}};
        d.row_palette = {Rgb{0.12, 0.22, 0.10}, Rgb{0.35, 0.28, 0.18}};
        d.sky = {0.70, 0.82, 0.95};
        d.texture_scale = 0.12;
        d.row_wall_height = 1.0;
        d.clutter_density = 0.25;
        d.noise_sigma = 0.025;
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown domain preset: " + name);
    }
    return d;
}

void PoseRanges::validate(const RowGeometry& rows) const {
    const double envelope = 3.14159265358979323846 / 4.0;
    for (const Range* r : {&roll, &pitch, &yaw}) {
        if (r->lo > r->hi || r->lo <= -envelope || r->hi >= envelope)
            throw Error(ErrorCode::InvalidArgument, "pose angle range outside (-pi/4, pi/4) or reversed");
    }
    if (x_off.lo > x_off.hi || x_off.lo < -rows.max_offset() || x_off.hi > rows.max_offset())
        throw Error(ErrorCode::InvalidArgument, "x_off range exceeds the corridor clearance");
}

RayHit cast_ray(const CameraRig& rig, const Pose& pose, const RowGeometry& rows, const DomainAppearance& domain,
                Eye eye, double u, double v) {
    const Eigen::Vector3d origin = eye_center(rig, pose, eye);
    const Eigen::Vector3d dir =
        rotation_matrix(angles_of(pose)).transpose() * Eigen::Vector3d((u - rig.cx) / rig.fx, (v - rig.cy) / rig.fy, 1.0);

    RayHit hit;
    double best = std::numeric_limits<double>::infinity();
    if (dir.y() > 0.0) {
        best = (rig.cam_height - origin.y()) / dir.y();
        hit.surface = Surface::Ground;
    }
    const double top = rig.cam_height - domain.row_wall_height;
    for (const auto& [row_x, surface] : {std::pair{-0.5 * rows.row_spacing, Surface::LeftRow},
                                         std::pair{0.5 * rows.row_spacing, Surface::RightRow}}) {
        if (dir.x() == 0.0) continue;
        const double t = (row_x - origin.x()) / dir.x();
        if (t <= 0.0 || t >= best) continue;
        const double y = origin.y() + t * dir.y();
        if (y < top || y > rig.cam_height) continue;
        best = t;
        hit.surface = surface;
    }
    if (hit.surface != Surface::Sky) {
        hit.point = origin + best * dir;
        hit.elevation = rig.cam_height - hit.point.y();
    }
    return hit;
}

Rgb surface_albedo(const RayHit& hit, const DomainAppearance& d, std::uint64_t field_seed,
                   const Eigen::Vector3d& ray_dir) {
    const double s = d.texture_scale;
    const Eigen::Vector3d& p = hit.point;
    switch (hit.surface) {
        case Surface::Ground: {
            const double n = 0.65 * value_noise(p.x() / s, p.z() / s, field_seed ^ kSaltGround) +
                             0.35 * value_noise(p.x() / (4 * s), p.z() / (4 * s), field_seed ^ (kSaltGround + 1));
            if (speckle(p.x(), p.z(), 4 * s, d.clutter_density, field_seed ^ kSaltClutter))
                return scale(d.row_palette[1], 0.85);
            return lerp(d.ground_palette[0], d.ground_palette[1], n);
        }
        case Surface::LeftRow:
        case Surface::RightRow: {
            const std::uint64_t salt = field_seed ^ (hit.surface == Surface::LeftRow ? kSaltRow : kSaltRow + 7);
            // Vertical streaks (stalks) with darker bases.
            const double n = 0.7 * value_noise(p.z() / (0.5 * s), p.y() / (4 * s), salt) +
                             0.3 * value_noise(p.z() / (2 * s), p.y() / (2 * s), salt + 3);
            const double base = 1.0 - std::clamp(hit.elevation / d.row_wall_height, 0.0, 1.0);
            Rgb c = lerp(d.row_palette[0], d.row_palette[1], n);
            if (speckle(p.z(), p.y(), 3 * s, 0.5 * d.clutter_density, salt + 5)) c = scale(c, 0.6);
            return scale(c, 1.0 - 0.2 * base);
        }
        case Surface::Sky: {
            const double elev = std::clamp(-ray_dir.y() / ray_dir.norm() * 3.0, 0.0, 1.0);
            return scale(d.sky, 0.88 + 0.12 * elev);
        }
    }
    return {0.0, 0.0, 0.0};
}

StereoSample render_stereo(const CameraRig& rig, const Pose& pose, const RowGeometry& rows,
                           const DomainAppearance& domain, std::uint64_t seed, const SimOptions& opts) {
    rig.validate();
    rows.validate();
    domain.validate();

    StereoSample out;
    out.domain = domain.name;
    out.true_pose = pose;
    out.gt_left = gt_keypoints(rig, pose, rows, Eye::Left);
    out.gt_right = gt_keypoints(rig, pose, rows, Eye::Right);

    const std::uint64_t field_seed = splitmix64(seed);
    const double brightness = 0.9 + 0.2 * unit(splitmix64(seed ^ 0x6272696768ULL));
    const Eigen::Matrix3d rt = rotation_matrix(angles_of(pose)).transpose();

    for (Eye eye : {Eye::Left, Eye::Right}) {
        Image img(rig.width, rig.height);
        std::mt19937_64 noise_rng(splitmix64(seed + (eye == Eye::Left ? 101 : 202)));
        std::normal_distribution<double> noise(0.0, domain.noise_sigma);
        for (int y = 0; y < rig.height; ++y) {
            for (int x = 0; x < rig.width; ++x) {
                const RayHit hit = cast_ray(rig, pose, rows, domain, eye, x, y);
                const Eigen::Vector3d dir = rt * Eigen::Vector3d((x - rig.cx) / rig.fx, (y - rig.cy) / rig.fy, 1.0);
                const Rgb albedo = surface_albedo(hit, domain, field_seed, dir);
                for (int c = 0; c < 3; ++c) {
                    const double n = domain.noise_sigma > 0 ? noise(noise_rng) : 0.0;
                    img.at(x, y, c) = quantize_unit(albedo[c] * brightness + n);
                }
            }
        }
        (eye == Eye::Left ? out.left : out.right) = std::move(img);
    }

    std::mt19937_64 imu_rng(splitmix64(seed ^ 0x696d75ULL));
    std::normal_distribution<double> imu(0.0, 1.0);
    out.imu_roll = pose.roll + opts.imu_sigma * imu(imu_rng);
    return out;
}

Pose sample_pose(const PoseRanges& r, std::mt19937_64& rng) {
    auto draw = [&](const Range& range) {
        if (range.lo == range.hi) return range.lo;
        return std::uniform_real_distribution<double>(range.lo, range.hi)(rng);
    };
    Pose p;
    p.roll = draw(r.roll);
    p.pitch = draw(r.pitch);
    p.yaw = draw(r.yaw);
    p.x_off = draw(r.x_off);
    return p;
}

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

std::string sample_id(const std::string& domain, std::uint64_t seed, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "-s%llu-%06zu", static_cast<unsigned long long>(seed), index);
    return domain + buf;
}

std::vector<StereoSample> generate_samples(const CameraRig& rig, const RowGeometry& rows,
                                           const DomainAppearance& domain, const PoseRanges& ranges,
                                           std::size_t n, std::uint64_t seed, const SimOptions& opts) {
    ranges.validate(rows);
    std::vector<StereoSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::mt19937_64 rng = sample_rng(seed, i);
        const Pose pose = sample_pose(ranges, rng);
        StereoSample s = render_stereo(rig, pose, rows, domain, rng(), opts);
        s.id = sample_id(domain.name, seed, i);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace cropadapt
