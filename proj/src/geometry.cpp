#include "cropadapt/geometry.hpp"

#include "cropadapt/error.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>

#include <cmath>
#include <sstream>

namespace cropadapt {

namespace {

constexpr double kMinDepth = 1e-9;
constexpr double kParallelEps = 1e-12;
// Slack on constraint comparisons so analytically-equal values survive rounding.
constexpr double kCompareEps = 1e-9;

bool finite(const PixelPoint& p) { return std::isfinite(p.u) && std::isfinite(p.v); }

}  // namespace

const char* eye_name(Eye eye) { return eye == Eye::Left ? "left" : "right"; }

void CameraRig::validate() const {
    std::ostringstream why;
    if (!(fx > 0) || !(fy > 0)) why << "focal lengths must be positive; ";
    if (!(baseline > 0)) why << "baseline must be positive; ";
    if (!(cam_height > 0)) why << "cam_height must be positive; ";
    if (width < 2 || height < 2) why << "image must be at least 2x2; ";
    if (!(cx >= 0 && cx < width)) why << "cx outside [0, width); ";
    if (!(cy >= 0 && cy < height)) why << "cy outside [0, height); ";
    if (!why.str().empty()) throw Error(ErrorCode::InvalidArgument, "CameraRig: " + why.str());
}

Eigen::Matrix3d CameraRig::intrinsics() const {
    Eigen::Matrix3d k;
    k << fx, 0.0, cx,
         0.0, fy, cy,
         0.0, 0.0, 1.0;
    return k;
}

void RowGeometry::validate() const {
    if (!(robot_width > 0) || !(robot_width < row_spacing))
        throw Error(ErrorCode::InvalidArgument, "RowGeometry: need 0 < robot_width < row_spacing");
}

Eigen::Matrix3d rotation_matrix(const Angles& a) {
    const Eigen::Matrix3d yaw = Eigen::AngleAxisd(a.yaw, Eigen::Vector3d::UnitY()).toRotationMatrix();
    const Eigen::Matrix3d pitch = Eigen::AngleAxisd(a.pitch, Eigen::Vector3d::UnitX()).toRotationMatrix();
    const Eigen::Matrix3d roll = Eigen::AngleAxisd(a.roll, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    return roll * pitch * yaw;
}

Eigen::Vector3d eye_center(const CameraRig& rig, const Pose& pose, Eye eye) {
    Eigen::Vector3d c(pose.x_off, 0.0, 0.0);
    if (eye == Eye::Right) c += rotation_matrix(angles_of(pose)).transpose() * Eigen::Vector3d(rig.baseline, 0.0, 0.0);
    return c;
}

Eigen::Vector3d to_homogeneous(const PixelPoint& p) { return {p.u, p.v, 1.0}; }

PixelPoint from_homogeneous(const Eigen::Vector3d& h) { return {h.x() / h.z(), h.y() / h.z()}; }

PixelPoint intersect_row(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double row) {
    const Eigen::Vector3d line = a.cross(b);
    const Eigen::Vector3d edge(0.0, 1.0, -row);
    const Eigen::Vector3d x = line.cross(edge);
    if (std::abs(x.z()) < kParallelEps * line.norm() || line.norm() == 0.0)
        throw Error(ErrorCode::DegenerateView, "line is parallel to the image row or undefined");
    return {x.x() / x.z(), row};
}

PixelPoint ground_point_to_pixel(const CameraRig& rig, const Pose& pose, double x, double z, Eye eye) {
    const Eigen::Matrix3d r = rotation_matrix(angles_of(pose));
    Eigen::Vector3d pc = r * (Eigen::Vector3d(x, rig.cam_height, z) - Eigen::Vector3d(pose.x_off, 0.0, 0.0));
    if (eye == Eye::Right) pc.x() -= rig.baseline;
    if (pc.z() <= kMinDepth) {
        std::ostringstream msg;
        msg << "ground point (" << x << ", " << z << ") has camera depth " << pc.z();
        throw Error(ErrorCode::PointBehindCamera, msg.str());
    }
    return {rig.cx + rig.fx * pc.x() / pc.z(), rig.cy + rig.fy * pc.y() / pc.z()};
}

GroundPoint pixel_to_ground(const CameraRig& rig, const Pose& pose, const PixelPoint& p, Eye eye) {
    const Eigen::Matrix3d r = rotation_matrix(angles_of(pose));
    const Eigen::Vector3d ray_cam((p.u - rig.cx) / rig.fx, (p.v - rig.cy) / rig.fy, 1.0);
    const Eigen::Vector3d ray = r.transpose() * ray_cam;
    const Eigen::Vector3d c = eye_center(rig, pose, eye);
    const double drop = rig.cam_height - c.y();
    if (!(ray.y() > kParallelEps) || !(drop > 0.0)) {
        std::ostringstream msg;
        msg << "pixel (" << p.u << ", " << p.v << ") does not see the ground";
        throw Error(ErrorCode::RayAboveHorizon, msg.str());
    }
    const double t = drop / ray.y();
    return {c.x() + t * ray.x(), c.z() + t * ray.z()};
}

KeypointTriple gt_keypoints_from_center(const CameraRig& rig, const Eigen::Vector3d& center,
                                        const Angles& angles, const RowGeometry& rows) {
    const Eigen::Matrix3d r = rotation_matrix(angles);
    const Eigen::Matrix3d k = rig.intrinsics();
    const Eigen::Matrix3d k_inv_t = k.inverse().transpose();

    const Eigen::Vector3d dir = r * Eigen::Vector3d::UnitZ();
    if (dir.z() <= kMinDepth) throw Error(ErrorCode::DegenerateView, "row direction is not in front of the camera");
    const Eigen::Vector3d vp_h = k * dir;

    auto intercept = [&](double row_x) {
        const Eigen::Vector3d on_row = r * (Eigen::Vector3d(row_x, rig.cam_height, 0.0) - center);
        const Eigen::Vector3d line = k_inv_t * on_row.cross(dir);
        const Eigen::Vector3d x = line.cross(Eigen::Vector3d(0.0, 1.0, -rig.bottom_v()));
        if (std::abs(x.z()) < kParallelEps * line.norm())
            throw Error(ErrorCode::DegenerateView, "imaged row line is parallel to the bottom edge");
        return PixelPoint{x.x() / x.z(), rig.bottom_v()};
    };

    KeypointTriple t;
    t.vp = from_homogeneous(vp_h);
    t.li = intercept(-0.5 * rows.row_spacing);
    t.ri = intercept(0.5 * rows.row_spacing);
    if (!(t.li.u < t.ri.u)) throw Error(ErrorCode::DegenerateView, "row intercepts are not ordered left to right");
    return t;
}

KeypointTriple gt_keypoints(const CameraRig& rig, const Pose& pose, const RowGeometry& rows, Eye eye) {
    return gt_keypoints_from_center(rig, eye_center(rig, pose, eye), angles_of(pose), rows);
}

Eigen::Matrix3d rotation_homography(const CameraRig& rig, const Angles& angles) {
    const Eigen::Matrix3d k = rig.intrinsics();
    return k * rotation_matrix(angles).transpose() * k.inverse();
}

Eigen::Matrix3d rotation_homography_inverse(const CameraRig& rig, const Angles& angles) {
    const Eigen::Matrix3d k = rig.intrinsics();
    return k * rotation_matrix(angles) * k.inverse();
}

PitchYaw estimate_pitch_yaw(const CameraRig& rig, const PixelPoint& vp, double roll) {
    const Eigen::Vector3d ray((vp.u - rig.cx) / rig.fx, (vp.v - rig.cy) / rig.fy, 1.0);
    // Undo roll about the optical axis; the remaining ray is Rx(pitch) Ry(yaw) e_z.
    const Eigen::Vector3d derolled = Eigen::AngleAxisd(-roll, Eigen::Vector3d::UnitZ()) * ray;
    PitchYaw out;
    out.pitch = std::atan2(-derolled.y(), derolled.z());
    out.yaw = std::atan2(derolled.x(), std::hypot(derolled.y(), derolled.z()));
    return out;
}

namespace {

KeypointTriple apply_homography(const CameraRig& rig, const KeypointTriple& t, const Eigen::Matrix3d& h) {
    if (!finite(t.vp) || !finite(t.li) || !finite(t.ri)) throw Error(ErrorCode::DegenerateView, "non-finite keypoint");
    const Eigen::Vector3d vp = h * to_homogeneous(t.vp);
    const Eigen::Vector3d li = h * to_homogeneous(t.li);
    const Eigen::Vector3d ri = h * to_homogeneous(t.ri);
    if (std::abs(vp.z()) < kParallelEps * vp.norm())
        throw Error(ErrorCode::DegenerateView, "vanishing point maps to infinity");
    KeypointTriple out;
    out.vp = from_homogeneous(vp);
    out.li = intersect_row(vp, li, rig.bottom_v());
    out.ri = intersect_row(vp, ri, rig.bottom_v());
    return out;
}

}  // namespace

KeypointTriple canonicalize_triple(const CameraRig& rig, const KeypointTriple& t, const Angles& angles) {
    return apply_homography(rig, t, rotation_homography(rig, angles));
}

KeypointTriple decanonicalize_triple(const CameraRig& rig, const KeypointTriple& t, const Angles& angles) {
    return apply_homography(rig, t, rotation_homography_inverse(rig, angles));
}

GeometricPrior compute_prior(const CameraRig& rig, const RowGeometry& rows) {
    rig.validate();
    rows.validate();
    if (rig.cy >= rig.bottom_v())
        throw Error(ErrorCode::HorizonBelowBottom, "principal point row must lie above the bottom image edge");

    // Pixels per meter of lateral offset along the bottom edge of the canonical view.
    const double scale = rig.fx * (rig.bottom_v() - rig.cy) / (rig.fy * rig.cam_height);
    const double half = 0.5 * rows.row_spacing;
    const double m = rows.max_offset();

    GeometricPrior p;
    // Robot hugging the right row (x_off = +m) pushes both intercepts left.
    p.li_bounds = {rig.cx + scale * (-half - m), rig.cx + scale * (-half + m)};
    p.ri_bounds = {rig.cx + scale * (half - m), rig.cx + scale * (half + m)};
    p.base_width = scale * rows.row_spacing;
    p.intercept_disparity = scale * rig.baseline;
    p.vp_canonical = {rig.cx, rig.cy};
    return p;
}

EyeCheck check_eye(const GeometricPrior& prior, const KeypointTriple& canonical, const ConstraintTolerances& tol,
                   Eye eye) {
    EyeCheck c;
    const double margin = tol.bounds_margin + kCompareEps;
    const double shift = eye == Eye::Right ? prior.intercept_disparity : 0.0;
    c.bounds_ok = prior.li_bounds.contains(canonical.li.u + shift, margin) &&
                  prior.ri_bounds.contains(canonical.ri.u + shift, margin);
    c.measured_width = canonical.ri.u - canonical.li.u;
    c.width_ok = std::abs(c.measured_width - prior.base_width) <= tol.width_rel_tol * prior.base_width + kCompareEps;
    return c;
}

ConstraintReport check_constraints(const GeometricPrior& prior, const KeypointTriple& canonical_left,
                                   const KeypointTriple& canonical_right, const ConstraintTolerances& tol) {
    ConstraintReport r;
    r.left = check_eye(prior, canonical_left, tol, Eye::Left);
    r.right = check_eye(prior, canonical_right, tol, Eye::Right);
    r.bounds_ok = r.left.bounds_ok && r.right.bounds_ok;
    r.width_ok = r.left.width_ok && r.right.width_ok;
    r.measured_width = 0.5 * (r.left.measured_width + r.right.measured_width);

    const double d_li = canonical_left.li.u - canonical_right.li.u;
    const double d_ri = canonical_left.ri.u - canonical_right.ri.u;
    r.measured_disparity = 0.5 * (d_li + d_ri);
    const double limit = tol.disp_abs_tol + kCompareEps;
    r.disparity_ok = std::abs(d_li - prior.intercept_disparity) <= limit &&
                     std::abs(d_ri - prior.intercept_disparity) <= limit;
    r.passed = r.bounds_ok && r.width_ok && r.disparity_ok;
    return r;
}

KeypointTriple transfer_to_other_eye(const CameraRig& rig, const KeypointTriple& t, const Angles& angles, Eye from) {
    // Ground-plane geometry does not depend on x_off, so a zero offset suffices.
    const Pose pose{angles.roll, angles.pitch, angles.yaw, 0.0};
    const Eye to = from == Eye::Left ? Eye::Right : Eye::Left;
    auto map = [&](const PixelPoint& p) {
        try {
            const GroundPoint g = pixel_to_ground(rig, pose, p, from);
            const PixelPoint q = ground_point_to_pixel(rig, pose, g.x, g.z, to);
            return intersect_row(to_homogeneous(t.vp), to_homogeneous(q), rig.bottom_v());
        } catch (const Error& e) {
            throw Error(ErrorCode::TransferFailed, e.what());
        }
    };
    KeypointTriple out;
    out.vp = t.vp;
    out.li = map(t.li);
    out.ri = map(t.ri);
    return out;
}

}  // namespace cropadapt
