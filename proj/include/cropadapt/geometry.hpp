#pragma once

#include <Eigen/Core>

#include <string>

namespace cropadapt {

// Rectified pinhole stereo rig. The right camera sits `baseline` meters along
// the +X axis of the left camera; both share intrinsics.
struct CameraRig {
    double fx = 100.0;
    double fy = 100.0;
    double cx = 80.0;
    double cy = 50.0;
    int width = 160;
    int height = 120;
    double baseline = 0.10;
    double cam_height = 0.50;

    void validate() const;
    Eigen::Matrix3d intrinsics() const;
    // Bottom image edge, where intercepts live.
    double bottom_v() const { return height - 1.0; }
};

struct RowGeometry {
    double row_spacing = 0.76;
    double robot_width = 0.50;

    void validate() const;
    // Largest lateral offset that keeps the robot body inside the corridor.
    double max_offset() const { return 0.5 * (row_spacing - robot_width); }
};

// Camera rotation (radians) and lateral offset of the left optical center
// from the corridor centerline (meters, positive toward the right row).
struct Pose {
    double roll = 0.0;
    double pitch = 0.0;
    double yaw = 0.0;
    double x_off = 0.0;
};

struct Angles {
    double roll = 0.0;
    double pitch = 0.0;
    double yaw = 0.0;
};

inline Angles angles_of(const Pose& p) { return {p.roll, p.pitch, p.yaw}; }

struct PixelPoint {
    double u = 0.0;
    double v = 0.0;
};

// Vanishing point plus the two row-line intercepts on the bottom image edge.
struct KeypointTriple {
    PixelPoint vp;
    PixelPoint li;
    PixelPoint ri;
};

enum class Eye { Left, Right };

const char* eye_name(Eye eye);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x, double margin = 0.0) const { return x >= lo - margin && x <= hi + margin; }
};

// Constraints on the canonical (zero roll/pitch/yaw) keypoint triangle.
struct GeometricPrior {
    Interval li_bounds;  // left eye
    Interval ri_bounds;  // left eye
    double base_width = 0.0;
    double intercept_disparity = 0.0;
    PixelPoint vp_canonical;
};

struct ConstraintTolerances {
    double width_rel_tol = 0.05;
    double disp_abs_tol = 2.0;
    double bounds_margin = 0.0;
};

struct EyeCheck {
    bool bounds_ok = false;
    bool width_ok = false;
    double measured_width = 0.0;
    bool ok() const { return bounds_ok && width_ok; }
};

struct ConstraintReport {
    bool bounds_ok = false;
    bool width_ok = false;
    bool disparity_ok = false;
    bool passed = false;
    double measured_width = 0.0;        // mean of both eyes
    double measured_disparity = 0.0;    // mean of li and ri disparities
    EyeCheck left;
    EyeCheck right;
};

// World frame: X right, Y down, Z forward along the rows. The ground plane is
// Y = cam_height, rows run along X = -/+ row_spacing/2, and the left optical
// center sits at (x_off, 0, 0). World-to-camera rotation applies yaw (about Y),
// then pitch (about X), then roll (about Z).
Eigen::Matrix3d rotation_matrix(const Angles& a);
Eigen::Vector3d eye_center(const CameraRig& rig, const Pose& pose, Eye eye);

PixelPoint ground_point_to_pixel(const CameraRig& rig, const Pose& pose, double x, double z, Eye eye);

struct GroundPoint {
    double x = 0.0;
    double z = 0.0;
};

GroundPoint pixel_to_ground(const CameraRig& rig, const Pose& pose, const PixelPoint& p, Eye eye);

KeypointTriple gt_keypoints(const CameraRig& rig, const Pose& pose, const RowGeometry& rows, Eye eye);

// Ground-truth triple seen by a camera at an arbitrary world center. For the
// left eye this is `gt_keypoints`; for the right eye under roll or yaw the
// optical center moves relative to the ground, which the canonical reference
// must account for.
KeypointTriple gt_keypoints_from_center(const CameraRig& rig, const Eigen::Vector3d& center,
                                        const Angles& angles, const RowGeometry& rows);

// Maps pixels of a camera rotated by `angles` onto the zero-rotation camera
// at the same optical center: H = K R^T K^-1.
Eigen::Matrix3d rotation_homography(const CameraRig& rig, const Angles& angles);
Eigen::Matrix3d rotation_homography_inverse(const CameraRig& rig, const Angles& angles);

struct PitchYaw {
    double pitch = 0.0;
    double yaw = 0.0;
};

PitchYaw estimate_pitch_yaw(const CameraRig& rig, const PixelPoint& vp, double roll);

KeypointTriple canonicalize_triple(const CameraRig& rig, const KeypointTriple& t, const Angles& angles);
// Inverse of canonicalize_triple: canonical frame back to the rotated camera.
KeypointTriple decanonicalize_triple(const CameraRig& rig, const KeypointTriple& t, const Angles& angles);

GeometricPrior compute_prior(const CameraRig& rig, const RowGeometry& rows);

// Bounds are stated for the left camera; the right camera sees every ground
// intercept shifted left by the intercept disparity.
EyeCheck check_eye(const GeometricPrior& prior, const KeypointTriple& canonical, const ConstraintTolerances& tol,
                   Eye eye);
ConstraintReport check_constraints(const GeometricPrior& prior, const KeypointTriple& canonical_left,
                                   const KeypointTriple& canonical_right, const ConstraintTolerances& tol);

KeypointTriple transfer_to_other_eye(const CameraRig& rig, const KeypointTriple& t, const Angles& angles, Eye from);

// Homogeneous helpers shared by the geometry and evaluation code.
Eigen::Vector3d to_homogeneous(const PixelPoint& p);
PixelPoint from_homogeneous(const Eigen::Vector3d& h);
// Intersection of the line through a and b with the horizontal line v = row.
PixelPoint intersect_row(const Eigen::Vector3d& a, const Eigen::Vector3d& b, double row);

}  // namespace cropadapt
