#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace needlenav {

/// Millimetres. Model space, operating (world) space and device frame all
/// use this type; the frame is implied by the owning structure.
using Point3 = Eigen::Vector3d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

class RigidTransform {
 public:
  RigidTransform() = default;
  /// Throws if `rotation` is not a proper rotation within 1e-9.
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform translation_only(const Vec3& t) { return {Mat3::Identity(), t}; }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Point3 apply(const Point3& p) const { return rotation_ * p + translation_; }
  Vec3 apply_vector(const Vec3& v) const { return rotation_ * v; }
  RigidTransform inverse() const;

  /// (*this) ∘ rhs: applies rhs first.
  RigidTransform operator*(const RigidTransform& rhs) const;

  /// Re-orthonormalizes the rotation (used after accumulating many compositions).
  static Mat3 nearest_rotation(const Mat3& m);

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

Point3 rigid_apply(const RigidTransform& transform, const Point3& p);

/// Camera pose looking from `eye` toward `target`. Camera axes follow the
/// usual pinhole convention: +z forward, +x right, +y down; `up` fixes roll.
RigidTransform look_at(const Point3& eye, const Point3& target, const Vec3& up);

enum class Camera { Left, Right };

/// Identical-intrinsics stereo pair. Poses map camera coordinates into the
/// operating frame (world_from_camera).
struct StereoRig {
  double focal_px = 700.0;
  double cx = 640.0;
  double cy = 360.0;
  double baseline_mm = 120.0;
  int width = 1280;
  int height = 720;
  RigidTransform left_pose;
  RigidTransform right_pose;

  /// Right camera displaced by `baseline_mm` along the left camera's +x axis.
  static StereoRig rectified(double focal_px, double cx, double cy, double baseline_mm,
                             const RigidTransform& left_pose, int width, int height);

  const RigidTransform& pose(Camera camera) const {
    return camera == Camera::Left ? left_pose : right_pose;
  }
  bool is_rectified(double tol = 1e-9) const;
  bool in_image(const Pixel& px) const;
  void validate() const;
};

/// Point in the chosen camera's own frame.
Point3 to_camera(const Point3& p, const StereoRig& rig, Camera camera);

/// Pinhole projection. Throws ErrorCode::OutOfRange for non-positive depth.
Pixel project(const Point3& p, const StereoRig& rig, Camera camera);

struct Triangulation {
  Point3 point = Point3::Zero();
  /// Rays closer to parallel than kNearParallelRad; depth is poorly conditioned.
  bool near_parallel = false;
};

constexpr double kNearParallelRad = 1e-3;

/// Closed-form depth-from-disparity on rectified rigs, midpoint of the
/// closest approach of the two viewing rays otherwise.
/// Throws ErrorCode::OutOfRange on non-positive disparity (or, for the ray
/// path, an intersection behind either camera).
Triangulation triangulate(const Pixel& left, const Pixel& right, const StereoRig& rig);

struct SphericalTarget {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double radius_mm = 0.0;
};

/// Device-frame convention: +z is the needle rest axis, +y is up. Azimuth is
/// measured in the x-z plane (rotation about y, positive toward +x),
/// elevation is the angle above the x-z plane (positive toward +y).
SphericalTarget to_spherical(const Vec3& v);
Vec3 from_spherical(const SphericalTarget& s);
/// Unit needle direction for the given angles.
Vec3 direction_from_angles(double azimuth_deg, double elevation_deg);

/// Angle between two non-zero vectors, degrees.
double angle_between_deg(const Vec3& a, const Vec3& b);

bool all_finite(const Point3& p);

}  // namespace needlenav
