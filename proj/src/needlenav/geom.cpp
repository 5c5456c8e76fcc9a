#include "needlenav/geom.hpp"

#include "needlenav/error.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace needlenav {

namespace {

constexpr double kRotationTol = 1e-9;

bool is_rotation(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= kRotationTol &&
         std::abs(r.determinant() - 1.0) <= kRotationTol;
}

}  // namespace

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite())
    throw Error(ErrorCode::InvalidArgument, "rigid transform: non-finite entries");
  if (!is_rotation(rotation))
    throw Error(ErrorCode::InvalidArgument, "rigid transform: rotation is not orthonormal with det +1");
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation_ = rotation_.transpose();
  inv.translation_ = -(inv.rotation_ * translation_);
  return inv;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation_ = nearest_rotation(rotation_ * rhs.rotation_);
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

Mat3 RigidTransform::nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

Point3 rigid_apply(const RigidTransform& transform, const Point3& p) { return transform.apply(p); }

RigidTransform look_at(const Point3& eye, const Point3& target, const Vec3& up) {
  Vec3 z = target - eye;
  if (z.norm() <= 0.0) throw Error(ErrorCode::InvalidArgument, "look_at: eye equals target");
  z.normalize();
  // Camera +y points down, i.e. against `up`.
  Vec3 x = z.cross(-up);
  if (x.norm() < 1e-12) throw Error(ErrorCode::InvalidArgument, "look_at: up is parallel to the view direction");
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return {RigidTransform::nearest_rotation(r), eye};
}

StereoRig StereoRig::rectified(double focal_px, double cx, double cy, double baseline_mm,
                               const RigidTransform& left_pose, int width, int height) {
  StereoRig rig;
  rig.focal_px = focal_px;
  rig.cx = cx;
  rig.cy = cy;
  rig.baseline_mm = baseline_mm;
  rig.width = width;
  rig.height = height;
  rig.left_pose = left_pose;
  rig.right_pose = left_pose * RigidTransform::translation_only(Vec3(baseline_mm, 0.0, 0.0));
  rig.validate();
  return rig;
}

bool StereoRig::is_rectified(double tol) const {
  const RigidTransform rel = left_pose.inverse() * right_pose;
  return (rel.rotation() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         (rel.translation() - Vec3(baseline_mm, 0.0, 0.0)).cwiseAbs().maxCoeff() <= tol * std::max(1.0, baseline_mm);
}

bool StereoRig::in_image(const Pixel& px) const {
  return px.u >= 0.0 && px.v >= 0.0 && px.u <= width - 1.0 && px.v <= height - 1.0;
}

void StereoRig::validate() const {
  if (!(focal_px > 0.0)) throw Error(ErrorCode::InvalidArgument, "stereo rig: focal length must be > 0");
  if (!(baseline_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "stereo rig: baseline must be > 0");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "stereo rig: image size must be positive");
}

Point3 to_camera(const Point3& p, const StereoRig& rig, Camera camera) {
  return rig.pose(camera).inverse().apply(p);
}

Pixel project(const Point3& p, const StereoRig& rig, Camera camera) {
  const Point3 c = to_camera(p, rig, camera);
  if (!(c.z() > 0.0)) throw Error(ErrorCode::OutOfRange, "project: point is behind the camera");
  return {rig.focal_px * c.x() / c.z() + rig.cx, rig.focal_px * c.y() / c.z() + rig.cy};
}

namespace {

Vec3 ray_in_camera(const Pixel& px, const StereoRig& rig) {
  return Vec3((px.u - rig.cx) / rig.focal_px, (px.v - rig.cy) / rig.focal_px, 1.0);
}

Triangulation triangulate_rectified(const Pixel& left, const Pixel& right, const StereoRig& rig) {
  const double disparity = left.u - right.u;
  if (!(disparity > 0.0)) throw Error(ErrorCode::OutOfRange, "triangulate: disparity must be positive");
  const double z = rig.focal_px * rig.baseline_mm / disparity;
  const double v = 0.5 * (left.v + right.v);
  const Point3 cam((left.u - rig.cx) * z / rig.focal_px, (v - rig.cy) * z / rig.focal_px, z);
  return {rig.left_pose.apply(cam), disparity / rig.focal_px < kNearParallelRad};
}

// Least-squares closest approach of the two rays; returns the midpoint.
Triangulation triangulate_rays(const Pixel& left, const Pixel& right, const StereoRig& rig) {
  const Point3 c0 = rig.left_pose.translation();
  const Point3 c1 = rig.right_pose.translation();
  const Vec3 d0 = rig.left_pose.apply_vector(ray_in_camera(left, rig)).normalized();
  const Vec3 d1 = rig.right_pose.apply_vector(ray_in_camera(right, rig)).normalized();

  Eigen::Matrix<double, 3, 2> a;
  a.col(0) = d0;
  a.col(1) = -d1;
  const Eigen::Vector2d st = a.colPivHouseholderQr().solve(c1 - c0);
  if (!(st(0) > 0.0) || !(st(1) > 0.0))
    throw Error(ErrorCode::OutOfRange, "triangulate: rays intersect behind a camera");
  const Point3 p = 0.5 * ((c0 + st(0) * d0) + (c1 + st(1) * d1));
  const double parallax = std::acos(std::clamp(d0.dot(d1), -1.0, 1.0));
  return {p, parallax < kNearParallelRad};
}

}  // namespace

Triangulation triangulate(const Pixel& left, const Pixel& right, const StereoRig& rig) {
  if (rig.is_rectified()) return triangulate_rectified(left, right, rig);
  return triangulate_rays(left, right, rig);
}

SphericalTarget to_spherical(const Vec3& v) {
  const double r = v.norm();
  if (!(r > 0.0)) throw Error(ErrorCode::InvalidArgument, "to_spherical: zero-length vector");
  SphericalTarget s;
  s.radius_mm = r;
  s.azimuth_deg = rad2deg(std::atan2(v.x(), v.z()));
  s.elevation_deg = rad2deg(std::asin(std::clamp(v.y() / r, -1.0, 1.0)));
  return s;
}

Vec3 direction_from_angles(double azimuth_deg, double elevation_deg) {
  const double az = deg2rad(azimuth_deg);
  const double el = deg2rad(elevation_deg);
  return {std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)};
}

Vec3 from_spherical(const SphericalTarget& s) {
  return s.radius_mm * direction_from_angles(s.azimuth_deg, s.elevation_deg);
}

double angle_between_deg(const Vec3& a, const Vec3& b) {
  // atan2 form stays accurate for nearly parallel vectors.
  return rad2deg(std::atan2(a.cross(b).norm(), a.dot(b)));
}

bool all_finite(const Point3& p) { return p.allFinite(); }

}  // namespace needlenav
