#pragma once

#include "needlenav/geom.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace needlenav {

/// Preoperative marker and lesion centroids in model (MRI) space.
struct MarkerModel {
  std::vector<std::string> marker_ids;
  std::vector<Point3> markers;
  std::vector<std::string> lesion_ids;
  std::vector<Point3> lesions;

  /// >= 4 markers, >= 1 lesion, distinct markers, ids sized to match.
  void validate() const;
  /// Throws ErrorCode::InvalidArgument for an unknown id.
  std::size_t lesion_index(std::string_view id) const;
};

/// `{"markers": [{"id","x","y","z"}], "lesions": [...]}`, millimetres.
MarkerModel parse_marker_model(std::string_view json_text);
MarkerModel load_marker_model(const std::filesystem::path& path);
std::string marker_model_to_json(const MarkerModel& model);

/// Least-squares rigid motion taking src onto dst (no scale, reflections
/// excluded). Throws ErrorCode::InsufficientData for fewer than three
/// pairs or mismatched lengths, ErrorCode::Degenerate for collinear input.
RigidTransform procrustes(std::span<const Point3> src, std::span<const Point3> dst);

/// Root-mean-square of |T(src_i) - dst_i|.
double rms_residual(const RigidTransform& transform, std::span<const Point3> src, std::span<const Point3> dst);

/// 3D thin-plate spline u(p) = A p + b + sum_i w_i U(|p - c_i|), U(r) = -r.
class TpsModel {
 public:
  const std::vector<Point3>& control_points() const { return control_points_; }
  /// N x 3, one warping coefficient per control point.
  const Eigen::MatrixX3d& warp() const { return warp_; }
  const Mat3& affine_linear() const { return affine_linear_; }
  const Vec3& affine_translation() const { return affine_translation_; }
  double lambda() const { return lambda_; }
  /// 2-norm condition number of the (normalized) linear system.
  double condition_number() const { return condition_; }
  bool ill_conditioned() const { return condition_ > 1e10; }

  Point3 apply(const Point3& p) const;

  /// w^T K w summed over the three axes; non-negative under the side conditions.
  double bending_energy() const;

 private:
  friend TpsModel fit_tps(std::span<const Point3>, std::span<const Point3>, double);

  std::vector<Point3> control_points_;
  Eigen::MatrixX3d warp_;
  Mat3 affine_linear_ = Mat3::Identity();
  Vec3 affine_translation_ = Vec3::Zero();
  double lambda_ = 0.0;
  double condition_ = 1.0;
};

/// Solves [K + lambda I, P; P^T, 0][W; A] = [Y; 0] with points centred and
/// scaled to unit RMS radius, so lambda is dimensionless. At lambda = 0 the
/// map interpolates the control points.
/// Throws ErrorCode::InsufficientData (< 4 pairs), ErrorCode::InvalidArgument
/// (lambda < 0, length mismatch) or ErrorCode::Singular (coplanar or
/// duplicate control points).
TpsModel fit_tps(std::span<const Point3> src, std::span<const Point3> dst, double lambda = 0.0);

Point3 tps_apply(const TpsModel& model, const Point3& p);

enum class TransformKind { Rigid, Tps };

const char* to_string(TransformKind kind);

struct LabelledPair {
  std::size_t model_index = 0;
  Point3 scene = Point3::Zero();
};

struct LesionEstimate {
  Point3 position = Point3::Zero();
  TransformKind kind = TransformKind::Tps;
  double residual_mm = 0.0;  // RMS marker residual of the fitted transform
};

/// Fits model markers onto their labelled scene positions and maps the
/// chosen lesion centroid. Needs >= 3 pairs (rigid) or >= 4 pairs (TPS).
LesionEstimate estimate_lesion(const MarkerModel& model, std::span<const LabelledPair> pairs, TransformKind kind,
                               double lambda = 0.0, std::size_t lesion_index = 0);

}  // namespace needlenav
