#include "needlenav/registration.hpp"

#include "needlenav/error.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include "json.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace needlenav {

using nlohmann::json;

void MarkerModel::validate() const {
  if (markers.size() < 4) throw Error(ErrorCode::InvalidArgument, "marker model: need at least 4 markers");
  if (lesions.empty()) throw Error(ErrorCode::InvalidArgument, "marker model: need at least 1 lesion");
  if (marker_ids.size() != markers.size() || lesion_ids.size() != lesions.size())
    throw Error(ErrorCode::InvalidArgument, "marker model: id count does not match point count");
  for (const auto& p : markers)
    if (!p.allFinite()) throw Error(ErrorCode::InvalidArgument, "marker model: non-finite marker");
  for (const auto& p : lesions)
    if (!p.allFinite()) throw Error(ErrorCode::InvalidArgument, "marker model: non-finite lesion");
  for (std::size_t i = 0; i < markers.size(); ++i)
    for (std::size_t j = i + 1; j < markers.size(); ++j)
      if (!((markers[i] - markers[j]).norm() > 0.0))
        throw Error(ErrorCode::InvalidArgument, "marker model: coincident markers " + marker_ids[i] + ", " + marker_ids[j]);
}

std::size_t MarkerModel::lesion_index(std::string_view id) const {
  for (std::size_t i = 0; i < lesion_ids.size(); ++i)
    if (lesion_ids[i] == id) return i;
  throw Error(ErrorCode::InvalidArgument, "unknown lesion id '" + std::string(id) + "'");
}

namespace {

void read_points(const json& arr, const char* what, std::vector<std::string>& ids, std::vector<Point3>& pts) {
  if (!arr.is_array()) throw Error(ErrorCode::Parse, std::string("marker model: '") + what + "' must be an array");
  for (const auto& item : arr) {
    const json id = item.at("id");
    ids.push_back(id.is_string() ? id.get<std::string>() : id.dump());
    pts.emplace_back(item.at("x").get<double>(), item.at("y").get<double>(), item.at("z").get<double>());
  }
}

}  // namespace

MarkerModel parse_marker_model(std::string_view json_text) {
  MarkerModel model;
  try {
    const json doc = json::parse(json_text);
    read_points(doc.at("markers"), "markers", model.marker_ids, model.markers);
    read_points(doc.at("lesions"), "lesions", model.lesion_ids, model.lesions);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("marker model: ") + e.what());
  }
  model.validate();
  return model;
}

MarkerModel load_marker_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open marker model " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_marker_model(ss.str());
}

std::string marker_model_to_json(const MarkerModel& model) {
  json doc;
  const auto dump = [](const std::vector<std::string>& ids, const std::vector<Point3>& pts) {
    json arr = json::array();
    for (std::size_t i = 0; i < pts.size(); ++i)
      arr.push_back({{"id", ids[i]}, {"x", pts[i].x()}, {"y", pts[i].y()}, {"z", pts[i].z()}});
    return arr;
  };
  doc["markers"] = dump(model.marker_ids, model.markers);
  doc["lesions"] = dump(model.lesion_ids, model.lesions);
  return doc.dump(2);
}

RigidTransform procrustes(std::span<const Point3> src, std::span<const Point3> dst) {
  if (src.size() != dst.size()) throw Error(ErrorCode::InsufficientData, "procrustes: point lists differ in length");
  if (src.size() < 3) throw Error(ErrorCode::InsufficientData, "procrustes: need at least 3 pairs");

  const auto n = static_cast<double>(src.size());
  Vec3 src_mean = Vec3::Zero(), dst_mean = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    src_mean += src[i];
    dst_mean += dst[i];
  }
  src_mean /= n;
  dst_mean /= n;

  Mat3 cov = Mat3::Zero();
  Mat3 spread = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - src_mean;
    cov += (dst[i] - dst_mean) * a.transpose();
    spread += a * a.transpose();
  }

  // Collinear (or coincident) sources leave the rotation about their line undetermined.
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(spread);
  const double largest = eig.eigenvalues()(2);
  if (!(largest > 0.0) || eig.eigenvalues()(1) <= 1e-12 * largest)
    throw Error(ErrorCode::Degenerate, "procrustes: source points are collinear");

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  // Flip the direction of the smallest singular value to exclude reflections.
  if ((u * v.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 rotation = RigidTransform::nearest_rotation(u * d * v.transpose());
  return {rotation, dst_mean - rotation * src_mean};
}

double rms_residual(const RigidTransform& transform, std::span<const Point3> src, std::span<const Point3> dst) {
  if (src.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sum += (transform.apply(src[i]) - dst[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(src.size()));
}

namespace {

double kernel(double r) { return -r; }

}  // namespace

Point3 TpsModel::apply(const Point3& p) const {
  Point3 out = affine_linear_ * p + affine_translation_;
  for (std::size_t i = 0; i < control_points_.size(); ++i)
    out += warp_.row(static_cast<Eigen::Index>(i)).transpose() * kernel((p - control_points_[i]).norm());
  return out;
}

double TpsModel::bending_energy() const {
  double e = 0.0;
  const auto n = static_cast<Eigen::Index>(control_points_.size());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      e += kernel((control_points_[static_cast<std::size_t>(i)] - control_points_[static_cast<std::size_t>(j)]).norm()) *
           warp_.row(i).dot(warp_.row(j));
  return e;
}

TpsModel fit_tps(std::span<const Point3> src, std::span<const Point3> dst, double lambda) {
  if (src.size() != dst.size()) throw Error(ErrorCode::InvalidArgument, "fit_tps: point lists differ in length");
  if (src.size() < 4) throw Error(ErrorCode::InsufficientData, "fit_tps: need at least 4 pairs");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "fit_tps: lambda must be >= 0");

  const auto n = static_cast<Eigen::Index>(src.size());

  // Normalize the control points: centroid at the origin, unit RMS radius.
  Vec3 centre = Vec3::Zero();
  for (const auto& p : src) centre += p;
  centre /= static_cast<double>(n);
  double scale = 0.0;
  for (const auto& p : src) scale += (p - centre).squaredNorm();
  scale = std::sqrt(scale / static_cast<double>(n));
  if (!(scale > 0.0)) throw Error(ErrorCode::Singular, "fit_tps: control points coincide");

  std::vector<Point3> q(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) q[i] = (src[i] - centre) / scale;

  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(n + 4, n + 4);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 4, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j)
      system(i, j) = kernel((q[static_cast<std::size_t>(i)] - q[static_cast<std::size_t>(j)]).norm());
    system(i, i) += lambda;
    system(i, n) = system(n, i) = 1.0;
    for (Eigen::Index k = 0; k < 3; ++k) system(i, n + 1 + k) = system(n + 1 + k, i) = q[static_cast<std::size_t>(i)](k);
    rhs.row(i) = dst[static_cast<std::size_t>(i)].transpose();
  }

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(system);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond < 1e14))
    throw Error(ErrorCode::Singular,
                "fit_tps: singular system (duplicate or coplanar control points); use lambda > 0 for duplicates");

  const Eigen::MatrixXd solution = system.fullPivLu().solve(rhs);

  // Back to original units: w = w'/s, A = A'/s, b = b' - A' c / s.
  TpsModel model;
  model.control_points_.assign(src.begin(), src.end());
  model.warp_ = solution.topRows(n) / scale;
  const Eigen::RowVector3d b_norm = solution.row(n);
  const Mat3 a_norm = solution.bottomRows(3).transpose();
  model.affine_linear_ = a_norm / scale;
  model.affine_translation_ = b_norm.transpose() - a_norm * centre / scale;
  model.lambda_ = lambda;
  model.condition_ = cond;
  return model;
}

Point3 tps_apply(const TpsModel& model, const Point3& p) { return model.apply(p); }

const char* to_string(TransformKind kind) { return kind == TransformKind::Rigid ? "rigid" : "tps"; }

LesionEstimate estimate_lesion(const MarkerModel& model, std::span<const LabelledPair> pairs, TransformKind kind,
                               double lambda, std::size_t lesion_index) {
  const std::size_t needed = kind == TransformKind::Rigid ? 3 : 4;
  if (pairs.size() < needed)
    throw Error(ErrorCode::InsufficientData, std::string("estimate_lesion: not enough labelled pairs for ") + to_string(kind));
  if (lesion_index >= model.lesions.size()) throw Error(ErrorCode::InvalidArgument, "estimate_lesion: lesion index out of range");

  std::vector<Point3> src, dst;
  src.reserve(pairs.size());
  dst.reserve(pairs.size());
  for (const auto& pair : pairs) {
    if (pair.model_index >= model.markers.size())
      throw Error(ErrorCode::InvalidArgument, "estimate_lesion: model index out of range");
    src.push_back(model.markers[pair.model_index]);
    dst.push_back(pair.scene);
  }

  LesionEstimate est;
  est.kind = kind;
  double sum = 0.0;
  if (kind == TransformKind::Rigid) {
    const RigidTransform t = procrustes(src, dst);
    est.position = t.apply(model.lesions[lesion_index]);
    est.residual_mm = rms_residual(t, src, dst);
  } else {
    const TpsModel tps = fit_tps(src, dst, lambda);
    est.position = tps.apply(model.lesions[lesion_index]);
    for (std::size_t i = 0; i < src.size(); ++i) sum += (tps.apply(src[i]) - dst[i]).squaredNorm();
    est.residual_mm = std::sqrt(sum / static_cast<double>(src.size()));
  }
  return est;
}

}  // namespace needlenav
