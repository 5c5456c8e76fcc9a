#pragma once

#include "needlenav/geom.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace needlenav {

/// Euclidean distance matrix: symmetric, zero diagonal, non-negative.
class Edm {
 public:
  Edm() = default;
  /// Validates symmetry (1e-9), zero diagonal and non-negativity.
  explicit Edm(Eigen::MatrixXd d);

  std::size_t size() const { return static_cast<std::size_t>(d_.rows()); }
  double operator()(std::size_t i, std::size_t j) const {
    return d_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const Eigen::MatrixXd& matrix() const { return d_; }

  /// Row `i` sorted ascending (includes the zero self-distance).
  std::vector<double> sorted_row(std::size_t i) const;

  /// Rows/columns reordered so that out(i,j) = (*this)(perm[i], perm[j]).
  Edm permuted(std::span<const std::size_t> perm) const;

 private:
  Eigen::MatrixXd d_;
};

/// Throws ErrorCode::InsufficientData for fewer than two points.
Edm build_edm(std::span<const Point3> points);

/// Partial map model index -> reconstructed (scene) index.
struct Labeling {
  std::vector<std::optional<std::size_t>> assignment;
  /// Mean squared difference between model and induced scene distances,
  /// over model pairs whose markers are both assigned.
  double residual = 0.0;

  std::size_t assigned_count() const;
  bool operator==(const Labeling& other) const { return assignment == other.assignment; }
};

double labeling_residual(const Edm& scene, const Edm& model,
                         std::span<const std::optional<std::size_t>> assignment);

/// Distance-profile matcher. Each model marker is compared with every scene
/// point through the sum of absolute differences of their ascending-sorted
/// EDM rows, truncated to the shorter row. Pairs are fixed greedily in
/// ascending cost order; no scene point is used twice.
Labeling match_profile(const Edm& scene, const Edm& model);

struct PermutationOptions {
  /// Model markers allowed to stay unlabelled (occlusion). 0 requires a full
  /// injection, which needs scene.size() >= model.size().
  std::size_t max_missing = 0;
  /// Cost charged for each model pair involving an unlabelled marker (mm^2).
  double missing_pair_cost = 64.0;
};

constexpr std::size_t kMaxPermutationModel = 12;
/// Problems with at most this many candidate injections are enumerated
/// without pruning.
constexpr double kExhaustiveInjectionLimit = 2.0e6;

/// Minimum mean-squared-error injection of model labels into scene points.
/// Exhaustive for small problems, depth-first branch and bound with
/// partial-cost pruning otherwise; both are exact.
/// Throws ErrorCode::OutOfRange when model.size() > 12 and
/// ErrorCode::InsufficientData when the scene cannot host enough labels.
Labeling match_permutation(const Edm& scene, const Edm& model, const PermutationOptions& options = {});

/// Per-model-marker memory of the last labelled position.
struct TrackState {
  std::vector<std::optional<Point3>> previous;
  std::size_t frame = 0;

  bool has_history() const;
};

/// Combines the two matchers. Agreeing labels are kept; on disagreement the
/// candidate closest to the marker's previous position wins. Without history
/// the permutation result (`permutation`) is adopted unchanged. Updates
/// `track` with the returned labelling.
Labeling resolve(const Labeling& profile, const Labeling& permutation, TrackState& track,
                 std::span<const Point3> points, const Edm& model);

}  // namespace needlenav
