#include "needlenav/correspond.hpp"

#include "needlenav/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace needlenav {

Edm::Edm(Eigen::MatrixXd d) : d_(std::move(d)) {
  if (d_.rows() != d_.cols()) throw Error(ErrorCode::InvalidArgument, "edm: matrix is not square");
  for (Eigen::Index i = 0; i < d_.rows(); ++i) {
    if (d_(i, i) != 0.0) throw Error(ErrorCode::InvalidArgument, "edm: non-zero diagonal");
    for (Eigen::Index j = 0; j < d_.cols(); ++j) {
      if (!(d_(i, j) >= 0.0)) throw Error(ErrorCode::InvalidArgument, "edm: negative or non-finite entry");
      if (std::abs(d_(i, j) - d_(j, i)) > 1e-9) throw Error(ErrorCode::InvalidArgument, "edm: not symmetric");
    }
  }
}

std::vector<double> Edm::sorted_row(std::size_t i) const {
  std::vector<double> row(size());
  for (std::size_t j = 0; j < size(); ++j) row[j] = (*this)(i, j);
  std::sort(row.begin(), row.end());
  return row;
}

Edm Edm::permuted(std::span<const std::size_t> perm) const {
  const auto n = static_cast<Eigen::Index>(perm.size());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out(i, j) = d_(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]),
                     static_cast<Eigen::Index>(perm[static_cast<std::size_t>(j)]));
  return Edm(std::move(out));
}

Edm build_edm(std::span<const Point3> points) {
  if (points.size() < 2) throw Error(ErrorCode::InsufficientData, "build_edm: need at least two points");
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      d(i, j) = d(j, i) = (points[static_cast<std::size_t>(i)] - points[static_cast<std::size_t>(j)]).norm();
  return Edm(std::move(d));
}

std::size_t Labeling::assigned_count() const {
  return static_cast<std::size_t>(
      std::count_if(assignment.begin(), assignment.end(), [](const auto& a) { return a.has_value(); }));
}

double labeling_residual(const Edm& scene, const Edm& model,
                         std::span<const std::optional<std::size_t>> assignment) {
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (!assignment[i]) continue;
    for (std::size_t j = i + 1; j < assignment.size(); ++j) {
      if (!assignment[j]) continue;
      const double e = model(i, j) - scene(*assignment[i], *assignment[j]);
      sum += e * e;
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : sum / static_cast<double>(pairs);
}

Labeling match_profile(const Edm& scene, const Edm& model) {
  const std::size_t n = model.size();
  const std::size_t m = scene.size();

  std::vector<std::vector<double>> model_rows(n), scene_rows(m);
  for (std::size_t i = 0; i < n; ++i) model_rows[i] = model.sorted_row(i);
  for (std::size_t j = 0; j < m; ++j) scene_rows[j] = scene.sorted_row(j);

  struct Cost {
    double value;
    std::size_t model, scene;
  };
  std::vector<Cost> costs;
  costs.reserve(n * m);
  const std::size_t len = std::min(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < len; ++k) c += std::abs(model_rows[i][k] - scene_rows[j][k]);
      costs.push_back({c, i, j});
    }
  }
  std::stable_sort(costs.begin(), costs.end(), [](const Cost& a, const Cost& b) { return a.value < b.value; });

  Labeling out;
  out.assignment.assign(n, std::nullopt);
  std::vector<bool> used(m, false);
  for (const Cost& c : costs) {
    if (out.assignment[c.model] || used[c.scene]) continue;
    out.assignment[c.model] = c.scene;
    used[c.scene] = true;
  }
  out.residual = labeling_residual(scene, model, out.assignment);
  return out;
}

namespace {

constexpr std::size_t kMissing = std::numeric_limits<std::size_t>::max();

class InjectionSearch {
 public:
  InjectionSearch(const Edm& scene, const Edm& model, const PermutationOptions& options, bool prune)
      : scene_(scene), model_(model), options_(options), prune_(prune),
        current_(model.size(), kMissing), used_(scene.size(), false) {}

  void seed(const std::vector<std::size_t>& assignment, double cost) {
    best_ = assignment;
    best_cost_ = cost;
  }

  double cost_of(const std::vector<std::size_t>& assignment) const {
    double c = 0.0;
    for (std::size_t k = 0; k < assignment.size(); ++k) c += increment(k, assignment[k], assignment);
    return c;
  }

  void run() { descend(0, 0.0, 0); }

  const std::vector<std::size_t>& best() const { return best_; }
  bool found() const { return !best_.empty(); }

 private:
  double increment(std::size_t k, std::size_t j, const std::vector<std::size_t>& assignment) const {
    double c = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      if (j == kMissing || assignment[p] == kMissing) {
        c += options_.missing_pair_cost;
      } else {
        const double e = model_(k, p) - scene_(j, assignment[p]);
        c += e * e;
      }
    }
    return c;
  }

  void descend(std::size_t k, double cost, std::size_t missing) {
    if (prune_ && cost >= best_cost_) return;
    if (k == model_.size()) {
      if (cost < best_cost_) {
        best_cost_ = cost;
        best_ = current_;
      }
      return;
    }
    for (std::size_t j = 0; j < scene_.size(); ++j) {
      if (used_[j]) continue;
      const double c = increment(k, j, current_);
      used_[j] = true;
      current_[k] = j;
      descend(k + 1, cost + c, missing);
      used_[j] = false;
    }
    if (missing < options_.max_missing) {
      current_[k] = kMissing;
      descend(k + 1, cost + increment(k, kMissing, current_), missing + 1);
    }
    current_[k] = kMissing;
  }

  const Edm& scene_;
  const Edm& model_;
  PermutationOptions options_;
  bool prune_;
  std::vector<std::size_t> current_;
  std::vector<bool> used_;
  std::vector<std::size_t> best_;
  double best_cost_ = std::numeric_limits<double>::infinity();
};

double injection_count(std::size_t m, std::size_t n) {
  double count = 1.0;
  for (std::size_t k = 0; k < n; ++k) count *= static_cast<double>(m - k);
  return count;
}

}  // namespace

Labeling match_permutation(const Edm& scene, const Edm& model, const PermutationOptions& options) {
  const std::size_t n = model.size();
  const std::size_t m = scene.size();
  if (n > kMaxPermutationModel)
    throw Error(ErrorCode::OutOfRange, "match_permutation: more than 12 model markers");
  if (n < 2 || m < 2) throw Error(ErrorCode::InsufficientData, "match_permutation: need at least two points per set");
  if (m + options.max_missing < n)
    throw Error(ErrorCode::InsufficientData, "match_permutation: fewer scene points than required labels");

  const bool exhaustive = options.max_missing == 0 && injection_count(m, n) <= kExhaustiveInjectionLimit;
  InjectionSearch search(scene, model, options, !exhaustive);

  if (!exhaustive) {
    // The profile matcher usually lands on or near the optimum, which makes
    // the initial bound tight.
    const Labeling hint = match_profile(scene, model);
    std::vector<std::size_t> seed(n, kMissing);
    std::size_t missing = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (hint.assignment[i]) seed[i] = *hint.assignment[i];
      else ++missing;
    }
    if (missing <= options.max_missing) search.seed(seed, search.cost_of(seed));
  }
  search.run();

  Labeling out;
  out.assignment.assign(n, std::nullopt);
  for (std::size_t i = 0; i < n; ++i)
    if (search.best()[i] != kMissing) out.assignment[i] = search.best()[i];
  out.residual = labeling_residual(scene, model, out.assignment);
  return out;
}

bool TrackState::has_history() const {
  return std::any_of(previous.begin(), previous.end(), [](const auto& p) { return p.has_value(); });
}

Labeling resolve(const Labeling& profile, const Labeling& permutation, TrackState& track,
                 std::span<const Point3> points, const Edm& model) {
  const std::size_t n = permutation.assignment.size();
  if (profile.assignment.size() != n || model.size() != n)
    throw Error(ErrorCode::InvalidArgument, "resolve: labelings do not share the model size");
  if (track.previous.size() != n) track.previous.assign(n, std::nullopt);

  Labeling out;
  out.assignment.assign(n, std::nullopt);

  if (!track.has_history()) {
    out = permutation;
  } else {
    std::vector<bool> used(points.size(), false);
    std::vector<std::size_t> disputed;
    for (std::size_t i = 0; i < n; ++i) {
      if (profile.assignment[i] == permutation.assignment[i]) {
        out.assignment[i] = permutation.assignment[i];
        if (out.assignment[i]) used[*out.assignment[i]] = true;
      } else {
        disputed.push_back(i);
      }
    }

    const auto distance_to_previous = [&](std::size_t i, const std::optional<std::size_t>& j) {
      if (!j || !track.previous[i]) return std::numeric_limits<double>::infinity();
      return (points[*j] - *track.previous[i]).norm();
    };
    const auto closest = [&](std::size_t i) {
      return std::min(distance_to_previous(i, profile.assignment[i]),
                      distance_to_previous(i, permutation.assignment[i]));
    };
    // Markers whose history is most decisive claim their point first.
    std::stable_sort(disputed.begin(), disputed.end(),
                     [&](std::size_t a, std::size_t b) { return closest(a) < closest(b); });

    for (std::size_t i : disputed) {
      std::optional<std::size_t> first = permutation.assignment[i];
      std::optional<std::size_t> second = profile.assignment[i];
      if (distance_to_previous(i, second) < distance_to_previous(i, first)) std::swap(first, second);
      for (const auto& candidate : {first, second}) {
        if (candidate && !used[*candidate]) {
          out.assignment[i] = candidate;
          used[*candidate] = true;
          break;
        }
      }
    }
  }

  const Edm scene = points.size() >= 2 ? build_edm(points) : Edm();
  out.residual = points.size() >= 2 ? labeling_residual(scene, model, out.assignment) : 0.0;

  for (std::size_t i = 0; i < n; ++i)
    if (out.assignment[i]) track.previous[i] = points[*out.assignment[i]];
  ++track.frame;
  return out;
}

}  // namespace needlenav
