#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace needlenav {

/// Ascending average ranks (1-based); ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

struct WilcoxonResult {
  double w_plus = 0.0;          // sum of ranks of positive differences a - b
  double w_minus = 0.0;
  std::size_t n_effective = 0;  // pairs left after dropping zero differences
  double z = 0.0;               // normal-approximation statistic (0 in exact mode)
  double p_two_sided = 1.0;
  bool exact = false;
};

constexpr std::size_t kWilcoxonExactMax = 12;
constexpr std::size_t kWilcoxonMinEffective = 5;

/// Wilcoxon matched-pairs signed-rank test. Zero differences are dropped;
/// ties among |a - b| get average ranks. Exact two-sided p (enumerating all
/// sign assignments of the observed ranks) for n_effective <= 12, normal
/// approximation with tie correction and no continuity correction above.
/// Throws ErrorCode::InvalidArgument for unequal lengths and
/// ErrorCode::InsufficientData when n_effective < 5.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Spearman rank correlation (Pearson correlation of average ranks).
/// Throws ErrorCode::InvalidArgument for length mismatch or constant input,
/// ErrorCode::InsufficientData for fewer than three samples.
double spearman(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> values);
double median(std::vector<double> values);

}  // namespace needlenav
