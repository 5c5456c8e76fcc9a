#include "needlenav/stats.hpp"

#include "needlenav/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace needlenav {

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

namespace {

// Upper and lower tail probabilities of W+ under H0 by enumerating the 2^n
// sign patterns of the observed ranks. Ranks are doubled so that average
// (half-integer) ranks become integers and the distribution can be tabulated.
double exact_two_sided(const std::vector<double>& ranks, double w_plus) {
  std::vector<long> doubled;
  long total = 0;
  for (double r : ranks) {
    doubled.push_back(std::lround(2.0 * r));
    total += doubled.back();
  }
  std::vector<double> counts(static_cast<std::size_t>(total) + 1, 0.0);
  counts[0] = 1.0;
  long reach = 0;
  for (long r : doubled) {
    for (long s = reach; s >= 0; --s)
      if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
    reach += r;
  }
  const double patterns = std::ldexp(1.0, static_cast<int>(ranks.size()));
  const long observed = std::lround(2.0 * w_plus);
  double lower = 0.0, upper = 0.0;
  for (long s = 0; s <= total; ++s) {
    if (s <= observed) lower += counts[static_cast<std::size_t>(s)];
    if (s >= observed) upper += counts[static_cast<std::size_t>(s)];
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / patterns);
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::InvalidArgument, "wilcoxon: samples must be paired");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (!std::isfinite(d)) throw Error(ErrorCode::InvalidArgument, "wilcoxon: non-finite sample");
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult res;
  res.n_effective = diffs.size();
  if (res.n_effective < kWilcoxonMinEffective)
    throw Error(ErrorCode::InsufficientData, "wilcoxon: fewer than 5 non-zero differences");

  std::vector<double> magnitudes;
  for (double d : diffs) magnitudes.push_back(std::abs(d));
  const std::vector<double> ranks = average_ranks(magnitudes);
  for (std::size_t i = 0; i < diffs.size(); ++i) (diffs[i] > 0.0 ? res.w_plus : res.w_minus) += ranks[i];

  const double n = static_cast<double>(res.n_effective);
  if (res.n_effective <= kWilcoxonExactMax) {
    res.exact = true;
    res.p_two_sided = exact_two_sided(ranks, res.w_plus);
    return res;
  }

  // Tie correction: subtract sum(t^3 - t) / 48 from the variance.
  std::vector<double> sorted = magnitudes;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double mean_w = n * (n + 1.0) / 4.0;
  const double var_w = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  res.z = (res.w_plus - mean_w) / std::sqrt(var_w);
  res.p_two_sided = std::min(1.0, std::erfc(std::abs(res.z) / std::sqrt(2.0)));
  return res;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::InvalidArgument, "spearman: samples differ in length");
  if (x.size() < 3) throw Error(ErrorCode::InsufficientData, "spearman: need at least 3 samples");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::InvalidArgument, "spearman: constant input");
  return sxy / std::sqrt(sxx * syy);
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace needlenav
