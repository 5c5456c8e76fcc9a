#include "needlenav/correspond.hpp"
#include "needlenav/error.hpp"
#include "needlenav/phantom.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace needlenav;

namespace {

std::vector<Point3> separated_points(std::mt19937_64& rng, std::size_t n, double half_extent, double min_sep) {
  std::uniform_real_distribution<double> u(-half_extent, half_extent);
  std::vector<Point3> pts;
  while (pts.size() < n) {
    const Point3 p(u(rng), u(rng), u(rng));
    bool ok = true;
    for (const auto& q : pts) ok = ok && (p - q).norm() >= min_sep;
    if (ok) pts.push_back(p);
  }
  return pts;
}

// Scene = model points in shuffled order plus `extra` unrelated points.
struct Instance {
  std::vector<Point3> model, scene;
  std::vector<std::size_t> truth;  // model index -> scene index
};

Instance shuffled_instance(std::mt19937_64& rng, std::vector<Point3> model, std::size_t extra, double noise) {
  Instance inst;
  inst.model = model;
  std::normal_distribution<double> g(0.0, noise);
  std::vector<Point3> scene = model;
  for (auto& p : scene) p += Vec3(g(rng), g(rng), g(rng));
  for (const auto& p : oracle::random_points(rng, extra, 80.0)) scene.push_back(p);
  std::vector<std::size_t> order(scene.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  inst.scene.resize(scene.size());
  inst.truth.resize(model.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    inst.scene[k] = scene[order[k]];
    if (order[k] < model.size()) inst.truth[order[k]] = k;
  }
  return inst;
}

std::vector<std::size_t> unwrap(const Labeling& l) {
  std::vector<std::size_t> out;
  for (const auto& a : l.assignment) out.push_back(a.value());
  return out;
}

}  // namespace

TEST(Edm, BuildExamples) {
  const std::vector<Point3> two{{0, 0, 0}, {3, 4, 0}};
  const Edm e = build_edm(two);
  EXPECT_EQ(e.size(), 2u);
  EXPECT_DOUBLE_EQ(e(0, 1), 5.0);
  EXPECT_DOUBLE_EQ(e(1, 0), 5.0);

  const std::vector<Point3> tri{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  const Edm t = build_edm(tri);
  std::vector<double> d{t(0, 1), t(0, 2), t(1, 2)};
  std::sort(d.begin(), d.end());
  EXPECT_DOUBLE_EQ(d[0], 1.0);
  EXPECT_DOUBLE_EQ(d[1], 1.0);
  EXPECT_NEAR(d[2], std::sqrt(2.0), 1e-15);

  std::mt19937_64 rng(1);
  const Edm r = build_edm(oracle::random_points(rng, 9, 50.0));
  EXPECT_EQ(r.matrix(), r.matrix().transpose());
  EXPECT_EQ(r.matrix().diagonal().norm(), 0.0);

  EXPECT_THROW(build_edm(std::vector<Point3>{{1, 2, 3}}), Error);
}

TEST(Edm, RejectsInvalidMatrices) {
  Eigen::MatrixXd asym(2, 2);
  asym << 0, 1, 2, 0;
  EXPECT_THROW(Edm{asym}, Error);
  Eigen::MatrixXd diag(2, 2);
  diag << 1, 1, 1, 0;
  EXPECT_THROW(Edm{diag}, Error);
  Eigen::MatrixXd neg(2, 2);
  neg << 0, -1, -1, 0;
  EXPECT_THROW(Edm{neg}, Error);
}

TEST(MatchProfile, IdentityAndPermutation) {
  std::mt19937_64 rng(4);
  const auto model = separated_points(rng, 8, 60.0, 15.0);
  const Edm m = build_edm(model);
  const Labeling same = match_profile(m, m);
  for (std::size_t i = 0; i < model.size(); ++i) EXPECT_EQ(same.assignment[i], i);
  EXPECT_EQ(same.residual, 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    const Instance inst = shuffled_instance(rng, model, 0, 0.0);
    EXPECT_EQ(unwrap(match_profile(build_edm(inst.scene), m)), inst.truth);
  }
}

TEST(MatchProfile, FarSpuriousPointIsNeverAssigned) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = separated_points(rng, 6, 50.0, 15.0);
    Instance inst = shuffled_instance(rng, model, 0, 0.0);
    inst.scene.push_back(Point3(900.0, -700.0, 400.0));
    const Labeling l = match_profile(build_edm(inst.scene), build_edm(model));
    for (const auto& a : l.assignment) EXPECT_NE(a, inst.scene.size() - 1);
    EXPECT_EQ(unwrap(l), inst.truth);
  }
}

// Exhaustive (small) and branch-and-bound (large) paths against brute force.
TEST(MatchPermutation, EqualsExhaustiveEnumeration) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> n_dist(3, 8), extra_dist(0, 2);
  int unique_optimum = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = n_dist(rng);
    const std::size_t extra = n >= 7 ? std::min<std::size_t>(extra_dist(rng), 1) : extra_dist(rng);
    const auto model = oracle::random_points(rng, n, 50.0);
    const Instance inst = shuffled_instance(rng, model, extra, 4.0);
    const auto best = oracle::enumerate_injections(inst.scene, inst.model);
    const Labeling got = match_permutation(build_edm(inst.scene), build_edm(inst.model));
    EXPECT_NEAR(got.residual, best.cost, 1e-9);
    EXPECT_NEAR(oracle::injection_cost(inst.scene, inst.model, unwrap(got)), best.cost, 1e-9);
    if (best.ties == 1) {
      EXPECT_EQ(unwrap(got), best.assign);
      ++unique_optimum;
    }
  }
  EXPECT_GE(unique_optimum, 40);
}

TEST(MatchPermutation, BranchAndBoundEqualsEnumeration) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 4; ++trial) {
    // 11 scene points, 8 labels: 6.6 million injections, above the plain-enumeration limit.
    const Instance inst = shuffled_instance(rng, oracle::random_points(rng, 8, 50.0), 3, 3.0);
    const auto best = oracle::enumerate_injections(inst.scene, inst.model);
    const Labeling got = match_permutation(build_edm(inst.scene), build_edm(inst.model));
    EXPECT_NEAR(got.residual, best.cost, 1e-9);
    if (best.ties == 1) {
      EXPECT_EQ(unwrap(got), best.assign);
    }
  }
}

TEST(MatchPermutation, ZeroNoiseRecoveryIsComplete) {
  std::mt19937_64 rng(30);
  for (int trial = 0; trial < 100; ++trial) {
    const auto model = oracle::random_points(rng, 4 + trial % 7, 60.0);
    const Instance inst = shuffled_instance(rng, model, 0, 0.0);
    const Labeling got = match_permutation(build_edm(inst.scene), build_edm(model));
    EXPECT_EQ(unwrap(got), inst.truth);
    EXPECT_LT(got.residual, 1e-20);
  }
}

TEST(MatchPermutation, TenMarkersUnderHalfMillimetreNoise) {
  std::mt19937_64 rng(44);
  int correct = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto model = separated_points(rng, 10, 60.0, 20.0);
    const Instance inst = shuffled_instance(rng, model, 0, 0.5);
    correct += unwrap(match_permutation(build_edm(inst.scene), build_edm(model))) == inst.truth;
  }
  EXPECT_EQ(correct, 100);
}

TEST(MatchPermutation, DeviceAssetIsUniquelyLabelled) {
  const DeviceModel device;
  const Edm model = build_edm(device.markers);
  std::mt19937_64 rng(50);
  for (int trial = 0; trial < 50; ++trial) {
    const RigidTransform pose(oracle::random_rotation(rng), Vec3(100.0 * trial, -20.0, 300.0));
    std::vector<Point3> moved;
    for (const auto& p : device.markers) moved.push_back(pose.apply(p));
    const Instance inst = shuffled_instance(rng, moved, 0, 0.0);
    EXPECT_EQ(unwrap(match_permutation(build_edm(inst.scene), model)), inst.truth);
    EXPECT_EQ(unwrap(match_profile(build_edm(inst.scene), model)), inst.truth);
  }
}

TEST(MatchPermutation, RigidMotionLeavesLabelsUnchanged) {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 30; ++trial) {
    const auto model = oracle::random_points(rng, 6, 50.0);
    const Instance inst = shuffled_instance(rng, model, 1, 2.0);
    const RigidTransform t(oracle::random_rotation(rng), Vec3(5.0, 300.0, -40.0));
    std::vector<Point3> moved;
    for (const auto& p : inst.scene) moved.push_back(t.apply(p));
    const Edm m = build_edm(model);
    EXPECT_EQ(match_permutation(build_edm(inst.scene), m), match_permutation(build_edm(moved), m));
    EXPECT_EQ(match_profile(build_edm(inst.scene), m), match_profile(build_edm(moved), m));
  }
}

TEST(MatchPermutation, Guards) {
  std::mt19937_64 rng(70);
  const Edm big = build_edm(oracle::random_points(rng, 13, 50.0));
  EXPECT_THROW(match_permutation(big, big), Error);
  const Edm small = build_edm(oracle::random_points(rng, 4, 50.0));
  const Edm model = build_edm(oracle::random_points(rng, 6, 50.0));
  EXPECT_THROW(match_permutation(small, model), Error);
}

TEST(MatchPermutation, MissingMarkersAreAllowedWhenRequested) {
  std::mt19937_64 rng(80);
  const auto model = separated_points(rng, 7, 60.0, 20.0);
  // Scene lacks model marker 3.
  std::vector<Point3> scene;
  std::vector<std::optional<std::size_t>> truth(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    if (i == 3) continue;
    truth[i] = scene.size();
    scene.push_back(model[i]);
  }
  PermutationOptions opts;
  opts.max_missing = 1;
  const Labeling got = match_permutation(build_edm(scene), build_edm(model), opts);
  EXPECT_EQ(got.assignment, truth);
  EXPECT_EQ(got.assigned_count(), 6u);
}

TEST(Resolve, AgreementAndFirstFrame) {
  std::mt19937_64 rng(90);
  const auto pts = separated_points(rng, 5, 50.0, 10.0);
  const Edm model = build_edm(pts);
  Labeling a;
  a.assignment = {0, 1, 2, 3, 4};
  Labeling b = a;
  TrackState track;
  EXPECT_EQ(resolve(a, b, track, pts, model), a);
  EXPECT_TRUE(track.has_history());

  // No history: the permutation result wins even when the other differs.
  TrackState fresh;
  Labeling other;
  other.assignment = {1, 0, 2, 3, 4};
  EXPECT_EQ(resolve(other, a, fresh, pts, model), a);
}

TEST(Resolve, DisagreementGoesToClosestPreviousPosition) {
  // Marker 0 sits at the origin last frame; candidates are scene points 0 and 1.
  const std::vector<Point3> points{{0.1, 0.0, 0.0}, {6.0, 0.0, 0.0}, {0.0, 40.0, 0.0}, {0.0, 0.0, 40.0}};
  const std::vector<Point3> model_pts{{0.0, 0.0, 0.0}, {0.0, 40.0, 0.0}, {0.0, 0.0, 40.0}};
  const Edm model = build_edm(model_pts);
  TrackState track;
  track.previous = {Point3(0, 0, 0), Point3(0, 40, 0), Point3(0, 0, 40)};
  track.frame = 1;

  Labeling profile, permutation;
  profile.assignment = {1, 2, 3};
  permutation.assignment = {0, 2, 3};
  EXPECT_EQ(resolve(profile, permutation, track, points, model).assignment[0], 0u);
  EXPECT_EQ(resolve(permutation, profile, track, points, model).assignment[0], 0u);
  ASSERT_TRUE(track.previous[0]);
  EXPECT_TRUE(track.previous[0]->isApprox(points[0]));
}
