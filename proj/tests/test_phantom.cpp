#include "needlenav/config.hpp"
#include "needlenav/error.hpp"
#include "needlenav/harness.hpp"
#include "needlenav/phantom.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace needlenav;

namespace {

bool same_points(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Scene whose needle tip touches the first lesion.
SceneState tip_on_lesion(const DeviceModel& device) {
  SceneState s;
  s.device_pose = RigidTransform::identity();
  s.lesions = {s.needle_tip(device)};
  s.rest_lesions = s.lesions;
  s.markers = {Point3(0, 0, 200), Point3(0, 300, 0)};
  return s;
}

}  // namespace

TEST(Phantom, DefaultLayoutAndDeterminism) {
  const PhantomConfig cfg;
  const Phantom a = make_phantom(cfg, 42);
  const Phantom b = make_phantom(cfg, 42);
  const Phantom c = make_phantom(cfg, 43);
  EXPECT_EQ(a.model.markers.size(), 10u);
  EXPECT_EQ(a.model.lesions.size(), 1u);
  EXPECT_TRUE(same_points(a.model.markers, b.model.markers));
  EXPECT_TRUE(same_points(a.model.lesions, b.model.lesions));
  EXPECT_FALSE(same_points(a.model.markers, c.model.markers));

  PhantomConfig three;
  three.marker_count = 3;
  EXPECT_THROW(make_phantom(three, 1), Error);
}

TEST(Phantom, LesionLiesNearMarkerHull) {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Phantom p = make_phantom(PhantomConfig{}, seed);
    const auto markers = p.rest_markers_world();
    EXPECT_LE(distance_to_hull(p.rest_lesions_world()[0], markers), 30.0);
    double min_sep = 1e9;
    for (std::size_t i = 0; i < markers.size(); ++i)
      for (std::size_t j = i + 1; j < markers.size(); ++j) min_sep = std::min(min_sep, (markers[i] - markers[j]).norm());
    EXPECT_GE(min_sep, PhantomConfig{}.min_marker_separation_mm - 1e-9);
  }
}

TEST(DistanceToHull, SimpleShapes) {
  const std::vector<Point3> cube{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
  EXPECT_NEAR(distance_to_hull(Point3(0.5, 0.5, 0.5), cube), 0.0, 1e-9);
  EXPECT_NEAR(distance_to_hull(Point3(0.5, 0.5, 3.0), cube), 2.0, 1e-6);
  EXPECT_NEAR(distance_to_hull(Point3(2.0, 2.0, 0.5), cube), std::sqrt(2.0), 1e-6);
}

TEST(Deformation, ZeroFieldAndSingleKernel) {
  const Phantom p = make_phantom(PhantomConfig{}, 5);
  const SceneState still = deform(p, DeformationField{});
  EXPECT_TRUE(same_points(still.markers, p.rest_markers_world()));
  EXPECT_TRUE(same_points(still.lesions, p.rest_lesions_world()));

  DeformationField field;
  field.kernels = {{p.rest_lesions_world()[0], Vec3(4.0, 1.0, 1.5), 1.0e4}};
  const SceneState moved = deform(p, field);
  EXPECT_LT((moved.lesions[0] - moved.rest_lesions[0] - Vec3(4.0, 1.0, 1.5)).norm(), 1e-12);
  for (std::size_t i = 0; i < moved.markers.size(); ++i)
    EXPECT_LT((moved.markers[i] - p.rest_markers_world()[i] - Vec3(4.0, 1.0, 1.5)).norm(), 1e-3);

  DeformationField bad;
  bad.kernels = {{Point3::Zero(), Vec3::Ones(), 0.0}};
  EXPECT_THROW(deform(p, bad), Error);
}

TEST(Deformation, DefaultFieldIsCalibratedAndNotRigid) {
  const PhantomConfig pc;
  const DeformationConfig dc;
  double sum = 0.0;
  const int seeds = 200;
  for (int s = 1; s <= seeds; ++s) {
    const Phantom p = make_phantom(pc, static_cast<std::uint64_t>(s));
    const DeformationField field = random_field(p, dc, static_cast<std::uint64_t>(s));
    const double d = field.displacement(p.rest_lesions_world()[0]).norm();
    EXPECT_GE(d, dc.lesion_displacement_min_mm - 1e-9);
    EXPECT_LE(d, dc.lesion_displacement_max_mm + 1e-9);
    sum += d;
  }
  const double mean = sum / seeds;
  EXPECT_GT(mean, 4.3 * 0.7);
  EXPECT_LT(mean, 4.3 * 1.3);

  // Markers move by different amounts, so no single translation explains the field.
  const Phantom p = make_phantom(pc, 3);
  const SceneState s = deform(p, random_field(p, dc, 3));
  double lo = 1e9, hi = 0.0;
  for (std::size_t i = 0; i < s.markers.size(); ++i) {
    const double d = (s.markers[i] - p.rest_markers_world()[i]).norm();
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  EXPECT_GT(hi - lo, 0.5);

  DeformationConfig off = dc;
  off.enabled = false;
  EXPECT_TRUE(random_field(p, off, 3).kernels.empty());
}

TEST(NeedleInsertion, PushFollowsExponentialKernel) {
  const DeviceModel device;
  NeedleTissueConfig tissue;
  tissue.stiffness = 0.1;
  tissue.decay_mm = 20.0;

  const SceneState at = tip_on_lesion(device);
  const SceneState pushed = insert_needle(at, device, 10.0, tissue);
  EXPECT_NEAR((pushed.lesions[0] - at.lesions[0] - Vec3(0, 0, 1.0)).norm(), 0.0, 1e-12);
  EXPECT_NEAR((pushed.needle_tip(device) - at.needle_tip(device)).norm(), 10.0, 1e-12);
  // Marker 0 is 120 mm ahead of the tip: coupling * push * exp(-6).
  EXPECT_NEAR(pushed.markers[0].z() - 200.0, tissue.marker_coupling * 1.0 * std::exp(-6.0), 1e-12);

  tissue.stiffness = 0.0;
  EXPECT_EQ(insert_needle(at, device, 10.0, tissue).lesions[0], at.lesions[0]);

  tissue.stiffness = 0.1;
  SceneState far = at;
  far.lesions[0] += Vec3(0, 0, 500.0);
  EXPECT_LT((insert_needle(far, device, 10.0, tissue).lesions[0] - far.lesions[0]).norm(), 1e-10);

  EXPECT_THROW(insert_needle(at, device, -1.0, tissue), Error);
}

TEST(Observation, NoiselessCentroidsAreExactProjections) {
  const SimConfig cfg = noiseless_config();
  const StereoRig rig = cfg.rig.build();
  const Phantom p = build_phantom(cfg, 2);
  const SceneState s = initial_scene(cfg, p, 2);
  const StereoObservation obs = observe(s, p, cfg.device, rig, cfg.noise, ObservationMode::Centroid, 7);
  std::vector<Point3> all = s.markers;
  for (const auto& m : s.device_markers(cfg.device)) all.push_back(m);
  EXPECT_EQ(obs.left.size() + obs.out_of_frustum.size(), all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (std::find(obs.out_of_frustum.begin(), obs.out_of_frustum.end(), i) != obs.out_of_frustum.end()) continue;
    const Pixel l = project(all[i], rig, Camera::Left);
    const bool found = std::any_of(obs.left.begin(), obs.left.end(),
                                   [&](const Pixel& q) { return q.u == l.u && q.v == l.v; });
    EXPECT_TRUE(found) << i;
  }
}

TEST(Observation, FullDropoutAndDeterminism) {
  SimConfig cfg;
  const StereoRig rig = cfg.rig.build();
  const Phantom p = build_phantom(cfg, 4);
  const SceneState s = initial_scene(cfg, p, 4);

  const StereoObservation a = observe(s, p, cfg.device, rig, cfg.noise, ObservationMode::Centroid, 9);
  const StereoObservation b = observe(s, p, cfg.device, rig, cfg.noise, ObservationMode::Centroid, 9);
  ASSERT_EQ(a.left.size(), b.left.size());
  for (std::size_t i = 0; i < a.left.size(); ++i) {
    EXPECT_EQ(a.left[i].u, b.left[i].u);
    EXPECT_EQ(a.right[i].v, b.right[i].v);
  }
  const StereoObservation img1 = observe(s, p, cfg.device, rig, cfg.noise, ObservationMode::Pixel, 9);
  const StereoObservation img2 = observe(s, p, cfg.device, rig, cfg.noise, ObservationMode::Pixel, 9);
  ASSERT_TRUE(img1.left_image && img2.left_image);
  EXPECT_EQ(img1.left_image->pixels, img2.left_image->pixels);

  cfg.noise.dropout_probability = 1.0;
  const StereoObservation none = observe(s, p, cfg.device, rig, cfg.noise, ObservationMode::Centroid, 9);
  EXPECT_TRUE(none.left.empty());
  EXPECT_TRUE(none.right.empty());
}

TEST(Observation, SpuriousBlobsAppear) {
  SimConfig cfg;
  cfg.noise.spurious_rate = 5.0;
  const StereoRig rig = cfg.rig.build();
  const Phantom p = build_phantom(cfg, 4);
  const SceneState s = initial_scene(cfg, p, 4);
  std::size_t extra = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto obs = observe(s, p, cfg.device, rig, cfg.noise, ObservationMode::Centroid, seed);
    extra += obs.left.size() - (14 - obs.out_of_frustum.size());
  }
  EXPECT_GT(extra, 50u);
}

TEST(Observation, TriangulatedDepthErrorDominates) {
  // Camera-frame error of triangulated markers under the default noise.
  const SimConfig cfg;
  const StereoRig rig = cfg.rig.build();
  Vec3 abs_sum = Vec3::Zero();
  std::size_t n = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Phantom p = build_phantom(cfg, seed);
    const SceneState s = initial_scene(cfg, p, seed);
    for (const auto& m : s.markers) {
      const Pixel l = project(m, rig, Camera::Left), r = project(m, rig, Camera::Right);
      for (int k = 0; k < 50; ++k) {
        SceneState one = s;
        one.markers = {m};
        one.frame = static_cast<std::size_t>(k);
        const auto obs = observe(one, p, cfg.device, rig, cfg.noise, ObservationMode::Centroid, seed);
        // Pick the observed centroid nearest the projected marker in each view.
        auto nearest = [](const std::vector<Pixel>& px, const Pixel& t) {
          return *std::min_element(px.begin(), px.end(), [&](const Pixel& a, const Pixel& b) {
            return std::hypot(a.u - t.u, a.v - t.v) < std::hypot(b.u - t.u, b.v - t.v);
          });
        };
        const Point3 q = triangulate(nearest(obs.left, l), nearest(obs.right, r), rig).point;
        abs_sum += (to_camera(q, rig, Camera::Left) - to_camera(m, rig, Camera::Left)).cwiseAbs();
        ++n;
      }
    }
  }
  const Vec3 mean = abs_sum / static_cast<double>(n);
  EXPECT_GT(mean.z(), mean.x());
  EXPECT_GT(mean.z(), mean.y());
}
