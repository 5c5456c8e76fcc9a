#include "needlenav/phantom.hpp"

#include "needlenav/error.hpp"
#include "needlenav/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace needlenav {

void PhantomConfig::validate() const {
  if (marker_count < 4) throw Error(ErrorCode::InvalidArgument, "phantom: need at least 4 markers");
  if (!(surface_radius_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "phantom: surface radius must be > 0");
  if (!(lesion_depth_mm > 0.0 && lesion_depth_mm < surface_radius_mm))
    throw Error(ErrorCode::InvalidArgument, "phantom: lesion depth must lie inside the dome");
  if (!(marker_cap_polar_deg > 0.0 && marker_cap_polar_deg <= 90.0) || !(lesion_cap_polar_deg >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "phantom: invalid cap angles");
  if (!(marker_radius_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "phantom: marker radius must be > 0");
}

std::vector<Point3> Phantom::rest_markers_world() const {
  std::vector<Point3> out;
  for (const auto& m : model.markers) out.push_back(world_from_model.apply(m));
  return out;
}

std::vector<Point3> Phantom::rest_lesions_world() const {
  std::vector<Point3> out;
  for (const auto& l : model.lesions) out.push_back(world_from_model.apply(l));
  return out;
}

namespace {

Point3 cap_point(std::mt19937_64& rng, double radius, double max_polar_deg) {
  std::uniform_real_distribution<double> cos_polar(std::cos(deg2rad(max_polar_deg)), 1.0);
  std::uniform_real_distribution<double> azimuth(-kPi, kPi);
  const double c = cos_polar(rng);
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  const double a = azimuth(rng);
  return radius * Point3(s * std::cos(a), s * std::sin(a), c);
}

Mat3 rot_z(double deg) { return Eigen::AngleAxisd(deg2rad(deg), Vec3::UnitZ()).toRotationMatrix(); }
Mat3 rot_x(double deg) { return Eigen::AngleAxisd(deg2rad(deg), Vec3::UnitX()).toRotationMatrix(); }

// Euclidean projection onto the probability simplex.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumulative += u[i];
    const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

}  // namespace

double distance_to_hull(const Point3& p, std::span<const Point3> points) {
  if (points.empty()) throw Error(ErrorCode::InvalidArgument, "distance_to_hull: empty point set");
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd m(3, n);
  for (Eigen::Index i = 0; i < n; ++i) m.col(i) = points[static_cast<std::size_t>(i)];

  // Projected gradient on min |M w - p|^2 over the simplex.
  const Eigen::MatrixXd gram = m.transpose() * m;
  const double lipschitz = 2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram).eigenvalues().maxCoeff();
  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  for (int it = 0; it < 20000; ++it) {
    const Eigen::VectorXd grad = 2.0 * m.transpose() * (m * w - p);
    const Eigen::VectorXd next = project_simplex(w - grad / lipschitz);
    if ((next - w).lpNorm<Eigen::Infinity>() < 1e-13) {
      w = next;
      break;
    }
    w = next;
  }
  return (m * w - p).norm();
}

Phantom make_phantom(const PhantomConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = make_rng(seed, kStreamPhantom);

  std::vector<Point3> markers;
  int attempts = 0;
  while (markers.size() < cfg.marker_count) {
    if (++attempts > 100000)
      throw Error(ErrorCode::InvalidArgument, "phantom: cannot place markers with the requested separation");
    const Point3 candidate = cap_point(rng, cfg.surface_radius_mm, cfg.marker_cap_polar_deg);
    const bool clear = std::all_of(markers.begin(), markers.end(), [&](const Point3& m) {
      return (m - candidate).norm() >= cfg.min_marker_separation_mm;
    });
    if (clear) markers.push_back(candidate);
  }
  Point3 lesion = Point3::Zero();
  for (int tries = 0;; ++tries) {
    lesion = cap_point(rng, cfg.surface_radius_mm - cfg.lesion_depth_mm, cfg.lesion_cap_polar_deg);
    if (distance_to_hull(lesion, markers) <= 30.0) break;
    if (tries > 1000) throw Error(ErrorCode::InvalidArgument, "phantom: lesion cannot be placed near the marker hull");
  }

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Mat3 rotation = rot_z(cfg.placement_yaw_jitter_deg * unit(rng)) * rot_x(90.0);
  const Vec3 shift(cfg.placement_shift_jitter_mm * unit(rng), cfg.placement_shift_jitter_mm * unit(rng),
                   cfg.placement_shift_jitter_mm * unit(rng));

  Phantom phantom;
  phantom.world_from_model = RigidTransform(RigidTransform::nearest_rotation(rotation), shift);
  phantom.surface_radius_mm = cfg.surface_radius_mm;
  phantom.marker_radius_mm = cfg.marker_radius_mm;
  const RigidTransform model_from_world = phantom.world_from_model.inverse();
  // Marker/lesion positions are generated in the operating frame, then expressed in model space.
  for (std::size_t i = 0; i < markers.size(); ++i) {
    phantom.model.marker_ids.push_back("M" + std::to_string(i + 1));
    phantom.model.markers.push_back(model_from_world.apply(markers[i]));
  }
  phantom.model.lesion_ids.push_back("L1");
  phantom.model.lesions.push_back(model_from_world.apply(lesion));
  phantom.model.validate();
  return phantom;
}

Phantom make_phantom(const MarkerModel& model, const RigidTransform& world_from_model, double marker_radius_mm) {
  model.validate();
  Phantom phantom;
  phantom.model = model;
  phantom.world_from_model = world_from_model;
  phantom.marker_radius_mm = marker_radius_mm;
  double radius = 0.0;
  for (const auto& p : phantom.rest_markers_world()) radius = std::max(radius, p.norm());
  phantom.surface_radius_mm = radius;
  return phantom;
}

Vec3 DeformationField::displacement(const Point3& p) const {
  Vec3 d = Vec3::Zero();
  for (const auto& k : kernels) d += k.amplitude * std::exp(-(p - k.centre).squaredNorm() / (2.0 * k.sigma_mm * k.sigma_mm));
  return d;
}

void DeformationField::validate() const {
  for (const auto& k : kernels)
    if (!(k.sigma_mm > 0.0) || !k.centre.allFinite() || !k.amplitude.allFinite())
      throw Error(ErrorCode::InvalidArgument, "deformation field: kernels need finite values and sigma > 0");
}

void DeformationConfig::validate() const {
  if (!(centre_distance_min_mm >= 0.0 && centre_distance_min_mm <= centre_spread_mm))
    throw Error(ErrorCode::InvalidArgument, "deformation: need 0 <= centre_distance_min <= centre_spread");
  if (!(sigma_min_mm > 0.0 && sigma_min_mm <= sigma_max_mm))
    throw Error(ErrorCode::InvalidArgument, "deformation: need 0 < sigma_min <= sigma_max");
  if (!(lesion_displacement_min_mm >= 0.0 && lesion_displacement_min_mm <= lesion_displacement_max_mm))
    throw Error(ErrorCode::InvalidArgument, "deformation: invalid displacement bounds");
  if (!(axis_weights.minCoeff() >= 0.0) || !(axis_weights.maxCoeff() > 0.0))
    throw Error(ErrorCode::InvalidArgument, "deformation: axis weights must be non-negative and not all zero");
}

DeformationField random_field(const Phantom& phantom, const DeformationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DeformationField field;
  if (!cfg.enabled || cfg.kernel_count == 0) return field;

  auto rng = make_rng(seed, kStreamDeformation);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Point3 lesion = phantom.rest_lesions_world().front();

  for (std::size_t k = 0; k < cfg.kernel_count; ++k) {
    GaussianKernel kernel;
    Vec3 offset;
    do {
      offset = Vec3(gauss(rng), gauss(rng), gauss(rng));
    } while (offset.norm() == 0.0);
    const double r0 = cfg.centre_distance_min_mm, r1 = cfg.centre_spread_mm;
    const double r = std::cbrt(r0 * r0 * r0 + (r1 * r1 * r1 - r0 * r0 * r0) * unit(rng));
    kernel.centre = lesion + offset.normalized() * r;
    kernel.sigma_mm = cfg.sigma_min_mm + (cfg.sigma_max_mm - cfg.sigma_min_mm) * unit(rng);
    kernel.amplitude = Vec3(gauss(rng), gauss(rng), gauss(rng)).cwiseProduct(cfg.axis_weights);
    field.kernels.push_back(kernel);
  }

  double target = 0.0;
  do {
    target = cfg.lesion_displacement_mean_mm + cfg.lesion_displacement_sd_mm * gauss(rng);
  } while (target < cfg.lesion_displacement_min_mm || target > cfg.lesion_displacement_max_mm);

  const double current = field.displacement(lesion).norm();
  if (current > 1e-9) {
    for (auto& k : field.kernels) k.amplitude *= target / current;
  }
  return field;
}

void DeviceModel::validate() const {
  if (markers.size() < 3) throw Error(ErrorCode::InvalidArgument, "device: need at least 3 markers");
  if (!(needle_length_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "device: needle length must be > 0");
  if (!(marker_radius_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "device: marker radius must be > 0");
}

NeedleAngles SceneState::needle_angles(const DeviceModel& device) const {
  return gear_forward(gear1_deg, gear2_deg, device.ratios);
}

Vec3 SceneState::needle_direction(const DeviceModel& device) const {
  const NeedleAngles a = needle_angles(device);
  return device_pose.apply_vector(direction_from_angles(a.azimuth_deg, a.elevation_deg));
}

Point3 SceneState::needle_tip(const DeviceModel& device) const {
  return device_pose.translation() + device.needle_length_mm * needle_direction(device);
}

std::vector<Point3> SceneState::device_markers(const DeviceModel& device) const {
  std::vector<Point3> out;
  for (const auto& m : device.markers) out.push_back(device_pose.apply(m));
  return out;
}

SceneState deform(const Phantom& phantom, const DeformationField& field) {
  field.validate();
  SceneState s;
  for (const auto& m : phantom.rest_markers_world()) s.markers.push_back(field.apply(m));
  s.rest_lesions = phantom.rest_lesions_world();
  for (const auto& l : s.rest_lesions) s.lesions.push_back(field.apply(l));
  return s;
}

void NeedleTissueConfig::validate() const {
  if (!(stiffness >= 0.0) || !(decay_mm > 0.0) || !(marker_coupling >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "needle-tissue: need stiffness >= 0, decay > 0, coupling >= 0");
}

SceneState insert_needle(const SceneState& state, const DeviceModel& device, double advance_mm,
                         const NeedleTissueConfig& tissue) {
  if (!(advance_mm >= 0.0)) throw Error(ErrorCode::InvalidArgument, "insert_needle: advance must be >= 0");
  tissue.validate();

  SceneState next = state;
  const Vec3 axis = state.needle_direction(device);
  const Point3 tip = state.needle_tip(device);
  const double push = tissue.stiffness * advance_mm;
  for (auto& lesion : next.lesions) lesion += axis * push * std::exp(-(lesion - tip).norm() / tissue.decay_mm);
  for (auto& marker : next.markers)
    marker += axis * tissue.marker_coupling * push * std::exp(-(marker - tip).norm() / tissue.decay_mm);
  next.device_pose = RigidTransform(state.device_pose.rotation(), state.device_pose.translation() + advance_mm * axis);
  return next;
}

void NoiseConfig::validate() const {
  if (!(centroid_sigma_px >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise: sigma must be >= 0");
  if (!(dropout_probability >= 0.0 && dropout_probability <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "noise: dropout probability must lie in [0, 1]");
  if (!(spurious_rate >= 0.0)) throw Error(ErrorCode::InvalidArgument, "noise: spurious rate must be >= 0");
}

void render_disc(GrayImage& img, const Pixel& centre, double radius_px, std::uint8_t peak) {
  constexpr int kSub = 8;
  const int x0 = std::max(0, static_cast<int>(std::floor(centre.u - radius_px - 1.0)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(centre.u + radius_px + 1.0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(centre.v - radius_px - 1.0)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(centre.v + radius_px + 1.0)));
  const double r2 = radius_px * radius_px;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      // Pixel (x, y) covers [x - 0.5, x + 0.5] so that integer coordinates are pixel centres.
      int inside = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        const double py = y - 0.5 + (sy + 0.5) / kSub - centre.v;
        for (int sx = 0; sx < kSub; ++sx) {
          const double px = x - 0.5 + (sx + 0.5) / kSub - centre.u;
          inside += px * px + py * py <= r2;
        }
      }
      if (inside == 0) continue;
      const double value = img.at(x, y) + peak * static_cast<double>(inside) / (kSub * kSub);
      img.at(x, y) = static_cast<std::uint8_t>(std::min(255.0, std::round(value)));
    }
  }
}

StereoObservation observe(const SceneState& state, const Phantom& phantom, const DeviceModel& device,
                          const StereoRig& rig, const NoiseConfig& noise, ObservationMode mode, std::uint64_t seed) {
  noise.validate();
  rig.validate();
  auto rng = make_rng(seed, kStreamObservation + state.frame);
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  struct Target {
    Point3 centre;
    double radius_mm;
  };
  std::vector<Target> targets;
  for (const auto& m : state.markers) targets.push_back({m, phantom.marker_radius_mm});
  for (const auto& m : state.device_markers(device)) targets.push_back({m, device.marker_radius_mm});

  StereoObservation obs;
  struct Seen {
    Pixel left, right;
    double radius_left, radius_right;
  };
  std::vector<Seen> seen;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Point3 cl = to_camera(targets[i].centre, rig, Camera::Left);
    const Point3 cr = to_camera(targets[i].centre, rig, Camera::Right);
    // Draw the dropout sample unconditionally so the stream layout does not depend on visibility.
    const bool drop = unit(rng) < noise.dropout_probability;
    const double nl_u = jitter(rng), nl_v = jitter(rng), nr_u = jitter(rng), nr_v = jitter(rng);
    if (!(cl.z() > 0.0) || !(cr.z() > 0.0)) {
      obs.out_of_frustum.push_back(i);
      continue;
    }
    Pixel pl = project(targets[i].centre, rig, Camera::Left);
    Pixel pr = project(targets[i].centre, rig, Camera::Right);
    if (!rig.in_image(pl) || !rig.in_image(pr)) {
      obs.out_of_frustum.push_back(i);
      continue;
    }
    if (drop) {
      obs.dropped.push_back(i);
      continue;
    }
    const double s = noise.centroid_sigma_px;
    pl.u += s * nl_u;
    pl.v += s * nl_v;
    pr.u += s * nr_u;
    pr.v += s * nr_v;
    seen.push_back({pl, pr, rig.focal_px * targets[i].radius_mm / cl.z(), rig.focal_px * targets[i].radius_mm / cr.z()});
  }

  std::vector<Pixel> left, right;
  std::vector<double> left_r, right_r;
  for (const auto& s : seen) {
    left.push_back(s.left);
    right.push_back(s.right);
    left_r.push_back(s.radius_left);
    right_r.push_back(s.radius_right);
  }
  const auto add_spurious = [&](std::vector<Pixel>& px, std::vector<double>& radii) {
    std::poisson_distribution<int> count(noise.spurious_rate);
    const int k = noise.spurious_rate > 0.0 ? count(rng) : 0;
    for (int i = 0; i < k; ++i) {
      px.push_back({unit(rng) * (rig.width - 1), unit(rng) * (rig.height - 1)});
      radii.push_back(3.0 + 3.0 * unit(rng));
    }
  };
  add_spurious(left, left_r);
  add_spurious(right, right_r);

  // Hide marker identities from downstream stages.
  const auto shuffle = [&](std::vector<Pixel>& px, std::vector<double>& radii) {
    std::vector<std::size_t> order(px.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Pixel> p2;
    std::vector<double> r2;
    for (std::size_t i : order) {
      p2.push_back(px[i]);
      r2.push_back(radii[i]);
    }
    px = std::move(p2);
    radii = std::move(r2);
  };
  shuffle(left, left_r);
  shuffle(right, right_r);

  if (mode == ObservationMode::Centroid) {
    obs.left = std::move(left);
    obs.right = std::move(right);
  } else {
    GrayImage li(rig.width, rig.height), ri(rig.width, rig.height);
    for (std::size_t i = 0; i < left.size(); ++i) render_disc(li, left[i], left_r[i]);
    for (std::size_t i = 0; i < right.size(); ++i) render_disc(ri, right[i], right_r[i]);
    obs.left_image = std::move(li);
    obs.right_image = std::move(ri);
  }
  return obs;
}

}  // namespace needlenav
