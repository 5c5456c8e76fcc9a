#pragma once

#include "needlenav/geom.hpp"
#include "needlenav/guidance.hpp"
#include "needlenav/image.hpp"
#include "needlenav/registration.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace needlenav {

struct PhantomConfig {
  std::size_t marker_count = 10;
  double surface_radius_mm = 60.0;
  double marker_cap_polar_deg = 90.0;   // markers lie within this angle of the dome apex
  double min_marker_separation_mm = 30.0;
  double lesion_depth_mm = 25.0;
  double lesion_cap_polar_deg = 30.0;
  double marker_radius_mm = 4.0;
  /// Patient placement jitter between the model (MRI) frame and the operating frame.
  double placement_yaw_jitter_deg = 10.0;
  double placement_shift_jitter_mm = 5.0;

  void validate() const;
};

/// Ground-truth phantom. The dome is centred on the operating-frame origin
/// with its apex along +z; `model` holds the same points in model space.
struct Phantom {
  MarkerModel model;
  RigidTransform world_from_model;
  double surface_radius_mm = 60.0;
  double marker_radius_mm = 4.0;

  std::vector<Point3> rest_markers_world() const;
  std::vector<Point3> rest_lesions_world() const;
};

/// Deterministic per seed. Throws ErrorCode::InvalidArgument for fewer than
/// four markers or an infeasible layout.
Phantom make_phantom(const PhantomConfig& cfg, std::uint64_t seed);
/// Phantom around an externally supplied marker model.
Phantom make_phantom(const MarkerModel& model, const RigidTransform& world_from_model, double marker_radius_mm = 4.0);

/// Euclidean distance from `p` to the convex hull of `points`.
double distance_to_hull(const Point3& p, std::span<const Point3> points);

struct GaussianKernel {
  Point3 centre = Point3::Zero();
  Vec3 amplitude = Vec3::Zero();  // mm
  double sigma_mm = 30.0;
};

/// Sum of Gaussian radial displacement kernels in the operating frame.
struct DeformationField {
  std::vector<GaussianKernel> kernels;

  Vec3 displacement(const Point3& p) const;
  Point3 apply(const Point3& p) const { return p + displacement(p); }
  void validate() const;
};

struct DeformationConfig {
  bool enabled = true;
  std::size_t kernel_count = 4;
  double sigma_min_mm = 40.0;
  double sigma_max_mm = 70.0;
  /// Kernel centres are sampled uniformly in the shell between these radii
  /// around the lesion.
  double centre_distance_min_mm = 0.0;
  double centre_spread_mm = 35.0;
  /// Lesion displacement magnitude is drawn from N(mean, sd) truncated to [min, max].
  double lesion_displacement_mean_mm = 4.3;
  double lesion_displacement_sd_mm = 1.0;
  double lesion_displacement_min_mm = 1.5;
  double lesion_displacement_max_mm = 7.5;
  /// Relative weight of each operating-frame axis in the kernel amplitudes.
  Vec3 axis_weights = Vec3(0.45, 0.35, 1.0);

  void validate() const;
};

/// Random field whose displacement at the (first) lesion has the sampled
/// magnitude. The field is not a thin-plate spline of the markers.
DeformationField random_field(const Phantom& phantom, const DeformationConfig& cfg, std::uint64_t seed);

struct DeviceModel {
  /// Marker centres in the device frame (+z needle rest axis, +y up); every
  /// pairwise distance differs.
  std::vector<Point3> markers{Point3(0.0, 45.0, -30.0), Point3(38.0, 58.0, -52.0), Point3(-27.0, 72.0, -78.0),
                              Point3(12.0, 40.0, -108.0)};
  double marker_radius_mm = 6.5;
  /// Pivot (device origin) to needle tip.
  double needle_length_mm = 80.0;
  GearRatios ratios;

  void validate() const;
};

struct SceneState {
  std::vector<Point3> markers;       // deformed breast markers, operating frame
  std::vector<Point3> lesions;       // true lesion positions
  std::vector<Point3> rest_lesions;  // undeformed lesion positions (for displacement)
  RigidTransform device_pose;        // world_from_device
  double gear1_deg = 0.0;
  double gear2_deg = 0.0;
  std::size_t frame = 0;
  double time_s = 0.0;

  NeedleAngles needle_angles(const DeviceModel& device) const;
  Vec3 needle_direction(const DeviceModel& device) const;  // world, unit
  Point3 needle_tip(const DeviceModel& device) const;      // world
  std::vector<Point3> device_markers(const DeviceModel& device) const;
};

/// Applies `field` to markers and lesions of the rest configuration.
SceneState deform(const Phantom& phantom, const DeformationField& field);

struct NeedleTissueConfig {
  double stiffness = 0.1;         // lesion push per mm advanced at contact
  double decay_mm = 20.0;         // push decays as exp(-distance / decay)
  double marker_coupling = 0.3;   // fraction of the push felt by surface markers

  void validate() const;
};

/// Advances the device (and needle tip) by `advance_mm` along the current
/// needle axis. The lesion is pushed along the axis by
/// stiffness * advance * exp(-d / decay), d being the tip-lesion distance
/// before the advance; markers receive the same kernel scaled by coupling.
SceneState insert_needle(const SceneState& state, const DeviceModel& device, double advance_mm,
                         const NeedleTissueConfig& tissue);

struct NoiseConfig {
  double centroid_sigma_px = 0.15;
  double dropout_probability = 0.0;
  double spurious_rate = 0.0;  // mean spurious blobs per view and frame

  void validate() const;
};

enum class ObservationMode { Pixel, Centroid };

struct StereoObservation {
  /// Centroid mode: noisy projected centroids in shuffled order.
  std::vector<Pixel> left;
  std::vector<Pixel> right;
  /// Pixel mode: rendered frames (detection is left to the caller).
  std::optional<GrayImage> left_image;
  std::optional<GrayImage> right_image;
  /// Indices into [breast markers..., device markers...] that were outside a
  /// camera frustum and therefore not observed.
  std::vector<std::size_t> out_of_frustum;
  std::vector<std::size_t> dropped;
};

/// Deterministic in (state, seed).
StereoObservation observe(const SceneState& state, const Phantom& phantom, const DeviceModel& device,
                          const StereoRig& rig, const NoiseConfig& noise, ObservationMode mode, std::uint64_t seed);

/// Anti-aliased bright discs on black, for pixel-mode observation and debugging.
void render_disc(GrayImage& img, const Pixel& centre, double radius_px, std::uint8_t peak = 230);

}  // namespace needlenav
