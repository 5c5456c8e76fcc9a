#pragma once

#include "needlenav/blobdetect.hpp"
#include "needlenav/geom.hpp"
#include "needlenav/guidance.hpp"
#include "needlenav/phantom.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace needlenav {

/// Camera placement in the operating frame; the rig is rectified.
struct RigConfig {
  double focal_px = 700.0;
  double cx = 640.0;
  double cy = 360.0;
  int width = 1280;
  int height = 720;
  double baseline_mm = 120.0;
  Point3 position = Point3(0.0, -150.0, 620.0);  // midpoint between the two camera centres
  Point3 look_at = Point3(0.0, 0.0, 30.0);
  Vec3 up = Vec3(0.0, 1.0, 0.0);

  StereoRig build() const;
};

struct TrackerConfig {
  double row_tolerance_px = 2.0;
  double tps_lambda = 0.0;
  std::size_t breast_max_missing = 3;
  std::size_t device_max_missing = 1;
  /// Cost per model pair involving an unlabelled marker (mm^2). The breast
  /// deforms, so its distances legitimately drift; the device is rigid and
  /// any larger discrepancy means a wrong label.
  double breast_missing_pair_cost_mm2 = 64.0;
  double device_missing_pair_cost_mm2 = 4.0;
  /// Labels whose median EDM discrepancy exceeds this are discarded.
  double label_gate_mm = 10.0;
  BlobFilterParams blob;

  void validate() const;
};

struct GuidanceConfig {
  AngleLimits limits;
  GearRatios ratios;
  double smoothing_alpha = 0.3;
  FeedbackConfig feedback;

  void validate() const;
};

struct TrialConfig {
  ObservationMode mode = ObservationMode::Centroid;
  double frame_dt_s = 1.0 / 30.0;
  std::size_t max_positioning_frames = 150;
  std::size_t settle_frames = 10;  // consecutive aligned frames that end positioning
  std::size_t max_insertion_steps = 150;
  double insertion_step_mm = 2.0;
  double stop_tolerance_mm = 0.05;
  std::size_t max_invalid_frames = 10;
  /// Initial device placement: pivot this far from the lesion, on a ray
  /// pitched down by approach_pitch_deg with random yaw in +-approach_yaw_deg.
  double approach_distance_mm = 115.0;
  double approach_pitch_deg = 35.0;
  double approach_yaw_deg = 30.0;
  /// Random initial needle misalignment magnitude per axis.
  double misalignment_min_deg = 5.0;
  double misalignment_max_deg = 15.0;

  void validate() const;
};

/// Acceptance-tagged checks evaluated by run-experiment; absent means skipped.
struct ExperimentChecks {
  std::optional<bool> tps_beats_rigid;
  std::optional<double> wilcoxon_p_max;
  std::optional<double> targeting_norm_max_mm;
  std::optional<double> displacement_mean_min_mm;
  std::optional<double> displacement_mean_max_mm;
  std::optional<bool> depth_dominant;
};

struct SimConfig {
  RigConfig rig;
  PhantomConfig phantom;
  /// Optional marker model file; replaces the random phantom layout.
  std::optional<std::filesystem::path> model_file;
  DeformationConfig deformation;
  NeedleTissueConfig tissue;
  NoiseConfig noise;
  DeviceModel device;
  GuidanceConfig guidance;
  TrackerConfig tracker;
  TrialConfig trial;
  ExperimentChecks checks;
  std::size_t worker_threads = 0;  // 0: hardware concurrency
  double tick_hz = 30.0;
  std::string lesion_id = "L1";

  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
SimConfig parse_config(std::string_view json_text);
SimConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const SimConfig& cfg);

/// Scenario with no observation noise, deformation, needle-tissue push or
/// dropout.
SimConfig noiseless_config();

}  // namespace needlenav
