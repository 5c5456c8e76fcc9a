#pragma once

#include "needlenav/geom.hpp"
#include "needlenav/registration.hpp"

#include <optional>
#include <ostream>
#include <string>

namespace needlenav {

struct AngleLimits {
  double azimuth_min_deg = -90.0;
  double azimuth_max_deg = 90.0;
  double elevation_min_deg = -40.0;
  double elevation_max_deg = 45.0;
  /// Largest per-axis change between consecutive commands while inserting.
  double insertion_delta_cap_deg = 2.0;

  bool contains(double azimuth_deg, double elevation_deg) const {
    return azimuth_deg >= azimuth_min_deg && azimuth_deg <= azimuth_max_deg && elevation_deg >= elevation_min_deg &&
           elevation_deg <= elevation_max_deg;
  }
};

enum class Phase { Positioning, Inserting };

const char* to_string(Phase phase);

struct GearRatios {
  double azimuth = 1.0;
  double elevation = 1.0;
};

struct DeviceState {
  RigidTransform pose;  // world_from_device; the needle pivots about the device origin
  double gear1_deg = 0.0;
  double gear2_deg = 0.0;
  Point3 tip = Point3::Zero();  // world
  Phase phase = Phase::Positioning;
};

struct SteeringCommand {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  bool clamped = false;
  double timestamp = 0.0;
};

struct CommandResult {
  std::optional<SteeringCommand> command;  // empty when the target is reached
  bool reached = false;
  SphericalTarget raw;  // unsmoothed target in the device frame
};

/// Steering law. The needle-to-lesion vector is taken from the needle pivot
/// (device origin), which lies on the needle axis together with the tip, and
/// expressed in the device frame. Its spherical angles are smoothed against
/// `previous` (out = alpha*new + (1-alpha)*prev), clamped to `limits`, and in
/// the inserting phase further restricted to `insertion_delta_cap_deg` per
/// axis relative to `previous`. `clamped` reports whether the smoothed angles
/// fell outside the limits.
CommandResult compute_command(const DeviceState& state, const Point3& lesion, const AngleLimits& limits,
                              const std::optional<SteeringCommand>& previous, double alpha, double timestamp = 0.0);
CommandResult compute_command(const DeviceState& state, const LesionEstimate& lesion, const AngleLimits& limits,
                              const std::optional<SteeringCommand>& previous, double alpha, double timestamp = 0.0);

struct NeedleAngles {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

struct GearAngles {
  double gear1_deg = 0.0;
  double gear2_deg = 0.0;
};

/// Differential bevel gear: equal rotations tilt (elevation), opposite
/// rotations pan (azimuth).
NeedleAngles gear_forward(double gear1_deg, double gear2_deg, const GearRatios& ratios = {});

/// Throws ErrorCode::OutOfRange for targets outside `limits`.
GearAngles gear_inverse(double azimuth_deg, double elevation_deg, const GearRatios& ratios = {},
                        const AngleLimits& limits = {});

struct FeedbackConfig {
  double f_min_hz = 400.0;
  double f_max_hz = 2000.0;
  double d_max_mm = 50.0;
  double reach_threshold_mm = 2.0;
  double align_tolerance_deg = 1.0;
};

struct FeedbackState {
  double distance_mm = 0.0;
  double frequency_hz = 0.0;
  bool aligned = false;
  bool reached = false;
};

/// Linear beep schedule, f_min at d >= d_max up to f_max at contact.
/// `alignment_error_deg` (negative when unknown) drives the aligned flag.
/// Throws ErrorCode::InvalidArgument for negative distance.
FeedbackState feedback(double distance_mm, const FeedbackConfig& cfg, double alignment_error_deg = -1.0);

/// Append-only CSV: timestamp,azimuth_deg,elevation_deg,clamped,distance_mm,freq_hz,phase
class CommandLog {
 public:
  explicit CommandLog(std::ostream& out);
  void append(const SteeringCommand& command, const FeedbackState& fb, Phase phase);

  static constexpr const char* kHeader = "timestamp,azimuth_deg,elevation_deg,clamped,distance_mm,freq_hz,phase";

 private:
  std::ostream& out_;
};

}  // namespace needlenav
