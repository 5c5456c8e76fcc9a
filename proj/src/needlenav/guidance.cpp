#include "needlenav/guidance.hpp"

#include "needlenav/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace needlenav {

const char* to_string(Phase phase) { return phase == Phase::Positioning ? "positioning" : "inserting"; }

CommandResult compute_command(const DeviceState& state, const Point3& lesion, const AngleLimits& limits,
                              const std::optional<SteeringCommand>& previous, double alpha, double timestamp) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "compute_command: alpha must be in (0, 1]");
  if (!lesion.allFinite()) throw Error(ErrorCode::InvalidArgument, "compute_command: non-finite lesion");

  CommandResult result;
  const Vec3 local = state.pose.inverse().apply(lesion);
  if (!(local.norm() > 0.0)) {
    result.reached = true;
    return result;
  }
  result.raw = to_spherical(local);

  double az = result.raw.azimuth_deg;
  double el = result.raw.elevation_deg;
  if (previous) {
    az = alpha * az + (1.0 - alpha) * previous->azimuth_deg;
    el = alpha * el + (1.0 - alpha) * previous->elevation_deg;
  }

  SteeringCommand cmd;
  cmd.timestamp = timestamp;
  cmd.clamped = !limits.contains(az, el);
  cmd.azimuth_deg = std::clamp(az, limits.azimuth_min_deg, limits.azimuth_max_deg);
  cmd.elevation_deg = std::clamp(el, limits.elevation_min_deg, limits.elevation_max_deg);

  if (state.phase == Phase::Inserting && previous) {
    const double cap = limits.insertion_delta_cap_deg;
    cmd.azimuth_deg = std::clamp(cmd.azimuth_deg, previous->azimuth_deg - cap, previous->azimuth_deg + cap);
    cmd.elevation_deg = std::clamp(cmd.elevation_deg, previous->elevation_deg - cap, previous->elevation_deg + cap);
    // A previous command is itself within limits, so this stays in range.
    cmd.azimuth_deg = std::clamp(cmd.azimuth_deg, limits.azimuth_min_deg, limits.azimuth_max_deg);
    cmd.elevation_deg = std::clamp(cmd.elevation_deg, limits.elevation_min_deg, limits.elevation_max_deg);
  }
  result.command = cmd;
  return result;
}

CommandResult compute_command(const DeviceState& state, const LesionEstimate& lesion, const AngleLimits& limits,
                              const std::optional<SteeringCommand>& previous, double alpha, double timestamp) {
  return compute_command(state, lesion.position, limits, previous, alpha, timestamp);
}

NeedleAngles gear_forward(double gear1_deg, double gear2_deg, const GearRatios& ratios) {
  return {ratios.azimuth * (gear1_deg - gear2_deg) / 2.0, ratios.elevation * (gear1_deg + gear2_deg) / 2.0};
}

GearAngles gear_inverse(double azimuth_deg, double elevation_deg, const GearRatios& ratios, const AngleLimits& limits) {
  if (ratios.azimuth == 0.0 || ratios.elevation == 0.0)
    throw Error(ErrorCode::InvalidArgument, "gear_inverse: gear ratios must be non-zero");
  if (!limits.contains(azimuth_deg, elevation_deg))
    throw Error(ErrorCode::OutOfRange, "gear_inverse: target angles outside the admissible range");
  const double sum = elevation_deg / ratios.elevation;    // (g1 + g2) / 2
  const double diff = azimuth_deg / ratios.azimuth;       // (g1 - g2) / 2
  return {sum + diff, sum - diff};
}

FeedbackState feedback(double distance_mm, const FeedbackConfig& cfg, double alignment_error_deg) {
  if (!(distance_mm >= 0.0)) throw Error(ErrorCode::InvalidArgument, "feedback: distance must be >= 0");
  if (!(cfg.d_max_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "feedback: d_max must be > 0");
  FeedbackState fb;
  fb.distance_mm = distance_mm;
  const double closeness = std::clamp(1.0 - distance_mm / cfg.d_max_mm, 0.0, 1.0);
  fb.frequency_hz = cfg.f_min_hz + (cfg.f_max_hz - cfg.f_min_hz) * closeness;
  fb.reached = distance_mm <= cfg.reach_threshold_mm;
  fb.aligned = alignment_error_deg >= 0.0 && alignment_error_deg <= cfg.align_tolerance_deg;
  return fb;
}

CommandLog::CommandLog(std::ostream& out) : out_(out) { out_ << kHeader << '\n'; }

void CommandLog::append(const SteeringCommand& command, const FeedbackState& fb, Phase phase) {
  char line[256];
  std::snprintf(line, sizeof line, "%.4f,%.6f,%.6f,%d,%.6f,%.3f,%s\n", command.timestamp, command.azimuth_deg,
                command.elevation_deg, command.clamped ? 1 : 0, fb.distance_mm, fb.frequency_hz, to_string(phase));
  out_ << line;
}

}  // namespace needlenav
