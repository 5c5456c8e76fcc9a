#pragma once

#include "needlenav/config.hpp"
#include "needlenav/phantom.hpp"
#include "needlenav/stats.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace needlenav {

/// Lesion estimation error of one valid frame (estimate - truth, operating frame).
struct FrameError {
  std::size_t frame = 0;
  Vec3 tps = Vec3::Zero();
  double tps_norm = 0.0;
  Vec3 rigid = Vec3::Zero();
  double rigid_norm = 0.0;
};

struct TrialRecord {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string failure;
  std::size_t frame_count = 0;
  std::size_t valid_frames = 0;
  std::size_t positioning_frames = 0;
  std::size_t insertion_steps = 0;
  bool reached = false;
  std::vector<FrameError> frames;
  /// Per-trial means over valid frames: |component| per axis, and the norm.
  Vec3 tps_mean_abs = Vec3::Zero();
  double tps_mean_norm = 0.0;
  Vec3 rigid_mean_abs = Vec3::Zero();
  double rigid_mean_norm = 0.0;
  /// Deformation-induced lesion displacement at the start of the trial.
  Vec3 displacement = Vec3::Zero();
  double displacement_norm = 0.0;
  /// Final tip - lesion, in the needle frame (z coaxial) and the left camera frame.
  Vec3 target_needle = Vec3::Zero();
  Vec3 target_camera = Vec3::Zero();
  double target_norm = 0.0;
};

/// Optional per-frame sinks.
struct TrialSinks {
  std::ostream* trace = nullptr;        // t,lesion_true_xyz,marker positions
  std::ostream* command_log = nullptr;  // CommandLog format
};

/// Random phantom per seed, or the configured model file with its
/// coordinates taken as operating-frame coordinates.
Phantom build_phantom(const SimConfig& cfg, std::uint64_t seed);

/// Initial scene: deformed phantom and a misaligned device.
SceneState initial_scene(const SimConfig& cfg, const Phantom& phantom, std::uint64_t seed);

/// One closed-loop intervention: positioning until aligned, then stepwise
/// insertion until the estimated coaxial distance falls below the stop
/// tolerance. Never throws for pipeline problems; those mark the record failed.
TrialRecord run_trial(const SimConfig& cfg, std::uint64_t seed, const TrialSinks& sinks = {});

struct ErrorRow {
  Vec3 mean = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  double norm_mean = 0.0;
  double norm_max = 0.0;
};

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentReport {
  std::size_t trials = 0;
  std::size_t failed = 0;
  std::uint64_t base_seed = 0;
  ErrorRow tps;
  ErrorRow rigid;
  ErrorRow displacement;
  ErrorRow targeting;         // needle frame
  ErrorRow targeting_camera;  // left camera frame
  std::optional<WilcoxonResult> wilcoxon;  // TPS vs rigid per-trial norms
  std::string wilcoxon_note;
  std::optional<double> spearman_rs;       // TPS error vs displacement
  std::string spearman_note;
  std::vector<TrialRecord> records;
  std::vector<CheckResult> checks;

  bool checks_passed() const;
};

/// Runs trials with seeds base_seed .. base_seed + n - 1 on worker threads;
/// the report is independent of the thread count. Throws
/// ErrorCode::InvalidArgument for n < 2 and ErrorCode::PipelineFailure when
/// every trial failed.
ExperimentReport run_experiment(const SimConfig& cfg, std::size_t n_trials, std::uint64_t base_seed);

void write_table1_csv(const ExperimentReport& report, std::ostream& out);
void write_table2_csv(const ExperimentReport& report, std::ostream& out);
void write_trials_csv(const ExperimentReport& report, std::ostream& out);
std::string report_to_json(const ExperimentReport& report);
/// table1.csv, table2.csv, trials.csv and report.json.
void write_outputs(const ExperimentReport& report, const std::filesystem::path& dir);

/// Renders the first frame of a trial in pixel mode and writes left.pgm and
/// right.pgm into `dir`.
void render_debug(const SimConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir);

}  // namespace needlenav
