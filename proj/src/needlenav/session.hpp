#pragma once

#include "needlenav/config.hpp"
#include "needlenav/harness.hpp"
#include "needlenav/tracker.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace needlenav {

/// Wire schema version carried in every message's `v` field.
constexpr int kProtocolVersion = 1;

/// Largest needle advance accepted in one command.
constexpr double kMaxAdvanceMm = 20.0;

enum class CommandKind { SelectLesion, AlignHold, AdvanceNeedle, SetPhase, SetParam, Reset };

const char* to_string(CommandKind kind);

struct OperatorCommand {
  CommandKind kind = CommandKind::AlignHold;
  std::int64_t id = 0;  // client correlation id, echoed in the acknowledgement
  std::string text;     // lesion id, phase name or parameter key
  double value = 0.0;   // advance distance or parameter value
  bool hold = false;
  std::uint64_t seed = 0;

  static OperatorCommand select_lesion(std::string lesion_id);
  static OperatorCommand align_hold(bool hold);
  static OperatorCommand advance_needle(double mm);
  static OperatorCommand set_phase(Phase phase);
  static OperatorCommand set_param(std::string key, double value);
  static OperatorCommand reset(std::uint64_t seed);
};

struct CommandAck {
  std::int64_t id = 0;
  CommandKind kind = CommandKind::AlignHold;
  bool accepted = false;
  std::string reason;  // set when rejected
};

enum class EventKind { Aligned, Proximity, Reached, Reset };

const char* to_string(EventKind kind);

struct SessionEvent {
  EventKind kind = EventKind::Aligned;
  std::uint64_t tick = 0;
  double distance_mm = 0.0;
  double frequency_hz = 0.0;
};

struct SnapshotHealth {
  bool valid = false;
  std::string failure;
  double match_residual_mm2 = 0.0;         // breast labelling EDM residual
  double registration_residual_mm = 0.0;   // TPS marker residual
  std::uint64_t frames_since_valid = 0;
};

/// State of the session after one tick. Positions are operating-frame mm.
struct Snapshot {
  std::uint64_t tick = 0;  // restarts at 0 on reset
  std::uint64_t step = 0;  // ticks since the session started, never reset
  double time_s = 0.0;
  Phase phase = Phase::Positioning;
  bool align_hold = false;
  std::string lesion_id;
  std::vector<LabelledPair> markers;         // labelled breast markers
  std::vector<Point3> device_markers;        // labelled device markers
  std::optional<Point3> lesion_estimate;
  std::optional<Point3> lesion_true;         // debug sessions only
  std::optional<RigidTransform> device_pose; // estimated world_from_device
  double gear1_deg = 0.0;
  double gear2_deg = 0.0;
  NeedleAngles needle;
  std::optional<Point3> tip_estimate;
  std::optional<SteeringCommand> command;
  FeedbackState feedback;
  SnapshotHealth health;
};

struct TickResult {
  std::vector<CommandAck> acks;
  std::vector<SessionEvent> events;
  Snapshot snapshot;
};

/// A command together with the step of the tick that applied it.
struct RecordedCommand {
  std::uint64_t step = 0;
  OperatorCommand command;
};

/// Deterministic interactive simulation. Commands submitted between ticks are
/// applied in submission order at the start of the next tick, before the
/// scene is observed. Holding the align button lets the steering law drive
/// the gears; the needle only advances through explicit commands while in
/// the inserting phase.
class SessionCore {
 public:
  SessionCore(SimConfig cfg, std::uint64_t seed, bool debug = false);

  /// Latest snapshot; tick 0 right after construction or reset.
  const Snapshot& snapshot() const { return snapshot_; }
  void submit(OperatorCommand command);
  TickResult tick();

  /// Every applied command since construction, including rejected ones.
  const std::vector<RecordedCommand>& command_log() const { return log_; }
  const SimConfig& config() const { return cfg_; }
  const std::vector<std::string>& lesion_ids() const { return phantom_.model.lesion_ids; }
  bool debug() const { return debug_; }

 private:
  void restart(std::uint64_t seed);
  CommandAck apply(const OperatorCommand& command, std::vector<SessionEvent>& events);
  void set_param(const std::string& key, double value);
  void evaluate(std::vector<SessionEvent>& events);

  SimConfig cfg_;
  bool debug_;
  std::uint64_t seed_ = 0;
  StereoRig rig_;
  Phantom phantom_;
  std::optional<Tracker> tracker_;
  SceneState state_;
  std::size_t lesion_ = 0;
  Phase phase_ = Phase::Positioning;
  bool hold_ = false;
  bool was_aligned_ = false;
  bool reached_ = false;
  std::optional<SteeringCommand> previous_;
  std::uint64_t tick_ = 0;
  std::uint64_t step_ = 0;
  std::uint64_t frames_since_valid_ = 0;
  std::vector<OperatorCommand> pending_;
  std::vector<RecordedCommand> log_;
  Snapshot snapshot_;
};

/// Re-runs a recorded command log for `steps` ticks and returns the
/// snapshots of steps 1..steps.
std::vector<Snapshot> replay(const SimConfig& cfg, std::uint64_t seed, bool debug,
                             const std::vector<RecordedCommand>& log, std::uint64_t steps);

// Wire encoding: one JSON object per line, each with "v" and "type".

/// Parses a client `command` message. Throws ErrorCode::Parse for malformed
/// JSON, a version mismatch or an unknown command.
OperatorCommand parse_command(std::string_view line);
std::string command_to_json(const OperatorCommand& command);
std::string snapshot_to_json(const Snapshot& snapshot);
std::string ack_to_json(const CommandAck& ack);
std::string event_to_json(const SessionEvent& event);
std::string drop_to_json(std::uint64_t first_tick, std::uint64_t last_tick, std::size_t count);
std::string error_to_json(std::string_view reason);
std::string hello_to_json(const SessionCore& core);

/// Replay log lines: {"step": s, "command": {...}}.
std::string recorded_to_json(const RecordedCommand& recorded);
RecordedCommand parse_recorded(std::string_view line);

}  // namespace needlenav
