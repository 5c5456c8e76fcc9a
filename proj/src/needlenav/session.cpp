#include "needlenav/session.hpp"

#include "needlenav/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

namespace needlenav {

using nlohmann::json;

const char* to_string(CommandKind kind) {
  switch (kind) {
    case CommandKind::SelectLesion: return "select_lesion";
    case CommandKind::AlignHold: return "align_hold";
    case CommandKind::AdvanceNeedle: return "advance_needle";
    case CommandKind::SetPhase: return "set_phase";
    case CommandKind::SetParam: return "set_param";
    case CommandKind::Reset: return "reset";
  }
  return "unknown";
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Aligned: return "aligned";
    case EventKind::Proximity: return "proximity";
    case EventKind::Reached: return "reached";
    case EventKind::Reset: return "reset";
  }
  return "unknown";
}

OperatorCommand OperatorCommand::select_lesion(std::string lesion_id) {
  OperatorCommand c;
  c.kind = CommandKind::SelectLesion;
  c.text = std::move(lesion_id);
  return c;
}

OperatorCommand OperatorCommand::align_hold(bool hold) {
  OperatorCommand c;
  c.kind = CommandKind::AlignHold;
  c.hold = hold;
  return c;
}

OperatorCommand OperatorCommand::advance_needle(double mm) {
  OperatorCommand c;
  c.kind = CommandKind::AdvanceNeedle;
  c.value = mm;
  return c;
}

OperatorCommand OperatorCommand::set_phase(Phase phase) {
  OperatorCommand c;
  c.kind = CommandKind::SetPhase;
  c.text = to_string(phase);
  return c;
}

OperatorCommand OperatorCommand::set_param(std::string key, double value) {
  OperatorCommand c;
  c.kind = CommandKind::SetParam;
  c.text = std::move(key);
  c.value = value;
  return c;
}

OperatorCommand OperatorCommand::reset(std::uint64_t seed) {
  OperatorCommand c;
  c.kind = CommandKind::Reset;
  c.seed = seed;
  return c;
}

SessionCore::SessionCore(SimConfig cfg, std::uint64_t seed, bool debug)
    : cfg_(std::move(cfg)), debug_(debug) {
  cfg_.validate();
  if (!(cfg_.tick_hz > 0.0)) throw Error(ErrorCode::InvalidArgument, "session: tick_hz must be positive");
  rig_ = cfg_.rig.build();
  restart(seed);
  std::vector<SessionEvent> ignored;
  evaluate(ignored);
}

void SessionCore::restart(std::uint64_t seed) {
  seed_ = seed;
  phantom_ = build_phantom(cfg_, seed);
  lesion_ = phantom_.model.lesion_index(cfg_.lesion_id);
  state_ = initial_scene(cfg_, phantom_, seed);
  tracker_.emplace(phantom_.model, cfg_.device, rig_, cfg_.tracker, lesion_);
  phase_ = Phase::Positioning;
  hold_ = false;
  was_aligned_ = false;
  reached_ = false;
  const NeedleAngles home = state_.needle_angles(cfg_.device);
  previous_ = SteeringCommand{home.azimuth_deg, home.elevation_deg, false, 0.0};
  tick_ = 0;
  frames_since_valid_ = 0;
}

void SessionCore::submit(OperatorCommand command) { pending_.push_back(std::move(command)); }

TickResult SessionCore::tick() {
  TickResult result;
  ++step_;
  ++tick_;
  state_.frame = tick_;
  state_.time_s = static_cast<double>(tick_) / cfg_.tick_hz;

  std::vector<OperatorCommand> commands;
  commands.swap(pending_);
  for (const auto& c : commands) {
    log_.push_back({step_, c});
    result.acks.push_back(apply(c, result.events));
  }
  evaluate(result.events);
  result.snapshot = snapshot_;
  return result;
}

CommandAck SessionCore::apply(const OperatorCommand& c, std::vector<SessionEvent>& events) {
  CommandAck ack{c.id, c.kind, true, {}};
  const auto reject = [&](std::string reason) {
    ack.accepted = false;
    ack.reason = std::move(reason);
    return ack;
  };
  switch (c.kind) {
    case CommandKind::SelectLesion: {
      const auto& ids = phantom_.model.lesion_ids;
      const auto it = std::find(ids.begin(), ids.end(), c.text);
      if (it == ids.end()) return reject("unknown lesion id '" + c.text + "'");
      lesion_ = static_cast<std::size_t>(it - ids.begin());
      tracker_->set_lesion_index(lesion_);
      reached_ = false;
      was_aligned_ = false;
      break;
    }
    case CommandKind::AlignHold:
      hold_ = c.hold;
      if (!hold_) was_aligned_ = false;
      break;
    case CommandKind::AdvanceNeedle:
      if (phase_ != Phase::Inserting) return reject("advance_needle is only accepted in the inserting phase");
      if (!(c.value >= 0.0 && c.value <= kMaxAdvanceMm))
        return reject("advance must lie in [0, " + std::to_string(static_cast<int>(kMaxAdvanceMm)) + "] mm");
      state_ = insert_needle(state_, cfg_.device, c.value, cfg_.tissue);
      break;
    case CommandKind::SetPhase:
      if (c.text == "positioning") {
        phase_ = Phase::Positioning;
        reached_ = false;
      } else if (c.text == "inserting") {
        phase_ = Phase::Inserting;
      } else {
        return reject("unknown phase '" + c.text + "'");
      }
      break;
    case CommandKind::SetParam:
      try {
        set_param(c.text, c.value);
      } catch (const Error& e) {
        return reject(e.what());
      }
      break;
    case CommandKind::Reset:
      restart(c.seed);
      events.push_back({EventKind::Reset, 0, 0.0, 0.0});
      break;
  }
  return ack;
}

void SessionCore::set_param(const std::string& key, double value) {
  if (!std::isfinite(value)) throw Error(ErrorCode::InvalidArgument, "parameter value must be finite");
  SimConfig next = cfg_;
  BlobFilterParams& blob = next.tracker.blob;
  NoiseConfig& noise = next.noise;
  if (key == "blob.threshold") {
    if (value != std::floor(value) || value < 0.0 || value > 254.0)
      throw Error(ErrorCode::InvalidArgument, "blob.threshold must be an integer in [0, 254]");
    blob.threshold = static_cast<int>(value);
  } else if (key == "blob.area.min") {
    blob.area.min = value;
  } else if (key == "blob.area.max") {
    blob.area.max = value;
  } else if (key == "blob.circularity.min") {
    blob.circularity.min = value;
  } else if (key == "blob.circularity.max") {
    blob.circularity.max = value;
  } else if (key == "blob.bw_ratio.min") {
    blob.bw_ratio.min = value;
  } else if (key == "blob.bw_ratio.max") {
    blob.bw_ratio.max = value;
  } else if (key == "noise.centroid_sigma_px") {
    noise.centroid_sigma_px = value;
  } else if (key == "noise.dropout_probability") {
    noise.dropout_probability = value;
  } else if (key == "noise.spurious_rate") {
    noise.spurious_rate = value;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown parameter '" + key + "'");
  }
  next.tracker.validate();
  next.noise.validate();
  cfg_ = std::move(next);
  tracker_->config().blob = cfg_.tracker.blob;
}

void SessionCore::evaluate(std::vector<SessionEvent>& events) {
  Snapshot s;
  s.tick = tick_;
  s.step = step_;
  s.time_s = state_.time_s;
  s.phase = phase_;
  s.align_hold = hold_;
  s.lesion_id = phantom_.model.lesion_ids[lesion_];
  if (debug_) s.lesion_true = state_.lesions[lesion_];

  const StereoObservation obs = observe(state_, phantom_, cfg_.device, rig_, cfg_.noise, cfg_.trial.mode, seed_);
  const FrameEstimate est = tracker_->process(obs);
  s.health.valid = est.valid;
  s.health.failure = est.failure;

  if (est.valid) {
    frames_since_valid_ = 0;
    s.markers = est.breast_pairs;
    for (const auto& p : est.device_pairs) s.device_markers.push_back(p.scene);
    s.lesion_estimate = est.lesion_tps->position;
    s.device_pose = est.device_pose;
    s.health.match_residual_mm2 = est.breast.residual;
    s.health.registration_residual_mm = est.lesion_tps->residual_mm;

    DeviceState ds;
    ds.pose = *est.device_pose;
    ds.gear1_deg = state_.gear1_deg;
    ds.gear2_deg = state_.gear2_deg;
    ds.phase = phase_;
    const CommandResult res = compute_command(ds, *est.lesion_tps, cfg_.guidance.limits, previous_,
                                              cfg_.guidance.smoothing_alpha, state_.time_s);
    if (hold_ && res.command) {
      const GearAngles g =
          gear_inverse(res.command->azimuth_deg, res.command->elevation_deg, cfg_.device.ratios, cfg_.guidance.limits);
      state_.gear1_deg = g.gear1_deg;
      state_.gear2_deg = g.gear2_deg;
      previous_ = res.command;
    }

    const NeedleAngles now = gear_forward(state_.gear1_deg, state_.gear2_deg, cfg_.device.ratios);
    const Vec3 axis = direction_from_angles(now.azimuth_deg, now.elevation_deg);
    const double alignment =
        res.command ? angle_between_deg(axis, direction_from_angles(res.raw.azimuth_deg, res.raw.elevation_deg)) : 0.0;
    s.tip_estimate = ds.pose.apply(cfg_.device.needle_length_mm * axis);
    s.feedback = feedback((*s.lesion_estimate - *s.tip_estimate).norm(), cfg_.guidance.feedback, alignment);

    const bool aligned = hold_ && s.feedback.aligned;
    if (aligned && !was_aligned_) events.push_back({EventKind::Aligned, tick_, s.feedback.distance_mm, 0.0});
    was_aligned_ = aligned;
    if (phase_ == Phase::Inserting) {
      events.push_back({EventKind::Proximity, tick_, s.feedback.distance_mm, s.feedback.frequency_hz});
      if (s.feedback.reached && !reached_) {
        reached_ = true;
        events.push_back({EventKind::Reached, tick_, s.feedback.distance_mm, s.feedback.frequency_hz});
      }
    }
  } else {
    ++frames_since_valid_;
    // Without a fresh estimate the operator keeps the last known cue.
    s.feedback = snapshot_.feedback;
  }
  s.health.frames_since_valid = frames_since_valid_;
  s.gear1_deg = state_.gear1_deg;
  s.gear2_deg = state_.gear2_deg;
  s.needle = gear_forward(state_.gear1_deg, state_.gear2_deg, cfg_.device.ratios);
  if (hold_) s.command = previous_;
  snapshot_ = std::move(s);
}

std::vector<Snapshot> replay(const SimConfig& cfg, std::uint64_t seed, bool debug,
                             const std::vector<RecordedCommand>& log, std::uint64_t steps) {
  SessionCore core(cfg, seed, debug);
  std::vector<Snapshot> out;
  out.reserve(steps);
  std::size_t next = 0;
  for (std::uint64_t step = 1; step <= steps; ++step) {
    while (next < log.size() && log[next].step == step) core.submit(log[next++].command);
    out.push_back(core.tick().snapshot);
  }
  return out;
}

namespace {

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json command_body(const OperatorCommand& c) {
  json j = {{"v", kProtocolVersion}, {"type", "command"}, {"id", c.id}, {"command", to_string(c.kind)}};
  switch (c.kind) {
    case CommandKind::SelectLesion: j["lesion"] = c.text; break;
    case CommandKind::AlignHold: j["hold"] = c.hold; break;
    case CommandKind::AdvanceNeedle: j["mm"] = c.value; break;
    case CommandKind::SetPhase: j["phase"] = c.text; break;
    case CommandKind::SetParam:
      j["key"] = c.text;
      j["value"] = c.value;
      break;
    case CommandKind::Reset: j["seed"] = c.seed; break;
  }
  return j;
}

template <typename T>
T field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::Parse, std::string("command: missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::Parse, std::string("command: field '") + key + "' has the wrong type");
  }
}

OperatorCommand command_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Parse, "command: expected a JSON object");
  const auto v = j.find("v");
  if (v == j.end() || !v->is_number_integer() || v->get<int>() != kProtocolVersion)
    throw Error(ErrorCode::Parse, "command: unsupported protocol version (expected v = " +
                                      std::to_string(kProtocolVersion) + ")");
  if (field<std::string>(j, "type") != "command") throw Error(ErrorCode::Parse, "command: type must be 'command'");

  OperatorCommand c;
  if (j.contains("id")) c.id = field<std::int64_t>(j, "id");
  const std::string name = field<std::string>(j, "command");
  if (name == "select_lesion") {
    c.kind = CommandKind::SelectLesion;
    c.text = field<std::string>(j, "lesion");
  } else if (name == "align_hold") {
    c.kind = CommandKind::AlignHold;
    c.hold = field<bool>(j, "hold");
  } else if (name == "advance_needle") {
    c.kind = CommandKind::AdvanceNeedle;
    c.value = field<double>(j, "mm");
  } else if (name == "set_phase") {
    c.kind = CommandKind::SetPhase;
    c.text = field<std::string>(j, "phase");
  } else if (name == "set_param") {
    c.kind = CommandKind::SetParam;
    c.text = field<std::string>(j, "key");
    c.value = field<double>(j, "value");
  } else if (name == "reset") {
    c.kind = CommandKind::Reset;
    c.seed = field<std::uint64_t>(j, "seed");
  } else {
    throw Error(ErrorCode::Parse, "command: unknown command '" + name + "'");
  }
  return c;
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

OperatorCommand parse_command(std::string_view line) { return command_from_json(parse_json(line)); }

std::string command_to_json(const OperatorCommand& command) { return command_body(command).dump(); }

std::string snapshot_to_json(const Snapshot& s) {
  json markers = json::array();
  for (const auto& m : s.markers) markers.push_back({{"index", m.model_index}, {"p", vec(m.scene)}});
  json device_markers = json::array();
  for (const auto& p : s.device_markers) device_markers.push_back(vec(p));

  json device = {{"gear1_deg", s.gear1_deg},
                 {"gear2_deg", s.gear2_deg},
                 {"azimuth_deg", s.needle.azimuth_deg},
                 {"elevation_deg", s.needle.elevation_deg},
                 {"pose", nullptr},
                 {"tip", nullptr}};
  if (s.device_pose) {
    const Mat3& r = s.device_pose->rotation();
    json rot = json::array();
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) rot.push_back(r(i, k));
    device["pose"] = {{"rotation", rot}, {"translation", vec(s.device_pose->translation())}};
  }
  if (s.tip_estimate) device["tip"] = vec(*s.tip_estimate);

  json j = {{"v", kProtocolVersion},
            {"type", "snapshot"},
            {"tick", s.tick},
            {"step", s.step},
            {"time_s", s.time_s},
            {"phase", to_string(s.phase)},
            {"align_hold", s.align_hold},
            {"lesion_id", s.lesion_id},
            {"markers", markers},
            {"device_markers", device_markers},
            {"lesion_estimate", s.lesion_estimate ? vec(*s.lesion_estimate) : json(nullptr)},
            {"device", device},
            {"command", nullptr},
            {"feedback",
             {{"distance_mm", s.feedback.distance_mm},
              {"frequency_hz", s.feedback.frequency_hz},
              {"aligned", s.feedback.aligned},
              {"reached", s.feedback.reached}}},
            {"health",
             {{"valid", s.health.valid},
              {"failure", s.health.failure},
              {"match_residual_mm2", s.health.match_residual_mm2},
              {"registration_residual_mm", s.health.registration_residual_mm},
              {"frames_since_valid", s.health.frames_since_valid}}}};
  if (s.lesion_true) j["lesion_true"] = vec(*s.lesion_true);
  if (s.command)
    j["command"] = {{"azimuth_deg", s.command->azimuth_deg},
                    {"elevation_deg", s.command->elevation_deg},
                    {"clamped", s.command->clamped},
                    {"timestamp", s.command->timestamp}};
  return j.dump();
}

std::string ack_to_json(const CommandAck& ack) {
  json j = {{"v", kProtocolVersion},
            {"type", "ack"},
            {"id", ack.id},
            {"command", to_string(ack.kind)},
            {"accepted", ack.accepted}};
  if (!ack.accepted) j["reason"] = ack.reason;
  return j.dump();
}

std::string event_to_json(const SessionEvent& e) {
  json j = {{"v", kProtocolVersion}, {"type", "event"}, {"event", to_string(e.kind)}, {"tick", e.tick}};
  if (e.kind == EventKind::Proximity || e.kind == EventKind::Reached) {
    j["distance_mm"] = e.distance_mm;
    j["frequency_hz"] = e.frequency_hz;
  }
  return j.dump();
}

std::string drop_to_json(std::uint64_t first_tick, std::uint64_t last_tick, std::size_t count) {
  return json{{"v", kProtocolVersion}, {"type", "drop"}, {"first_tick", first_tick}, {"last_tick", last_tick},
              {"count", count}}
      .dump();
}

std::string error_to_json(std::string_view reason) {
  return json{{"v", kProtocolVersion}, {"type", "error"}, {"reason", std::string(reason)}}.dump();
}

std::string hello_to_json(const SessionCore& core) {
  const SimConfig& cfg = core.config();
  const AngleLimits& lim = cfg.guidance.limits;
  const FeedbackConfig& fb = cfg.guidance.feedback;
  return json{{"v", kProtocolVersion},
              {"type", "hello"},
              {"tick_hz", cfg.tick_hz},
              {"debug", core.debug()},
              {"lesions", core.lesion_ids()},
              {"needle_length_mm", cfg.device.needle_length_mm},
              {"limits",
               {{"azimuth_deg", {lim.azimuth_min_deg, lim.azimuth_max_deg}},
                {"elevation_deg", {lim.elevation_min_deg, lim.elevation_max_deg}}}},
              {"feedback",
               {{"f_min_hz", fb.f_min_hz},
                {"f_max_hz", fb.f_max_hz},
                {"d_max_mm", fb.d_max_mm},
                {"reach_threshold_mm", fb.reach_threshold_mm},
                {"align_tolerance_deg", fb.align_tolerance_deg}}},
              {"max_advance_mm", kMaxAdvanceMm}}
      .dump();
}

std::string recorded_to_json(const RecordedCommand& recorded) {
  return json{{"step", recorded.step}, {"command", command_body(recorded.command)}}.dump();
}

RecordedCommand parse_recorded(std::string_view line) {
  const json j = parse_json(line);
  if (!j.is_object() || !j.contains("step") || !j.contains("command"))
    throw Error(ErrorCode::Parse, "replay log: expected {\"step\", \"command\"}");
  RecordedCommand r;
  r.step = field<std::uint64_t>(j, "step");
  r.command = command_from_json(j.at("command"));
  return r;
}

}  // namespace needlenav
