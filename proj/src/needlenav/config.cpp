#include "needlenav/config.hpp"

#include "needlenav/error.hpp"

#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace needlenav {

using nlohmann::json;

StereoRig RigConfig::build() const {
  // The camera pair straddles `position` along the left camera's x axis.
  const RigidTransform centre = needlenav::look_at(position, look_at, up);
  const Vec3 x_axis = centre.rotation().col(0);
  const RigidTransform left(centre.rotation(), centre.translation() - 0.5 * baseline_mm * x_axis);
  return StereoRig::rectified(focal_px, cx, cy, baseline_mm, left, width, height);
}

void TrackerConfig::validate() const {
  if (!(row_tolerance_px > 0.0)) throw Error(ErrorCode::InvalidArgument, "tracker: row tolerance must be > 0");
  if (!(tps_lambda >= 0.0)) throw Error(ErrorCode::InvalidArgument, "tracker: tps_lambda must be >= 0");
  if (!(breast_missing_pair_cost_mm2 >= 0.0) || !(device_missing_pair_cost_mm2 >= 0.0) || !(label_gate_mm > 0.0))
    throw Error(ErrorCode::InvalidArgument, "tracker: invalid missing cost or label gate");
  blob.validate();
}

void GuidanceConfig::validate() const {
  if (!(smoothing_alpha > 0.0 && smoothing_alpha <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "guidance: smoothing alpha must lie in (0, 1]");
  if (!(limits.azimuth_min_deg < limits.azimuth_max_deg && limits.elevation_min_deg < limits.elevation_max_deg) ||
      !(limits.insertion_delta_cap_deg > 0.0))
    throw Error(ErrorCode::InvalidArgument, "guidance: invalid angle limits");
  if (ratios.azimuth == 0.0 || ratios.elevation == 0.0)
    throw Error(ErrorCode::InvalidArgument, "guidance: gear ratios must be non-zero");
  if (!(feedback.f_min_hz > 0.0 && feedback.f_min_hz <= feedback.f_max_hz) || !(feedback.d_max_mm > 0.0) ||
      !(feedback.reach_threshold_mm >= 0.0) || !(feedback.align_tolerance_deg > 0.0))
    throw Error(ErrorCode::InvalidArgument, "guidance: invalid feedback settings");
}

void TrialConfig::validate() const {
  if (!(frame_dt_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "trial: frame_dt_s must be > 0");
  if (settle_frames == 0 || max_positioning_frames == 0 || max_insertion_steps == 0)
    throw Error(ErrorCode::InvalidArgument, "trial: frame budgets must be positive");
  if (!(insertion_step_mm > 0.0) || !(stop_tolerance_mm >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "trial: invalid insertion step or stop tolerance");
  if (!(approach_distance_mm > 0.0)) throw Error(ErrorCode::InvalidArgument, "trial: approach distance must be > 0");
  if (!(misalignment_min_deg >= 0.0 && misalignment_min_deg <= misalignment_max_deg))
    throw Error(ErrorCode::InvalidArgument, "trial: invalid misalignment range");
}

void SimConfig::validate() const {
  rig.build().validate();
  phantom.validate();
  deformation.validate();
  tissue.validate();
  noise.validate();
  device.validate();
  guidance.validate();
  tracker.validate();
  trial.validate();
  if (!(tick_hz > 0.0)) throw Error(ErrorCode::InvalidArgument, "config: tick_hz must be > 0");
  if (device.needle_length_mm >= trial.approach_distance_mm)
    throw Error(ErrorCode::InvalidArgument, "config: the needle must start short of the lesion");
}

namespace {

// Reads keys from one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::Parse, "config: " + path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::Parse, "config: bad value for " + path_ + "." + key);
    }
  }

  void vec3(const char* key, Vec3& out) {
    std::vector<double> v{out.x(), out.y(), out.z()};
    get(key, v);
    if (v.size() != 3) throw Error(ErrorCode::Parse, "config: " + path_ + "." + key + " needs three numbers");
    out = Vec3(v[0], v[1], v[2]);
  }

  void range(const char* key, Range& out) {
    std::vector<double> v{out.min, out.max};
    get(key, v);
    if (v.size() != 2) throw Error(ErrorCode::Parse, "config: " + path_ + "." + key + " needs [min, max]");
    out = Range{v[0], v[1]};
  }

  template <typename T>
  void optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T value{};
    get(key, value);
    out = value;
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw Error(ErrorCode::Parse, "config: unknown key " + path_ + "." + item.key());
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
void with(Section& parent, const char* key, F&& f) {
  if (auto s = parent.child(key)) {
    f(*s);
    s->finish();
  }
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

SimConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, std::string("config: ") + e.what());
  }
  SimConfig cfg;
  Section top(root, "config");

  with(top, "rig", [&](Section& s) {
    auto& r = cfg.rig;
    s.get("focal_px", r.focal_px);
    s.get("cx", r.cx);
    s.get("cy", r.cy);
    s.get("width", r.width);
    s.get("height", r.height);
    s.get("baseline_mm", r.baseline_mm);
    s.vec3("position", r.position);
    s.vec3("look_at", r.look_at);
    s.vec3("up", r.up);
  });
  with(top, "phantom", [&](Section& s) {
    auto& p = cfg.phantom;
    s.get("marker_count", p.marker_count);
    s.get("surface_radius_mm", p.surface_radius_mm);
    s.get("marker_cap_polar_deg", p.marker_cap_polar_deg);
    s.get("min_marker_separation_mm", p.min_marker_separation_mm);
    s.get("lesion_depth_mm", p.lesion_depth_mm);
    s.get("lesion_cap_polar_deg", p.lesion_cap_polar_deg);
    s.get("marker_radius_mm", p.marker_radius_mm);
    s.get("placement_yaw_jitter_deg", p.placement_yaw_jitter_deg);
    s.get("placement_shift_jitter_mm", p.placement_shift_jitter_mm);
    std::optional<std::string> file;
    s.optional("model_file", file);
    if (file) cfg.model_file = *file;
  });
  with(top, "deformation", [&](Section& s) {
    auto& d = cfg.deformation;
    s.get("enabled", d.enabled);
    s.get("kernel_count", d.kernel_count);
    s.get("sigma_min_mm", d.sigma_min_mm);
    s.get("sigma_max_mm", d.sigma_max_mm);
    s.get("centre_distance_min_mm", d.centre_distance_min_mm);
    s.get("centre_spread_mm", d.centre_spread_mm);
    s.get("lesion_displacement_mean_mm", d.lesion_displacement_mean_mm);
    s.get("lesion_displacement_sd_mm", d.lesion_displacement_sd_mm);
    s.get("lesion_displacement_min_mm", d.lesion_displacement_min_mm);
    s.get("lesion_displacement_max_mm", d.lesion_displacement_max_mm);
    s.vec3("axis_weights", d.axis_weights);
  });
  with(top, "tissue", [&](Section& s) {
    s.get("stiffness", cfg.tissue.stiffness);
    s.get("decay_mm", cfg.tissue.decay_mm);
    s.get("marker_coupling", cfg.tissue.marker_coupling);
  });
  with(top, "noise", [&](Section& s) {
    s.get("centroid_sigma_px", cfg.noise.centroid_sigma_px);
    s.get("dropout_probability", cfg.noise.dropout_probability);
    s.get("spurious_rate", cfg.noise.spurious_rate);
  });
  with(top, "device", [&](Section& s) {
    auto& d = cfg.device;
    std::vector<std::vector<double>> raw;
    for (const auto& m : d.markers) raw.push_back({m.x(), m.y(), m.z()});
    s.get("markers", raw);
    d.markers.clear();
    for (const auto& v : raw) {
      if (v.size() != 3) throw Error(ErrorCode::Parse, "config: device.markers entries need three numbers");
      d.markers.emplace_back(v[0], v[1], v[2]);
    }
    s.get("marker_radius_mm", d.marker_radius_mm);
    s.get("needle_length_mm", d.needle_length_mm);
  });
  with(top, "guidance", [&](Section& s) {
    auto& g = cfg.guidance;
    s.get("smoothing_alpha", g.smoothing_alpha);
    with(s, "limits", [&](Section& l) {
      l.get("azimuth_min_deg", g.limits.azimuth_min_deg);
      l.get("azimuth_max_deg", g.limits.azimuth_max_deg);
      l.get("elevation_min_deg", g.limits.elevation_min_deg);
      l.get("elevation_max_deg", g.limits.elevation_max_deg);
      l.get("insertion_delta_cap_deg", g.limits.insertion_delta_cap_deg);
    });
    with(s, "gear_ratios", [&](Section& r) {
      r.get("azimuth", g.ratios.azimuth);
      r.get("elevation", g.ratios.elevation);
    });
    with(s, "feedback", [&](Section& f) {
      f.get("f_min_hz", g.feedback.f_min_hz);
      f.get("f_max_hz", g.feedback.f_max_hz);
      f.get("d_max_mm", g.feedback.d_max_mm);
      f.get("reach_threshold_mm", g.feedback.reach_threshold_mm);
      f.get("align_tolerance_deg", g.feedback.align_tolerance_deg);
    });
  });
  with(top, "tracker", [&](Section& s) {
    auto& t = cfg.tracker;
    s.get("row_tolerance_px", t.row_tolerance_px);
    s.get("tps_lambda", t.tps_lambda);
    s.get("breast_max_missing", t.breast_max_missing);
    s.get("device_max_missing", t.device_max_missing);
    s.get("breast_missing_pair_cost_mm2", t.breast_missing_pair_cost_mm2);
    s.get("device_missing_pair_cost_mm2", t.device_missing_pair_cost_mm2);
    s.get("label_gate_mm", t.label_gate_mm);
    with(s, "blob", [&](Section& b) {
      b.get("threshold", t.blob.threshold);
      b.range("area", t.blob.area);
      b.range("circularity", t.blob.circularity);
      b.range("bw_ratio", t.blob.bw_ratio);
    });
  });
  with(top, "trial", [&](Section& s) {
    auto& t = cfg.trial;
    std::string mode = t.mode == ObservationMode::Pixel ? "pixel" : "centroid";
    s.get("observation", mode);
    if (mode == "pixel")
      t.mode = ObservationMode::Pixel;
    else if (mode == "centroid")
      t.mode = ObservationMode::Centroid;
    else
      throw Error(ErrorCode::Parse, "config: trial.observation must be \"pixel\" or \"centroid\"");
    s.get("frame_dt_s", t.frame_dt_s);
    s.get("max_positioning_frames", t.max_positioning_frames);
    s.get("settle_frames", t.settle_frames);
    s.get("max_insertion_steps", t.max_insertion_steps);
    s.get("insertion_step_mm", t.insertion_step_mm);
    s.get("stop_tolerance_mm", t.stop_tolerance_mm);
    s.get("max_invalid_frames", t.max_invalid_frames);
    s.get("approach_distance_mm", t.approach_distance_mm);
    s.get("approach_pitch_deg", t.approach_pitch_deg);
    s.get("approach_yaw_deg", t.approach_yaw_deg);
    s.get("misalignment_min_deg", t.misalignment_min_deg);
    s.get("misalignment_max_deg", t.misalignment_max_deg);
  });
  with(top, "checks", [&](Section& s) {
    auto& c = cfg.checks;
    s.optional("tps_beats_rigid", c.tps_beats_rigid);
    s.optional("wilcoxon_p_max", c.wilcoxon_p_max);
    s.optional("targeting_norm_max_mm", c.targeting_norm_max_mm);
    s.optional("displacement_mean_min_mm", c.displacement_mean_min_mm);
    s.optional("displacement_mean_max_mm", c.displacement_mean_max_mm);
    s.optional("depth_dominant", c.depth_dominant);
  });
  top.get("worker_threads", cfg.worker_threads);
  top.get("tick_hz", cfg.tick_hz);
  top.get("lesion_id", cfg.lesion_id);
  top.finish();

  cfg.device.ratios = cfg.guidance.ratios;
  cfg.validate();
  return cfg;
}

SimConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  SimConfig cfg = parse_config(text.str());
  if (cfg.model_file && cfg.model_file->is_relative()) cfg.model_file = path.parent_path() / *cfg.model_file;
  return cfg;
}

std::string config_to_json(const SimConfig& cfg) {
  json j;
  const auto& r = cfg.rig;
  j["rig"] = {{"focal_px", r.focal_px}, {"cx", r.cx},         {"cy", r.cy},
              {"width", r.width},       {"height", r.height}, {"baseline_mm", r.baseline_mm},
              {"position", vec_json(r.position)}, {"look_at", vec_json(r.look_at)}, {"up", vec_json(r.up)}};
  const auto& p = cfg.phantom;
  j["phantom"] = {{"marker_count", p.marker_count},
                  {"surface_radius_mm", p.surface_radius_mm},
                  {"marker_cap_polar_deg", p.marker_cap_polar_deg},
                  {"min_marker_separation_mm", p.min_marker_separation_mm},
                  {"lesion_depth_mm", p.lesion_depth_mm},
                  {"lesion_cap_polar_deg", p.lesion_cap_polar_deg},
                  {"marker_radius_mm", p.marker_radius_mm},
                  {"placement_yaw_jitter_deg", p.placement_yaw_jitter_deg},
                  {"placement_shift_jitter_mm", p.placement_shift_jitter_mm}};
  if (cfg.model_file) j["phantom"]["model_file"] = cfg.model_file->string();
  const auto& d = cfg.deformation;
  j["deformation"] = {{"enabled", d.enabled},
                      {"kernel_count", d.kernel_count},
                      {"sigma_min_mm", d.sigma_min_mm},
                      {"sigma_max_mm", d.sigma_max_mm},
                      {"centre_distance_min_mm", d.centre_distance_min_mm},
                      {"centre_spread_mm", d.centre_spread_mm},
                      {"lesion_displacement_mean_mm", d.lesion_displacement_mean_mm},
                      {"lesion_displacement_sd_mm", d.lesion_displacement_sd_mm},
                      {"lesion_displacement_min_mm", d.lesion_displacement_min_mm},
                      {"lesion_displacement_max_mm", d.lesion_displacement_max_mm},
                      {"axis_weights", vec_json(d.axis_weights)}};
  j["tissue"] = {{"stiffness", cfg.tissue.stiffness},
                 {"decay_mm", cfg.tissue.decay_mm},
                 {"marker_coupling", cfg.tissue.marker_coupling}};
  j["noise"] = {{"centroid_sigma_px", cfg.noise.centroid_sigma_px},
                {"dropout_probability", cfg.noise.dropout_probability},
                {"spurious_rate", cfg.noise.spurious_rate}};
  json markers = json::array();
  for (const auto& m : cfg.device.markers) markers.push_back(vec_json(m));
  j["device"] = {{"markers", markers},
                 {"marker_radius_mm", cfg.device.marker_radius_mm},
                 {"needle_length_mm", cfg.device.needle_length_mm}};
  const auto& g = cfg.guidance;
  j["guidance"] = {
      {"smoothing_alpha", g.smoothing_alpha},
      {"limits",
       {{"azimuth_min_deg", g.limits.azimuth_min_deg},
        {"azimuth_max_deg", g.limits.azimuth_max_deg},
        {"elevation_min_deg", g.limits.elevation_min_deg},
        {"elevation_max_deg", g.limits.elevation_max_deg},
        {"insertion_delta_cap_deg", g.limits.insertion_delta_cap_deg}}},
      {"gear_ratios", {{"azimuth", g.ratios.azimuth}, {"elevation", g.ratios.elevation}}},
      {"feedback",
       {{"f_min_hz", g.feedback.f_min_hz},
        {"f_max_hz", g.feedback.f_max_hz},
        {"d_max_mm", g.feedback.d_max_mm},
        {"reach_threshold_mm", g.feedback.reach_threshold_mm},
        {"align_tolerance_deg", g.feedback.align_tolerance_deg}}}};
  const auto& t = cfg.tracker;
  j["tracker"] = {{"row_tolerance_px", t.row_tolerance_px},
                  {"tps_lambda", t.tps_lambda},
                  {"breast_max_missing", t.breast_max_missing},
                  {"device_max_missing", t.device_max_missing},
                  {"breast_missing_pair_cost_mm2", t.breast_missing_pair_cost_mm2},
                  {"device_missing_pair_cost_mm2", t.device_missing_pair_cost_mm2},
                  {"label_gate_mm", t.label_gate_mm},
                  {"blob",
                   {{"threshold", t.blob.threshold},
                    {"area", {t.blob.area.min, t.blob.area.max}},
                    {"circularity", {t.blob.circularity.min, t.blob.circularity.max}},
                    {"bw_ratio", {t.blob.bw_ratio.min, t.blob.bw_ratio.max}}}}};
  const auto& tr = cfg.trial;
  j["trial"] = {{"observation", tr.mode == ObservationMode::Pixel ? "pixel" : "centroid"},
                {"frame_dt_s", tr.frame_dt_s},
                {"max_positioning_frames", tr.max_positioning_frames},
                {"settle_frames", tr.settle_frames},
                {"max_insertion_steps", tr.max_insertion_steps},
                {"insertion_step_mm", tr.insertion_step_mm},
                {"stop_tolerance_mm", tr.stop_tolerance_mm},
                {"max_invalid_frames", tr.max_invalid_frames},
                {"approach_distance_mm", tr.approach_distance_mm},
                {"approach_pitch_deg", tr.approach_pitch_deg},
                {"approach_yaw_deg", tr.approach_yaw_deg},
                {"misalignment_min_deg", tr.misalignment_min_deg},
                {"misalignment_max_deg", tr.misalignment_max_deg}};
  json checks = json::object();
  const auto& c = cfg.checks;
  if (c.tps_beats_rigid) checks["tps_beats_rigid"] = *c.tps_beats_rigid;
  if (c.wilcoxon_p_max) checks["wilcoxon_p_max"] = *c.wilcoxon_p_max;
  if (c.targeting_norm_max_mm) checks["targeting_norm_max_mm"] = *c.targeting_norm_max_mm;
  if (c.displacement_mean_min_mm) checks["displacement_mean_min_mm"] = *c.displacement_mean_min_mm;
  if (c.displacement_mean_max_mm) checks["displacement_mean_max_mm"] = *c.displacement_mean_max_mm;
  if (c.depth_dominant) checks["depth_dominant"] = *c.depth_dominant;
  j["checks"] = checks;
  j["worker_threads"] = cfg.worker_threads;
  j["tick_hz"] = cfg.tick_hz;
  j["lesion_id"] = cfg.lesion_id;
  return j.dump(2);
}

SimConfig noiseless_config() {
  SimConfig cfg;
  cfg.deformation.enabled = false;
  cfg.tissue.stiffness = 0.0;
  cfg.noise = NoiseConfig{0.0, 0.0, 0.0};
  return cfg;
}

}  // namespace needlenav
