#include "needlenav/harness.hpp"

#include "needlenav/error.hpp"
#include "needlenav/guidance.hpp"
#include "needlenav/rng.hpp"
#include "needlenav/tracker.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

namespace needlenav {

namespace {

// Rotation taking the device +z axis onto the needle direction for (az, el).
Mat3 needle_rotation(double azimuth_deg, double elevation_deg) {
  return (Eigen::AngleAxisd(deg2rad(azimuth_deg), Vec3::UnitY()) *
          Eigen::AngleAxisd(-deg2rad(elevation_deg), Vec3::UnitX()))
      .toRotationMatrix();
}

// Frame with +z along `forward` and +y as close to `up` as possible.
Mat3 frame_from_forward(const Vec3& forward, const Vec3& up) {
  const Vec3 z = forward.normalized();
  Vec3 y = up - up.dot(z) * z;
  if (y.norm() < 1e-9) y = Vec3::UnitY() - Vec3::UnitY().dot(z) * z;
  y.normalize();
  Mat3 r;
  r.col(0) = y.cross(z);
  r.col(1) = y;
  r.col(2) = z;
  return RigidTransform::nearest_rotation(r);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_trace_row(std::ostream& out, const SceneState& s, std::size_t lesion) {
  out << fmt("%.4f", s.time_s);
  const Point3& l = s.lesions[lesion];
  for (int k = 0; k < 3; ++k) out << ',' << fmt("%.6f", l[k]);
  for (const auto& m : s.markers)
    for (int k = 0; k < 3; ++k) out << ',' << fmt("%.6f", m[k]);
  out << '\n';
}

void write_trace_header(std::ostream& out, std::size_t markers) {
  out << "t,lesion_x,lesion_y,lesion_z";
  for (std::size_t i = 0; i < markers; ++i) out << ",m" << i + 1 << "_x,m" << i + 1 << "_y,m" << i + 1 << "_z";
  out << '\n';
}

class TrialRunner {
 public:
  TrialRunner(const SimConfig& cfg, std::uint64_t seed, const TrialSinks& sinks)
      : cfg_(cfg),
        seed_(seed),
        sinks_(sinks),
        rig_(cfg.rig.build()),
        phantom_(build_phantom(cfg, seed)),
        lesion_(phantom_.model.lesion_index(cfg.lesion_id)),
        state_(initial_scene(cfg, phantom_, seed)),
        tracker_(phantom_.model, cfg.device, rig_, cfg.tracker, lesion_) {
    record_.seed = seed;
    record_.displacement = state_.lesions[lesion_] - state_.rest_lesions[lesion_];
    record_.displacement_norm = record_.displacement.norm();
    if (sinks_.trace) write_trace_header(*sinks_.trace, state_.markers.size());
    if (sinks_.command_log) log_.emplace(*sinks_.command_log);
    // Smoothing starts from where the gears actually are.
    const NeedleAngles home = state_.needle_angles(cfg_.device);
    previous_ = SteeringCommand{home.azimuth_deg, home.elevation_deg, false, 0.0};
  }

  TrialRecord run() {
    try {
      position();
      if (!record_.failed) insert();
    } catch (const Error& e) {
      fail(e.what());
    }
    finish();
    return std::move(record_);
  }

 private:
  // One frame of the closed loop: observe, estimate, command the gears.
  // Returns the estimate, or nothing when the frame was unusable.
  std::optional<FrameEstimate> step(Phase phase) {
    if (sinks_.trace) write_trace_row(*sinks_.trace, state_, lesion_);
    const StereoObservation obs =
        observe(state_, phantom_, cfg_.device, rig_, cfg_.noise, cfg_.trial.mode, seed_);
    FrameEstimate est = tracker_.process(obs);
    ++record_.frame_count;
    if (!est.valid) {
      if (++invalid_run_ > cfg_.trial.max_invalid_frames) fail("too many consecutive invalid frames: " + est.failure);
      return std::nullopt;
    }
    invalid_run_ = 0;
    ++record_.valid_frames;

    FrameError fe;
    fe.frame = state_.frame;
    fe.tps = est.lesion_tps->position - state_.lesions[lesion_];
    fe.tps_norm = fe.tps.norm();
    fe.rigid = est.lesion_rigid->position - state_.lesions[lesion_];
    fe.rigid_norm = fe.rigid.norm();
    record_.frames.push_back(fe);

    DeviceState ds;
    ds.pose = *est.device_pose;
    ds.gear1_deg = state_.gear1_deg;
    ds.gear2_deg = state_.gear2_deg;
    ds.phase = phase;
    const NeedleAngles now = gear_forward(state_.gear1_deg, state_.gear2_deg, cfg_.device.ratios);
    ds.tip = ds.pose.apply(cfg_.device.needle_length_mm * direction_from_angles(now.azimuth_deg, now.elevation_deg));

    const CommandResult res = compute_command(ds, *est.lesion_tps, cfg_.guidance.limits, previous_,
                                              cfg_.guidance.smoothing_alpha, state_.time_s);
    if (res.command) {
      const SteeringCommand& cmd = *res.command;
      const GearAngles g = gear_inverse(cmd.azimuth_deg, cmd.elevation_deg, cfg_.device.ratios, cfg_.guidance.limits);
      state_.gear1_deg = g.gear1_deg;
      state_.gear2_deg = g.gear2_deg;
      previous_ = cmd;
      alignment_error_ = angle_between_deg(direction_from_angles(cmd.azimuth_deg, cmd.elevation_deg),
                                           direction_from_angles(res.raw.azimuth_deg, res.raw.elevation_deg));
    } else {
      alignment_error_ = 0.0;
    }
    const Vec3 axis = ds.pose.apply_vector(
        direction_from_angles(previous_ ? previous_->azimuth_deg : 0.0, previous_ ? previous_->elevation_deg : 0.0));
    const Point3 tip = ds.pose.translation() + cfg_.device.needle_length_mm * axis;
    remaining_ = (est.lesion_tps->position - tip).dot(axis);
    if (log_ && previous_) {
      const FeedbackState fb =
          feedback((est.lesion_tps->position - tip).norm(), cfg_.guidance.feedback, alignment_error_);
      log_->append(*previous_, fb, phase);
    }
    return est;
  }

  void tick() {
    ++state_.frame;
    state_.time_s += cfg_.trial.frame_dt_s;
  }

  void position() {
    std::size_t aligned_run = 0;
    for (std::size_t f = 0; f < cfg_.trial.max_positioning_frames && !record_.failed; ++f) {
      const bool valid = step(Phase::Positioning).has_value();
      ++record_.positioning_frames;
      tick();
      aligned_run = valid && alignment_error_ <= cfg_.guidance.feedback.align_tolerance_deg ? aligned_run + 1 : 0;
      if (aligned_run >= cfg_.trial.settle_frames) return;
    }
    if (!record_.failed) fail("needle did not align within the positioning budget");
  }

  void insert() {
    for (std::size_t s = 0; s < cfg_.trial.max_insertion_steps && !record_.failed; ++s) {
      const bool valid = step(Phase::Inserting).has_value();
      if (valid && remaining_ <= cfg_.trial.stop_tolerance_mm) {
        record_.reached = true;
        return;
      }
      if (valid) {
        state_ = insert_needle(state_, cfg_.device, std::min(cfg_.trial.insertion_step_mm, remaining_), cfg_.tissue);
        ++record_.insertion_steps;
      }
      tick();
    }
  }

  void fail(const std::string& why) {
    if (record_.failed) return;
    record_.failed = true;
    record_.failure = why;
  }

  void finish() {
    if (!record_.frames.empty()) {
      for (const auto& f : record_.frames) {
        record_.tps_mean_abs += f.tps.cwiseAbs();
        record_.tps_mean_norm += f.tps_norm;
        record_.rigid_mean_abs += f.rigid.cwiseAbs();
        record_.rigid_mean_norm += f.rigid_norm;
      }
      const double n = static_cast<double>(record_.frames.size());
      record_.tps_mean_abs /= n;
      record_.tps_mean_norm /= n;
      record_.rigid_mean_abs /= n;
      record_.rigid_mean_norm /= n;
    } else {
      fail("no valid frame");
    }
    const Vec3 err = state_.needle_tip(cfg_.device) - state_.lesions[lesion_];
    const NeedleAngles a = state_.needle_angles(cfg_.device);
    const Mat3 needle = state_.device_pose.rotation() * needle_rotation(a.azimuth_deg, a.elevation_deg);
    record_.target_needle = needle.transpose() * err;
    record_.target_camera = rig_.pose(Camera::Left).rotation().transpose() * err;
    record_.target_norm = err.norm();
  }

  const SimConfig& cfg_;
  std::uint64_t seed_;
  TrialSinks sinks_;
  StereoRig rig_;
  Phantom phantom_;
  std::size_t lesion_;
  SceneState state_;
  Tracker tracker_;
  std::optional<CommandLog> log_;
  TrialRecord record_;
  std::optional<SteeringCommand> previous_;
  double alignment_error_ = 180.0;
  double remaining_ = 0.0;
  std::size_t invalid_run_ = 0;
};

ErrorRow aggregate(const std::vector<Vec3>& vectors, const std::vector<double>& norms) {
  ErrorRow row;
  if (vectors.empty()) return row;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const Vec3 a = vectors[i].cwiseAbs();
    row.mean += a;
    row.max = row.max.cwiseMax(a);
    row.norm_mean += norms[i];
    row.norm_max = std::max(row.norm_max, norms[i]);
  }
  row.mean /= static_cast<double>(vectors.size());
  row.norm_mean /= static_cast<double>(vectors.size());
  return row;
}

void evaluate_checks(const ExperimentChecks& c, ExperimentReport& r) {
  const auto add = [&](std::string name, bool ok, std::string detail) { r.checks.push_back({std::move(name), ok, std::move(detail)}); };
  if (c.tps_beats_rigid) {
    const bool ok = (r.tps.norm_mean < r.rigid.norm_mean) == *c.tps_beats_rigid;
    add("tps_beats_rigid", ok, fmt("tps %.4f", r.tps.norm_mean) + fmt(" vs rigid %.4f mm", r.rigid.norm_mean));
  }
  if (c.wilcoxon_p_max) {
    const bool ok = r.wilcoxon && r.wilcoxon->p_two_sided < *c.wilcoxon_p_max;
    add("wilcoxon_p_max", ok, r.wilcoxon ? fmt("p = %.6g", r.wilcoxon->p_two_sided) : r.wilcoxon_note);
  }
  if (c.targeting_norm_max_mm) {
    const bool ok = r.targeting.norm_mean <= *c.targeting_norm_max_mm;
    add("targeting_norm_max_mm", ok, fmt("mean targeting norm %.4f mm", r.targeting.norm_mean));
  }
  if (c.displacement_mean_min_mm) {
    const bool ok = r.displacement.norm_mean >= *c.displacement_mean_min_mm;
    add("displacement_mean_min_mm", ok, fmt("mean displacement %.4f mm", r.displacement.norm_mean));
  }
  if (c.displacement_mean_max_mm) {
    const bool ok = r.displacement.norm_mean <= *c.displacement_mean_max_mm;
    add("displacement_mean_max_mm", ok, fmt("mean displacement %.4f mm", r.displacement.norm_mean));
  }
  if (c.depth_dominant) {
    const Vec3& m = r.targeting_camera.mean;
    const bool dominant = m.z() > m.x() && m.z() > m.y();
    add("depth_dominant", dominant == *c.depth_dominant,
        fmt("camera |x| %.4f", m.x()) + fmt(" |y| %.4f", m.y()) + fmt(" |z| %.4f mm", m.z()));
  }
}

}  // namespace

Phantom build_phantom(const SimConfig& cfg, std::uint64_t seed) {
  if (cfg.model_file) {
    return make_phantom(load_marker_model(*cfg.model_file), RigidTransform::identity(), cfg.phantom.marker_radius_mm);
  }
  return make_phantom(cfg.phantom, seed);
}

SceneState initial_scene(const SimConfig& cfg, const Phantom& phantom, std::uint64_t seed) {
  SceneState s = deform(phantom, random_field(phantom, cfg.deformation, seed));
  const Point3 lesion = s.lesions[phantom.model.lesion_index(cfg.lesion_id)];

  auto rng = make_rng(seed, kStreamDevice);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> magnitude(cfg.trial.misalignment_min_deg, cfg.trial.misalignment_max_deg);
  const double yaw = deg2rad(90.0 + cfg.trial.approach_yaw_deg * unit(rng));
  const double pitch = deg2rad(cfg.trial.approach_pitch_deg);
  const Vec3 forward(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), -std::sin(pitch));
  const double az = magnitude(rng) * (unit(rng) < 0.0 ? -1.0 : 1.0);
  const double el = magnitude(rng) * (unit(rng) < 0.0 ? -1.0 : 1.0);

  // The device is mounted so that gear angles (az, el) would point the
  // needle at the lesion; it starts at the gear home position instead.
  const Mat3 aimed = frame_from_forward(forward, Vec3::UnitZ());
  const Mat3 rotation = RigidTransform::nearest_rotation(aimed * needle_rotation(az, el).transpose());
  s.device_pose = RigidTransform(rotation, lesion - cfg.trial.approach_distance_mm * forward);
  s.gear1_deg = 0.0;
  s.gear2_deg = 0.0;
  return s;
}

TrialRecord run_trial(const SimConfig& cfg, std::uint64_t seed, const TrialSinks& sinks) {
  cfg.validate();
  return TrialRunner(cfg, seed, sinks).run();
}

bool ExperimentReport::checks_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

ExperimentReport run_experiment(const SimConfig& cfg, std::size_t n_trials, std::uint64_t base_seed) {
  if (n_trials < 2) throw Error(ErrorCode::InvalidArgument, "run_experiment: need at least 2 trials");
  cfg.validate();

  ExperimentReport report;
  report.trials = n_trials;
  report.base_seed = base_seed;
  report.records.resize(n_trials);

  std::size_t workers = cfg.worker_threads ? cfg.worker_threads : std::thread::hardware_concurrency();
  workers = std::clamp<std::size_t>(workers, 1, n_trials);
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::string first_error;
  const auto work = [&] {
    for (std::size_t i = next++; i < n_trials; i = next++) {
      try {
        report.records[i] = run_trial(cfg, base_seed + i);
      } catch (const std::exception& e) {
        TrialRecord r;
        r.seed = base_seed + i;
        r.failed = true;
        r.failure = e.what();
        report.records[i] = r;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::vector<Vec3> tps, rigid, disp, target, target_cam;
  std::vector<double> tps_n, rigid_n, disp_n, target_n;
  for (const auto& r : report.records) {
    if (r.failed) {
      ++report.failed;
      continue;
    }
    tps.push_back(r.tps_mean_abs);
    tps_n.push_back(r.tps_mean_norm);
    rigid.push_back(r.rigid_mean_abs);
    rigid_n.push_back(r.rigid_mean_norm);
    disp.push_back(r.displacement);
    disp_n.push_back(r.displacement_norm);
    target.push_back(r.target_needle);
    target_cam.push_back(r.target_camera);
    target_n.push_back(r.target_norm);
  }
  if (tps.empty()) throw Error(ErrorCode::PipelineFailure, "run_experiment: every trial failed");

  report.tps = aggregate(tps, tps_n);
  report.rigid = aggregate(rigid, rigid_n);
  report.displacement = aggregate(disp, disp_n);
  report.targeting = aggregate(target, target_n);
  report.targeting_camera = aggregate(target_cam, target_n);

  if (tps_n == rigid_n) {
    // No evidence either way: every paired difference is zero.
    report.wilcoxon = WilcoxonResult{};
    report.wilcoxon_note = "all paired differences are zero";
  } else {
    try {
      report.wilcoxon = wilcoxon_signed_rank(tps_n, rigid_n);
    } catch (const Error& e) {
      report.wilcoxon_note = e.what();
    }
  }
  try {
    report.spearman_rs = spearman(tps_n, disp_n);
  } catch (const Error& e) {
    report.spearman_note = e.what();
  }
  evaluate_checks(cfg.checks, report);
  return report;
}

namespace {

void write_row(std::ostream& out, const char* name, const ErrorRow& r) {
  out << name;
  for (int k = 0; k < 3; ++k) out << ',' << fmt("%.6f", r.mean[k]) << ',' << fmt("%.6f", r.max[k]);
  out << ',' << fmt("%.6f", r.norm_mean) << ',' << fmt("%.6f", r.norm_max) << '\n';
}

void write_vec(std::ostream& out, const Vec3& v) {
  for (int k = 0; k < 3; ++k) out << ',' << fmt("%.6f", v[k]);
}

nlohmann::json row_json(const ErrorRow& r) {
  return {{"mean", {r.mean.x(), r.mean.y(), r.mean.z()}},
          {"max", {r.max.x(), r.max.y(), r.max.z()}},
          {"norm_mean", r.norm_mean},
          {"norm_max", r.norm_max}};
}

}  // namespace

void write_table1_csv(const ExperimentReport& report, std::ostream& out) {
  out << "method,e_x_mean,e_x_max,e_y_mean,e_y_max,e_z_mean,e_z_max,norm_mean,norm_max\n";
  write_row(out, "tps", report.tps);
  write_row(out, "rigid", report.rigid);
  write_row(out, "displacement", report.displacement);
}

void write_table2_csv(const ExperimentReport& report, std::ostream& out) {
  out << "frame,d_x_mean,d_x_max,d_y_mean,d_y_max,d_z_mean,d_z_max,norm_mean,norm_max\n";
  write_row(out, "needle", report.targeting);
  write_row(out, "camera", report.targeting_camera);
}

void write_trials_csv(const ExperimentReport& report, std::ostream& out) {
  out << "seed,status,frames,valid_frames,positioning_frames,insertion_steps,reached,"
         "tps_x,tps_y,tps_z,tps_norm,rigid_x,rigid_y,rigid_z,rigid_norm,"
         "disp_x,disp_y,disp_z,disp_norm,d_x,d_y,d_z,cam_x,cam_y,cam_z,target_norm,failure\n";
  for (const auto& r : report.records) {
    out << r.seed << ',' << (r.failed ? "failed" : "ok") << ',' << r.frame_count << ',' << r.valid_frames << ','
        << r.positioning_frames << ',' << r.insertion_steps << ',' << (r.reached ? 1 : 0);
    write_vec(out, r.tps_mean_abs);
    out << ',' << fmt("%.6f", r.tps_mean_norm);
    write_vec(out, r.rigid_mean_abs);
    out << ',' << fmt("%.6f", r.rigid_mean_norm);
    write_vec(out, r.displacement);
    out << ',' << fmt("%.6f", r.displacement_norm);
    write_vec(out, r.target_needle);
    write_vec(out, r.target_camera);
    out << ',' << fmt("%.6f", r.target_norm) << ',';
    std::string reason = r.failure;
    std::replace(reason.begin(), reason.end(), ',', ';');
    out << reason << '\n';
  }
}

std::string report_to_json(const ExperimentReport& r) {
  nlohmann::json j;
  j["trials"] = r.trials;
  j["failed"] = r.failed;
  j["base_seed"] = r.base_seed;
  j["aggregation"] = "per-trial means over valid frames; mean and max taken across trials";
  j["frames"] = {{"estimation", "operating"}, {"targeting", "needle"}, {"targeting_camera", "left camera"}};
  j["table1"] = {{"tps", row_json(r.tps)}, {"rigid", row_json(r.rigid)}, {"displacement", row_json(r.displacement)}};
  j["table2"] = {{"needle", row_json(r.targeting)}, {"camera", row_json(r.targeting_camera)}};
  if (r.wilcoxon) {
    j["wilcoxon"] = {{"w_plus", r.wilcoxon->w_plus},
                     {"w_minus", r.wilcoxon->w_minus},
                     {"n_effective", r.wilcoxon->n_effective},
                     {"z", r.wilcoxon->z},
                     {"p_two_sided", r.wilcoxon->p_two_sided},
                     {"exact", r.wilcoxon->exact}};
  } else {
    j["wilcoxon"] = {{"error", r.wilcoxon_note}};
  }
  if (r.spearman_rs)
    j["spearman"] = {{"r_s", *r.spearman_rs}};
  else
    j["spearman"] = {{"error", r.spearman_note}};
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) checks.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  j["checks"] = checks;
  j["checks_passed"] = r.checks_passed();
  return j.dump(2);
}

void write_outputs(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  const auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("table1.csv");
    write_table1_csv(report, f);
  }
  {
    auto f = open("table2.csv");
    write_table2_csv(report, f);
  }
  {
    auto f = open("trials.csv");
    write_trials_csv(report, f);
  }
  {
    auto f = open("report.json");
    f << report_to_json(report) << '\n';
  }
}

void render_debug(const SimConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir) {
  cfg.validate();
  const Phantom phantom = build_phantom(cfg, seed);
  const SceneState state = initial_scene(cfg, phantom, seed);
  const StereoObservation obs =
      observe(state, phantom, cfg.device, cfg.rig.build(), cfg.noise, ObservationMode::Pixel, seed);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  write_pgm(*obs.left_image, dir / "left.pgm");
  write_pgm(*obs.right_image, dir / "right.pgm");
}

}  // namespace needlenav
