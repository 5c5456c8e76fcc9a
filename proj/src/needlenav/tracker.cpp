#include "needlenav/tracker.hpp"

#include "needlenav/blobdetect.hpp"
#include "needlenav/error.hpp"
#include "needlenav/stats.hpp"

#include <algorithm>
#include <cmath>

namespace needlenav {

namespace {

// Mean squared EDM discrepancy of marker i against the other labelled markers.
double marker_residual(const Edm& scene, const Edm& model, const Labeling& lab, std::size_t i) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < lab.assignment.size(); ++k) {
    if (k == i || !lab.assignment[k]) continue;
    const double d = scene(*lab.assignment[i], *lab.assignment[k]) - model(i, k);
    sum += d * d;
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double marker_median_error(const Edm& scene, const Edm& model, const Labeling& lab, std::size_t i) {
  std::vector<double> errs;
  for (std::size_t k = 0; k < lab.assignment.size(); ++k) {
    if (k == i || !lab.assignment[k]) continue;
    errs.push_back(std::abs(scene(*lab.assignment[i], *lab.assignment[k]) - model(i, k)));
  }
  return median(std::move(errs));
}

// Repeatedly unlabels the worst marker while its median distance error
// exceeds the gate.
void gate_labels(const Edm& scene, const Edm& model, Labeling& lab, double gate_mm) {
  for (;;) {
    double worst = gate_mm;
    std::optional<std::size_t> worst_index;
    for (std::size_t i = 0; i < lab.assignment.size(); ++i) {
      if (!lab.assignment[i]) continue;
      const double e = marker_median_error(scene, model, lab, i);
      if (e > worst) {
        worst = e;
        worst_index = i;
      }
    }
    if (!worst_index) return;
    lab.assignment[*worst_index].reset();
  }
}

Labeling label(const Edm& scene, const Edm& model, std::size_t max_missing, double missing_cost, TrackState& track,
               std::span<const Point3> points) {
  const std::size_t n = model.size();
  PermutationOptions opts;
  opts.max_missing = std::min(max_missing, n);
  opts.missing_pair_cost = missing_cost;
  if (scene.size() + opts.max_missing < n) throw Error(ErrorCode::InsufficientData, "too few scene points");
  const Labeling profile = match_profile(scene, model);
  const Labeling permutation = match_permutation(scene, model, opts);
  return resolve(profile, permutation, track, points, model);
}

void remember(TrackState& track, const Labeling& lab, std::span<const Point3> points) {
  track.previous.resize(lab.assignment.size());
  for (std::size_t i = 0; i < lab.assignment.size(); ++i)
    if (lab.assignment[i]) track.previous[i] = points[*lab.assignment[i]];
}

}  // namespace

Tracker::Tracker(MarkerModel model, DeviceModel device, StereoRig rig, TrackerConfig cfg, std::size_t lesion_index)
    : model_(std::move(model)), device_(std::move(device)), rig_(std::move(rig)), cfg_(cfg), lesion_index_(lesion_index) {
  model_.validate();
  device_.validate();
  rig_.validate();
  cfg_.validate();
  if (lesion_index_ >= model_.lesions.size()) throw Error(ErrorCode::InvalidArgument, "tracker: lesion index out of range");
  breast_edm_ = build_edm(model_.markers);
  device_edm_ = build_edm(device_.markers);
}

void Tracker::reset() {
  breast_track_ = TrackState{};
  device_track_ = TrackState{};
}

void Tracker::set_lesion_index(std::size_t index) {
  if (index >= model_.lesions.size()) throw Error(ErrorCode::InvalidArgument, "tracker: lesion index out of range");
  lesion_index_ = index;
}

FrameEstimate Tracker::process(const StereoObservation& obs) {
  FrameEstimate out;

  std::vector<Pixel> left = obs.left, right = obs.right;
  if (obs.left_image && obs.right_image) {
    left.clear();
    right.clear();
    for (const auto& b : detect_blobs(*obs.left_image, cfg_.blob)) left.push_back(b.centroid);
    for (const auto& b : detect_blobs(*obs.right_image, cfg_.blob)) right.push_back(b.centroid);
  }

  for (const auto& pair : stereo_match(left, right, rig_, cfg_.row_tolerance_px)) {
    try {
      const Triangulation t = triangulate(left[pair.left], right[pair.right], rig_);
      if (!t.near_parallel) out.points.push_back(t.point);
    } catch (const Error&) {
      // Non-positive disparity: not a physical point.
    }
  }
  if (out.points.size() < 2) {
    out.failure = "fewer than two reconstructed points";
    return out;
  }

  const Edm scene = build_edm(out.points);
  TrackState breast_track = breast_track_, device_track = device_track_;
  try {
    out.breast = label(scene, breast_edm_, cfg_.breast_max_missing, cfg_.breast_missing_pair_cost_mm2, breast_track, out.points);
    out.device = label(scene, device_edm_, cfg_.device_max_missing, cfg_.device_missing_pair_cost_mm2, device_track, out.points);
  } catch (const Error& e) {
    out.failure = std::string("labelling: ") + e.what();
    return out;
  }

  // A point claimed by both assets stays with the one that explains it better.
  for (std::size_t d = 0; d < out.device.assignment.size(); ++d) {
    if (!out.device.assignment[d]) continue;
    for (std::size_t b = 0; b < out.breast.assignment.size(); ++b) {
      if (out.breast.assignment[b] != out.device.assignment[d]) continue;
      if (marker_residual(scene, device_edm_, out.device, d) <= marker_residual(scene, breast_edm_, out.breast, b))
        out.breast.assignment[b].reset();
      else
        out.device.assignment[d].reset();
      break;
    }
  }
  gate_labels(scene, breast_edm_, out.breast, cfg_.label_gate_mm);
  gate_labels(scene, device_edm_, out.device, cfg_.label_gate_mm);
  out.breast.residual = labeling_residual(scene, breast_edm_, out.breast.assignment);
  out.device.residual = labeling_residual(scene, device_edm_, out.device.assignment);

  // History only records labels that survived arbitration and gating.
  breast_track_.frame = breast_track.frame;
  device_track_.frame = device_track.frame;
  remember(breast_track_, out.breast, out.points);
  remember(device_track_, out.device, out.points);

  for (std::size_t i = 0; i < out.breast.assignment.size(); ++i)
    if (out.breast.assignment[i]) out.breast_pairs.push_back({i, out.points[*out.breast.assignment[i]]});
  for (std::size_t i = 0; i < out.device.assignment.size(); ++i)
    if (out.device.assignment[i]) out.device_pairs.push_back({i, out.points[*out.device.assignment[i]]});

  if (out.breast_pairs.size() < kMinBreastMarkers) {
    out.failure = "fewer than 4 labelled breast markers";
    return out;
  }
  if (out.device_pairs.size() < kMinDeviceMarkers) {
    out.failure = "fewer than 3 labelled device markers";
    return out;
  }

  try {
    std::vector<Point3> src, dst;
    for (const auto& p : out.device_pairs) {
      src.push_back(device_.markers[p.model_index]);
      dst.push_back(p.scene);
    }
    out.device_pose = procrustes(src, dst);
    out.lesion_tps = estimate_lesion(model_, out.breast_pairs, TransformKind::Tps, cfg_.tps_lambda, lesion_index_);
    out.lesion_rigid = estimate_lesion(model_, out.breast_pairs, TransformKind::Rigid, 0.0, lesion_index_);
  } catch (const Error& e) {
    out.failure = std::string("registration: ") + e.what();
    out.device_pose.reset();
    out.lesion_tps.reset();
    out.lesion_rigid.reset();
    return out;
  }
  out.valid = true;
  return out;
}

}  // namespace needlenav
