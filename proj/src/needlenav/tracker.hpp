#pragma once

#include "needlenav/config.hpp"
#include "needlenav/correspond.hpp"
#include "needlenav/phantom.hpp"
#include "needlenav/registration.hpp"

#include <optional>
#include <string>
#include <vector>

namespace needlenav {

/// Everything the pipeline learned from one stereo frame.
struct FrameEstimate {
  bool valid = false;
  std::string failure;  // empty when valid
  std::vector<Point3> points;  // triangulated scene points, operating frame
  Labeling breast;
  Labeling device;
  std::vector<LabelledPair> breast_pairs;
  std::vector<LabelledPair> device_pairs;
  std::optional<RigidTransform> device_pose;  // world_from_device
  std::optional<LesionEstimate> lesion_tps;
  std::optional<LesionEstimate> lesion_rigid;
};

/// Stateful per-frame pipeline: blob detection (image input), stereo
/// matching, triangulation, labelling of breast and device markers, device
/// pose and lesion registration. Owns the label tracks of both assets.
class Tracker {
 public:
  Tracker(MarkerModel model, DeviceModel device, StereoRig rig, TrackerConfig cfg, std::size_t lesion_index = 0);

  FrameEstimate process(const StereoObservation& obs);
  /// Forgets label history.
  void reset();

  const MarkerModel& model() const { return model_; }
  std::size_t lesion_index() const { return lesion_index_; }
  void set_lesion_index(std::size_t index);
  TrackerConfig& config() { return cfg_; }

  static constexpr std::size_t kMinBreastMarkers = 4;
  static constexpr std::size_t kMinDeviceMarkers = 3;

 private:
  MarkerModel model_;
  DeviceModel device_;
  StereoRig rig_;
  TrackerConfig cfg_;
  std::size_t lesion_index_;
  Edm breast_edm_;
  Edm device_edm_;
  TrackState breast_track_;
  TrackState device_track_;
};

}  // namespace needlenav
