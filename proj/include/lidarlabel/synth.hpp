#pragma once

// Seeded synthetic sequences with exact ground truth and VFM-like detections.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidarlabel/model.hpp"

namespace lidarlabel {

struct ObjectSpec {
  std::string class_name;
  Vec3 extents{1.0, 1.0, 1.0};  // box size, meters
  Vec3 center{10.0, 0.0, 0.0};  // world position at frame 0
  Vec3 velocity{0.0, 0.0, 0.0}; // world meters per frame
  std::uint32_t points = 100;   // samples per frame
};

struct NoiseSpec {
  double label_flip_prob = 0.0;      // detection class swapped with another class
  double detection_drop_prob = 0.0;
  std::uint32_t mask_dilation = 0;   // pixels
  double score_noise_sigma = 0.0;
  double rider_split_prob = 0.0;     // cyclist detection split into bicycle + person
};

/// Cameras share the vehicle origin and are spread evenly in yaw.
struct RigSpec {
  std::uint32_t num_cameras = 6;
  std::uint32_t width = 480;
  std::uint32_t height = 320;
  double hfov_deg = 90.0;
};

struct SceneSpec {
  std::uint64_t seed = 7;
  std::uint32_t num_frames = 5;
  double frame_interval = 0.1;  // seconds
  double ego_speed = 0.5;       // meters per frame along world x
  std::vector<std::string> class_names{"vehicle", "pedestrian", "cyclist"};
  std::map<std::string, std::vector<std::string>> prompts{
      {"vehicle", {"car", "vehicle"}}, {"pedestrian", {"person", "pedestrian"}}, {"cyclist", {"bicycle", "cyclist"}}};
  /// Explicit objects. When empty, `random_objects` are placed automatically
  /// at distinct bearings.
  std::vector<ObjectSpec> objects;
  std::uint32_t random_objects = 12;
  std::uint32_t background_points = 1500;
  NoiseSpec noise;
  RigSpec rig;
};

std::vector<std::string> validate_scene_spec(const SceneSpec& spec);

void to_json(nlohmann::json& j, const SceneSpec& spec);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, SceneSpec& spec);
SceneSpec load_scene_spec(const std::string& path);

struct SyntheticSequence {
  std::vector<Frame> frames;
  std::vector<PointLabels> ground_truth;
  std::vector<std::vector<DetectionRecord>> detections;
  std::vector<ObjectSpec> objects;  // the placed objects
};

/// Throws std::invalid_argument for an invalid spec or a scene too crowded to
/// keep object bearings apart.
SyntheticSequence generate_sequence(const SceneSpec& spec);

/// Each labeled point's class is resampled uniformly among the other classes
/// with probability `flip_prob`; the old and new distribution entries are
/// swapped so the argmax follows.
PointLabels corrupt_labels(const PointLabels& labels, double flip_prob, std::uint64_t seed);

/// Camera rig in the vehicle frame: camera z along the yaw direction.
std::vector<CameraCalibration> make_rig(const RigSpec& rig);

}  // namespace lidarlabel
