#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace lidarlabel {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Index of a point inside its frame.
using PointIndex = std::uint32_t;
/// Sorted, duplicate-free list of point indices.
using IndexSet = std::vector<PointIndex>;

/// Raised when an input file or document is missing or malformed.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when data violates a documented invariant.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One LiDAR return in the sensor (vehicle) frame. Stored as f32, which is
/// the precision of the on-disk container.
struct Point3 {
  float x = 0.F;
  float y = 0.F;
  float z = 0.F;
  float intensity = 0.F;

  [[nodiscard]] Vec3 position() const { return {x, y, z}; }
  friend bool operator==(const Point3&, const Point3&) = default;
};

struct CameraCalibration {
  std::string view_id;
  Mat3 K = Mat3::Identity();  // intrinsics, pixels
  Mat4 T = Mat4::Identity();  // camera <- LiDAR
  std::uint32_t width = 0;
  std::uint32_t height = 0;

  friend bool operator==(const CameraCalibration&, const CameraCalibration&) = default;
};

struct Frame {
  std::string frame_id;
  double timestamp = 0.0;
  std::vector<Point3> points;
  Mat4 ego_pose = Mat4::Identity();  // world <- vehicle
  std::vector<CameraCalibration> cameras;

  [[nodiscard]] const CameraCalibration* camera(const std::string& view_id) const;
  [[nodiscard]] std::vector<Vec3> positions() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Run-length encoded binary mask. Runs alternate background/foreground in
/// row-major order, starting with background (which may be a zero run).
struct RleMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint32_t> runs;

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

RleMask rle_encode(std::span<const std::uint8_t> bitmap, std::uint32_t width, std::uint32_t height);
std::vector<std::uint8_t> rle_decode(const RleMask& mask);

struct Box2D {
  double u_min = 0.0;
  double v_min = 0.0;
  double u_max = 0.0;
  double v_max = 0.0;

  [[nodiscard]] double width() const { return u_max - u_min; }
  [[nodiscard]] double center_u() const { return 0.5 * (u_min + u_max); }
  [[nodiscard]] double center_v() const { return 0.5 * (v_min + v_max); }

  friend bool operator==(const Box2D&, const Box2D&) = default;
};

/// One 2D detection with its selected segmentation mask.
struct DetectionRecord {
  std::string view_id;
  Box2D box;
  std::map<std::string, double> prompt_scores;
  std::vector<double> class_distribution;
  double confidence = 0.0;
  RleMask mask;
  std::optional<std::vector<double>> embedding;

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

/// Per-point pseudo-labels. Distributions are stored densely, row-major N x C.
///
/// class_id == -1 marks background (zero confidence, zero distribution).
/// instance_id == -1 with class_id >= 0 is a semantic-only label, which
/// voting may produce for points no instance claimed.
struct PointLabels {
  std::uint32_t num_classes = 0;
  std::vector<std::int32_t> instance_id;
  std::vector<std::int32_t> class_id;
  std::vector<float> confidence;
  std::vector<float> distribution;

  PointLabels() = default;
  PointLabels(std::size_t n, std::uint32_t c);

  [[nodiscard]] std::size_t size() const { return class_id.size(); }
  [[nodiscard]] std::span<float> row(std::size_t i) {
    return {distribution.data() + i * num_classes, num_classes};
  }
  [[nodiscard]] std::span<const float> row(std::size_t i) const {
    return {distribution.data() + i * num_classes, num_classes};
  }
  void set_background(std::size_t i);

  friend bool operator==(const PointLabels&, const PointLabels&) = default;
};

/// Lowest index of the maximum entry; -1 for an empty span.
template <typename T>
int argmax(std::span<const T> values) {
  int best = -1;
  for (std::size_t c = 0; c < values.size(); ++c) {
    if (best < 0 || values[c] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

// Validation returns human-readable violations; an empty list means valid.
std::vector<std::string> validate_frame(const Frame& frame);
std::vector<std::string> validate_camera(const CameraCalibration& cam);
std::vector<std::string> validate_detection(const DetectionRecord& det, const CameraCalibration& cam,
                                            std::size_t num_classes);
std::vector<std::string> validate_labels(const PointLabels& labels);

bool is_rigid(const Mat4& pose, double tol = 1e-6);

}  // namespace lidarlabel
