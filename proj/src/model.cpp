#include "lidarlabel/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/LU>

namespace lidarlabel {

const CameraCalibration* Frame::camera(const std::string& view_id) const {
  for (const auto& cam : cameras) {
    if (cam.view_id == view_id) return &cam;
  }
  return nullptr;
}

std::vector<Vec3> Frame::positions() const {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.position());
  return out;
}

PointLabels::PointLabels(std::size_t n, std::uint32_t c)
    : num_classes(c),
      instance_id(n, -1),
      class_id(n, -1),
      confidence(n, 0.F),
      distribution(n * c, 0.F) {}

void PointLabels::set_background(std::size_t i) {
  instance_id[i] = -1;
  class_id[i] = -1;
  confidence[i] = 0.F;
  std::ranges::fill(row(i), 0.F);
}

bool is_rigid(const Mat4& pose, double tol) {
  if (!pose.allFinite()) return false;
  const Mat3 r = pose.topLeftCorner<3, 3>();
  if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  if (std::abs(r.determinant() - 1.0) > tol) return false;
  const Eigen::RowVector4d last = pose.row(3);
  return (last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() <= tol;
}

std::vector<std::string> validate_camera(const CameraCalibration& cam) {
  std::vector<std::string> v;
  const std::string who = "cameras[" + cam.view_id + "]";
  if (!cam.K.allFinite()) v.push_back(who + ".K non-finite");
  if (cam.K(2, 2) != 1.0) v.push_back(who + ".K[2][2] must be 1");
  if (!(cam.K(0, 0) > 0.0) || !(cam.K(1, 1) > 0.0)) v.push_back(who + ".K focal lengths must be positive");
  if (!is_rigid(cam.T)) v.push_back(who + ".T rotation");
  if (cam.width == 0 || cam.height == 0) v.push_back(who + " image size must be positive");
  return v;
}

std::vector<std::string> validate_frame(const Frame& frame) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto& p = frame.points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.intensity)) {
      v.push_back("points[" + std::to_string(i) + "] non-finite");
    }
  }
  if (!is_rigid(frame.ego_pose)) v.push_back("ego_pose rotation");
  if (frame.cameras.empty()) v.push_back("cameras must contain at least one calibration");
  for (const auto& cam : frame.cameras) {
    auto cv = validate_camera(cam);
    v.insert(v.end(), cv.begin(), cv.end());
  }
  return v;
}

std::vector<std::string> validate_detection(const DetectionRecord& det, const CameraCalibration& cam,
                                            std::size_t num_classes) {
  std::vector<std::string> v;
  const auto& b = det.box;
  if (!(b.u_min <= b.u_max && b.v_min <= b.v_max)) v.push_back("box not well-ordered");
  if (b.u_min < 0.0 || b.v_min < 0.0 || b.u_max > cam.width || b.v_max > cam.height) {
    v.push_back("box outside image");
  }
  for (const auto& [prompt, score] : det.prompt_scores) {
    if (!(score >= 0.0 && score <= 1.0)) v.push_back("prompt_scores[" + prompt + "] outside [0,1]");
  }
  if (det.class_distribution.size() != num_classes) {
    v.push_back("class_distribution length " + std::to_string(det.class_distribution.size()) +
                " != " + std::to_string(num_classes));
  }
  for (const double p : det.class_distribution) {
    if (!(p >= 0.0 && p <= 1.0)) {
      v.push_back("class_distribution entry outside [0,1]");
      break;
    }
  }
  const double max_p = det.class_distribution.empty()
                           ? 0.0
                           : *std::ranges::max_element(det.class_distribution);
  if (!(std::abs(det.confidence - max_p) <= 1e-9)) v.push_back("confidence != max(class_distribution)");
  if (det.mask.width != cam.width || det.mask.height != cam.height) v.push_back("mask size != camera size");
  const std::size_t sum = std::accumulate(det.mask.runs.begin(), det.mask.runs.end(), std::size_t{0});
  if (sum != static_cast<std::size_t>(det.mask.width) * det.mask.height) v.push_back("mask runs do not sum to width*height");
  if (det.embedding) {
    double norm2 = 0.0;
    for (const double e : *det.embedding) norm2 += e * e;
    if (!(std::abs(std::sqrt(norm2) - 1.0) <= 1e-6)) v.push_back("embedding not unit-norm");
  }
  return v;
}

std::vector<std::string> validate_labels(const PointLabels& labels) {
  std::vector<std::string> v;
  const std::size_t n = labels.class_id.size();
  if (labels.instance_id.size() != n || labels.confidence.size() != n ||
      labels.distribution.size() != n * labels.num_classes) {
    v.push_back("label arrays differ in length");
    return v;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = labels.class_id[i];
    const auto row = labels.row(i);
    if (c < -1 || c >= static_cast<std::int32_t>(labels.num_classes)) {
      v.push_back("class_id[" + std::to_string(i) + "] out of range");
      continue;
    }
    if (c == -1) {
      if (labels.confidence[i] != 0.F || std::ranges::any_of(row, [](float x) { return x != 0.F; })) {
        v.push_back("background point " + std::to_string(i) + " carries confidence or distribution");
      }
      if (labels.instance_id[i] != -1) v.push_back("background point " + std::to_string(i) + " has an instance");
      continue;
    }
    if (!(labels.confidence[i] >= 0.F && labels.confidence[i] <= 1.F)) {
      v.push_back("confidence[" + std::to_string(i) + "] outside [0,1]");
    }
    const bool nonzero = std::ranges::any_of(row, [](float x) { return x != 0.F; });
    if (nonzero && row[static_cast<std::size_t>(c)] != *std::ranges::max_element(row)) {
      v.push_back("class_id[" + std::to_string(i) + "] != argmax(distribution)");
    }
  }
  return v;
}

}  // namespace lidarlabel
