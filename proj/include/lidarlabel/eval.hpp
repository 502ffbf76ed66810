#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidarlabel/model.hpp"

namespace lidarlabel {

struct InstancePrediction {
  IndexSet point_indices;
  int class_id = 0;
  double score = 1.0;
};

/// Predictions and ground truth of one frame.
struct FrameInstances {
  std::vector<InstancePrediction> preds;
  std::vector<InstancePrediction> gts;
};

struct InstanceMatch {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double iou = 0.0;
};

/// Greedy matching in the given prediction order (callers sort by descending
/// score): each prediction takes the unmatched same-class GT with the highest
/// point-set IoU above `iou_threshold`; ties go to the lower GT index.
std::vector<InstanceMatch> match_instances(std::span<const InstancePrediction> preds,
                                           std::span<const InstancePrediction> gts, double iou_threshold);

struct ApResult {
  /// [class][threshold]; nullopt for classes without ground truth.
  std::vector<std::vector<std::optional<double>>> per_class_threshold;
  std::vector<std::optional<double>> per_class;  // mean over thresholds
  double mean_ap = 0.0;                          // mean over classes with >= 1 GT
};

/// All-point interpolated AP, pooled over frames; matching stays within a frame.
ApResult average_precision(std::span<const FrameInstances> frames, std::span<const double> thresholds,
                           std::size_t num_classes);

struct IouResult {
  std::vector<std::optional<double>> per_class;  // nullopt when absent from pred and GT
  double mean_iou = 0.0;                         // over present foreground classes
  /// (C+1) x (C+1), row = GT, col = prediction, index C = background.
  std::vector<std::vector<std::uint64_t>> confusion;
};

/// Class ids are in [-1, C); -1 is background and excluded from the mean.
IouResult semantic_iou(std::span<const std::int32_t> pred_classes, std::span<const std::int32_t> gt_classes,
                       std::size_t num_classes);

/// Accumulates confusion counts over several frames.
class ConfusionAccumulator {
 public:
  explicit ConfusionAccumulator(std::size_t num_classes);
  void add(std::span<const std::int32_t> pred_classes, std::span<const std::int32_t> gt_classes);
  [[nodiscard]] IouResult result() const;

 private:
  std::size_t num_classes_;
  std::vector<std::vector<std::uint64_t>> confusion_;
};

/// Fraction of points whose class_id equals the GT class (background included).
double label_accuracy(const PointLabels& labels, std::span<const std::int32_t> gt_classes);

/// Groups points by instance_id; class is the majority class_id (ties to the
/// lower class), score the mean member confidence.
std::vector<InstancePrediction> instances_from_labels(const PointLabels& labels);

struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<double> iou_thresholds;
  ApResult ap;
  IouResult iou;
  std::size_t frames = 0;

  [[nodiscard]] nlohmann::json to_json() const;
  /// Aligned text table: mAP and per-class AP (percent), then mIoU and
  /// per-class IoU (percent).
  [[nodiscard]] std::string to_table() const;
};

/// Sequence-level report over matching (prediction, GT) label pairs.
EvalReport evaluate_sequence(std::span<const PointLabels> preds, std::span<const PointLabels> gts,
                             const std::vector<std::string>& class_names, const std::vector<double>& thresholds);

}  // namespace lidarlabel
