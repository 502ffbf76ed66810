#pragma once

// Lifting 2D detections to per-point 3D instance pseudo-labels.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lidarlabel/config.hpp"
#include "lidarlabel/geometry.hpp"
#include "lidarlabel/model.hpp"

namespace lidarlabel {

struct Instance3D {
  std::int32_t instance_id = -1;
  IndexSet point_indices;
  std::vector<double> class_distribution;
  double confidence = 0.0;
  std::set<std::string> source_views;
  std::optional<std::vector<double>> embedding;
};

struct ClassDistribution {
  std::vector<double> distribution;
  double confidence = 0.0;
};

/// Per class, the best score over its prompts; confidence is the maximum
/// entry. Throws InputError for prompts absent from `prompt_to_class`.
ClassDistribution extract_distribution(const std::map<std::string, double>& prompt_scores,
                                       const std::map<std::string, int>& prompt_to_class, std::size_t num_classes);

/// Merges each bicycle detection with the nearest qualifying person above it
/// into a single cyclist detection. Detections must share one view.
std::vector<DetectionRecord> merge_rider(const std::vector<DetectionRecord>& detections, int bicycle_class,
                                         int person_class, int cyclist_class, const RiderMergeConfig& cfg);

/// Lifts one detection mask onto the frame and keeps its largest connected
/// cluster. `projections` must come from project_points for the detection's
/// view; the overload without it projects on the fly.
std::optional<Instance3D> build_instance(std::span<const Vec3> points, std::span<const ProjectedPoint> projections,
                                         const DetectionRecord& det, double cluster_voxel_size);
std::optional<Instance3D> build_instance(const Frame& frame, const DetectionRecord& det, double cluster_voxel_size);

/// Unions instances from different views whose point-set IoU exceeds the
/// threshold (transitively). Output ids are 0..K-1, ordered by size (desc)
/// then smallest point index, so the result does not depend on input order.
std::vector<Instance3D> cross_view_merge(const std::vector<Instance3D>& instances, double iou_threshold);

/// Writes instance attributes onto points. Contested points go to the more
/// confident instance, ties to the lower instance id.
PointLabels assign_point_labels(const std::vector<Instance3D>& instances, std::size_t num_points,
                                std::uint32_t num_classes);

/// Full per-frame chain: rider merge (per view), lifting, cross-view merge,
/// point assignment.
PointLabels generate_pseudo_labels(const Frame& frame, const std::vector<DetectionRecord>& detections,
                                   const PipelineConfig& cfg);

}  // namespace lidarlabel
