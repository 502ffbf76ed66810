#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "lidarlabel/model.hpp"

namespace lidarlabel {

/// Integer voxel coordinates, floor(coord / voxel_size) per axis.
struct VoxelKey {
  std::int32_t ix = 0;
  std::int32_t iy = 0;
  std::int32_t iz = 0;

  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(k.ix);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(k.iy);
    h = h * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint32_t>(k.iz);
    h ^= h >> 29;
    return static_cast<std::size_t>(h * 0xBF58476D1CE4E5B9ULL);
  }
};

VoxelKey voxel_key(const Vec3& p, double voxel_size);
/// Center of the voxel in meters.
Vec3 voxel_center(const VoxelKey& k, double voxel_size);

using VoxelBuckets = std::unordered_map<VoxelKey, std::vector<PointIndex>, VoxelKeyHash>;

/// Buckets every point by voxel. Indices inside a bucket are ascending.
VoxelBuckets voxelize(std::span<const Vec3> points, double voxel_size);

struct ProjectedPoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // z_c, meters
  bool in_image = false;
};

inline constexpr double kMinDepth = 1e-6;

/// Pinhole projection z_c [u v 1]^T = K T [x y z 1]^T.
ProjectedPoint project_point(const Vec3& p, const CameraCalibration& calib);
std::vector<ProjectedPoint> project_points(std::span<const Vec3> points, const CameraCalibration& calib);

/// Inverse of a rigid transform. Throws std::invalid_argument when `pose`
/// is not rigid.
Mat4 rigid_inverse(const Mat4& pose);

/// Maps points expressed in `src_pose`'s frame into `dst_pose`'s frame,
/// i.e. applies dst_pose^-1 * src_pose.
std::vector<Vec3> transform_points(std::span<const Vec3> points, const Mat4& src_pose, const Mat4& dst_pose);

/// Voxel connectivity clustering: two points are linked when their voxels at
/// `link_voxel_size` coincide or are 26-adjacent. Clusters are returned as
/// ascending index sets, ordered by size (desc) then smallest member.
std::vector<IndexSet> connected_components(std::span<const PointIndex> indices, std::span<const Vec3> points,
                                           double link_voxel_size);

/// |a ∩ b| / |a ∪ b| over sorted index sets; 0 when both are empty.
double point_set_iou(std::span<const PointIndex> a, std::span<const PointIndex> b);

/// Sorts and deduplicates in place.
void normalize(IndexSet& set);

}  // namespace lidarlabel
