#include "lidarlabel/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Geometry>

namespace lidarlabel {

VoxelKey voxel_key(const Vec3& p, double voxel_size) {
  return {static_cast<std::int32_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int32_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int32_t>(std::floor(p.z() / voxel_size))};
}

Vec3 voxel_center(const VoxelKey& k, double voxel_size) {
  return {(k.ix + 0.5) * voxel_size, (k.iy + 0.5) * voxel_size, (k.iz + 0.5) * voxel_size};
}

VoxelBuckets voxelize(std::span<const Vec3> points, double voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("voxelize: voxel_size must be positive");
  VoxelBuckets buckets;
  for (std::size_t i = 0; i < points.size(); ++i) {
    buckets[voxel_key(points[i], voxel_size)].push_back(static_cast<PointIndex>(i));
  }
  return buckets;
}

ProjectedPoint project_point(const Vec3& p, const CameraCalibration& calib) {
  const Eigen::Vector4d cam = calib.T * p.homogeneous();
  const Vec3 pix = calib.K * cam.head<3>();
  ProjectedPoint out;
  out.depth = pix.z();
  if (out.depth <= kMinDepth) return out;
  out.u = pix.x() / out.depth;
  out.v = pix.y() / out.depth;
  out.in_image = out.u >= 0.0 && out.v >= 0.0 && out.u < calib.width && out.v < calib.height;
  return out;
}

std::vector<ProjectedPoint> project_points(std::span<const Vec3> points, const CameraCalibration& calib) {
  std::vector<ProjectedPoint> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project_point(p, calib));
  return out;
}

Mat4 rigid_inverse(const Mat4& pose) {
  if (!is_rigid(pose)) throw std::invalid_argument("pose is not a rigid transform");
  Mat4 inv = Mat4::Identity();
  const Mat3 rt = pose.topLeftCorner<3, 3>().transpose();
  inv.topLeftCorner<3, 3>() = rt;
  inv.topRightCorner<3, 1>() = -rt * pose.topRightCorner<3, 1>();
  return inv;
}

std::vector<Vec3> transform_points(std::span<const Vec3> points, const Mat4& src_pose, const Mat4& dst_pose) {
  if (!is_rigid(src_pose)) throw std::invalid_argument("transform_points: source pose is not rigid");
  const Mat4 m = rigid_inverse(dst_pose) * src_pose;
  const Mat3 r = m.topLeftCorner<3, 3>();
  const Vec3 t = m.topRightCorner<3, 1>();
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.emplace_back(r * p + t);
  return out;
}

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

std::vector<IndexSet> connected_components(std::span<const PointIndex> indices, std::span<const Vec3> points,
                                           double link_voxel_size) {
  if (!(link_voxel_size > 0.0)) throw std::invalid_argument("connected_components: voxel size must be positive");
  // Occupied voxels, each with its member points.
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot;
  std::vector<VoxelKey> keys;
  std::vector<IndexSet> members;
  for (const auto idx : indices) {
    const auto key = voxel_key(points[idx], link_voxel_size);
    auto [it, inserted] = slot.try_emplace(key, keys.size());
    if (inserted) {
      keys.push_back(key);
      members.emplace_back();
    }
    members[it->second].push_back(idx);
  }

  DisjointSets sets(keys.size());
  for (std::size_t s = 0; s < keys.size(); ++s) {
    const auto& k = keys[s];
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = slot.find({k.ix + dx, k.iy + dy, k.iz + dz});
          if (it != slot.end()) sets.unite(s, it->second);
        }
      }
    }
  }

  std::unordered_map<std::size_t, std::size_t> cluster_of_root;
  std::vector<IndexSet> clusters;
  for (std::size_t s = 0; s < keys.size(); ++s) {
    const auto root = sets.find(s);
    auto [it, inserted] = cluster_of_root.try_emplace(root, clusters.size());
    if (inserted) clusters.emplace_back();
    auto& c = clusters[it->second];
    c.insert(c.end(), members[s].begin(), members[s].end());
  }
  for (auto& c : clusters) normalize(c);
  std::ranges::sort(clusters, [](const IndexSet& a, const IndexSet& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a.front() < b.front();
  });
  return clusters;
}

double point_set_iou(std::span<const PointIndex> a, std::span<const PointIndex> b) {
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void normalize(IndexSet& set) {
  std::ranges::sort(set);
  set.erase(std::unique(set.begin(), set.end()), set.end());
}

}  // namespace lidarlabel
