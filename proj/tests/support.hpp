#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <Eigen/Geometry>

#include "lidarlabel/model.hpp"

namespace lidarlabel::testing {

/// Small seeded generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return uniform() < p; }
  std::mt19937_64& engine() { return rng_; }

  Mat4 rigid() {
    const Eigen::Quaterniond q(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
    Mat4 t = Mat4::Identity();
    t.block<3, 3>(0, 0) = q.normalized().toRotationMatrix();
    t.block<3, 1>(0, 3) = Vec3(uniform(-10, 10), uniform(-10, 10), uniform(-2, 2));
    return t;
  }

  CameraCalibration camera(const std::string& id) {
    CameraCalibration c;
    c.view_id = id;
    c.width = static_cast<std::uint32_t>(integer(16, 64));
    c.height = static_cast<std::uint32_t>(integer(16, 64));
    c.K << uniform(10, 50), 0, c.width / 2.0, 0, uniform(10, 50), c.height / 2.0, 0, 0, 1;
    c.T = rigid();
    return c;
  }

  Frame frame(std::size_t points, std::size_t cameras) {
    Frame f;
    f.frame_id = "f" + std::to_string(integer(0, 99999));
    f.timestamp = uniform(0, 100);
    for (std::size_t i = 0; i < points; ++i) {
      f.points.push_back({static_cast<float>(uniform(-50, 50)), static_cast<float>(uniform(-50, 50)),
                          static_cast<float>(uniform(-3, 3)), static_cast<float>(uniform())});
    }
    f.ego_pose = rigid();
    for (std::size_t k = 0; k < cameras; ++k) f.cameras.push_back(camera("cam" + std::to_string(k)));
    return f;
  }

  /// Labels satisfying every PointLabels invariant.
  PointLabels labels(std::size_t n, std::uint32_t c, double background = 0.3) {
    PointLabels l(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      if (coin(background)) continue;
      auto row = l.row(i);
      for (auto& v : row) v = static_cast<float>(uniform(0.0, 0.5));
      const int cls = integer(0, static_cast<int>(c) - 1);
      row[static_cast<std::size_t>(cls)] = static_cast<float>(uniform(0.55, 1.0));
      l.class_id[i] = cls;
      l.instance_id[i] = integer(-1, 5);
      l.confidence[i] = row[static_cast<std::size_t>(cls)];
    }
    return l;
  }

 private:
  std::mt19937_64 rng_;
};

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lidarlabel_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace lidarlabel::testing
