#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace lidarlabel {

inline constexpr double kGradStep = 1e-6;
inline constexpr double kGradTolerance = 1e-5;
/// Denominator floor for the relative error, so entries whose true gradient
/// is ~0 are judged on absolute error instead.
inline constexpr double kGradRelFloor = 1e-3;

/// |a - n| / max(|a|, |n|, kGradRelFloor).
double relative_error(double analytic, double numeric);

/// Central differences of `f` around `x` (x is restored afterwards), compared
/// against `analytic`; returns the worst relative error.
double check_gradient(const std::function<double()>& f, Eigen::Ref<Eigen::MatrixXd> x,
                      const Eigen::MatrixXd& analytic, double step = kGradStep);

struct KernelCheck {
  std::string kernel;
  std::size_t trials = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::vector<KernelCheck> kernels;
  bool passed = false;

  [[nodiscard]] nlohmann::json to_json() const;
};

/// Names of every kernel the suite covers.
std::vector<std::string> gradient_kernel_names();

/// Runs seeded random finite-difference checks on every loss kernel.
/// `sign_flip_kernel` negates that kernel's analytic gradient, as a negative
/// control for the harness itself.
GradCheckReport run_gradient_checks(std::uint64_t seed, std::size_t trials,
                                    const std::optional<std::string>& sign_flip_kernel = std::nullopt);

}  // namespace lidarlabel
