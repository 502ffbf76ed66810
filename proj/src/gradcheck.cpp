#include "lidarlabel/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "lidarlabel/losses.hpp"

namespace lidarlabel {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradRelFloor});
}

double check_gradient(const std::function<double()>& f, Eigen::Ref<Eigen::MatrixXd> x,
                      const Eigen::MatrixXd& analytic, double step) {
  if (analytic.rows() != x.rows() || analytic.cols() != x.cols()) {
    throw std::invalid_argument("check_gradient: analytic gradient shape mismatch");
  }
  double worst = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double saved = x(r, c);
      x(r, c) = saved + step;
      const double up = f();
      x(r, c) = saved - step;
      const double down = f();
      x(r, c) = saved;
      const double numeric = (up - down) / (2.0 * step);
      worst = std::max(worst, relative_error(analytic(r, c), numeric));
    }
  }
  return worst;
}

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::json kernels_json = nlohmann::json::array();
  for (const auto& k : kernels) {
    kernels_json.push_back({{"kernel", k.kernel},
                            {"trials", k.trials},
                            {"max_relative_error", k.max_relative_error},
                            {"passed", k.passed}});
  }
  return {{"seed", seed},
          {"trials", trials},
          {"step", kGradStep},
          {"tolerance", kGradTolerance},
          {"relative_error_floor", kGradRelFloor},
          {"kernels", kernels_json},
          {"passed", passed}};
}

std::vector<std::string> gradient_kernel_names() {
  return {"focal_loss", "weighted_cls_loss", "kl_distill_loss", "aggregate_instance_feature",
          "cross_modal_distill_loss", "pcl_loss", "vote_loss"};
}

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}
  Eigen::MatrixXd normal(Eigen::Index r, Eigen::Index c, double sigma = 1.0) {
    std::normal_distribution<double> d(0.0, sigma);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng_);
    return m;
  }
  Eigen::MatrixXd uniform(Eigen::Index r, Eigen::Index c, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng_);
    return m;
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  PointLabels labels(std::size_t n, std::uint32_t c, double background_fraction) {
    PointLabels l(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      if (real(0.0, 1.0) < background_fraction) continue;
      const int cls = integer(0, static_cast<int>(c) - 1);
      const float conf = static_cast<float>(real(0.05, 1.0));
      l.instance_id[i] = integer(0, 3);
      l.class_id[i] = cls;
      l.confidence[i] = conf;
      l.row(i)[static_cast<std::size_t>(cls)] = conf;
    }
    return l;
  }

 private:
  std::mt19937_64 rng_;
};

// One random trial of one kernel; returns the worst relative error.
using Trial = std::function<double(Sampler&, double sign)>;

double trial_focal(Sampler& s, double sign) {
  const int c = s.integer(2, 6);
  Eigen::MatrixXd logits = s.normal(c, 1, 2.0);
  const int target = s.integer(0, c - 1);
  const double gamma = 2.0;
  const double alpha = 0.25;
  const auto g = focal_loss(logits, target, gamma, alpha);
  return check_gradient([&] { return focal_loss(logits, target, gamma, alpha).value; }, logits, sign * g.grad);
}

double trial_weighted(Sampler& s, double sign) {
  const auto labels = s.labels(12, 4, 0.25);
  Eigen::MatrixXd logits = s.normal(12, 4, 1.5);
  const auto g = weighted_cls_loss(logits, labels, 2.0, 0.25);
  return check_gradient([&] { return weighted_cls_loss(logits, labels, 2.0, 0.25).value; }, logits,
                        sign * g.grad);
}

double trial_kl(Sampler& s, double sign) {
  const Eigen::MatrixXd priors = s.uniform(10, 4, 0.0, 1.0);
  Eigen::MatrixXd logits = s.normal(10, 4, 1.5);
  const double temperature = s.integer(0, 1) == 0 ? 1.0 : 2.0;
  const auto g = kl_distill_loss(priors, logits, temperature);
  return check_gradient([&] { return kl_distill_loss(priors, logits, temperature).value; }, logits, sign * g.grad);
}

double trial_aggregate(Sampler& s, double sign) {
  Eigen::MatrixXd features = s.normal(9, 5);
  IndexSet idx;
  for (PointIndex i = 0; i < 9; ++i) {
    if (s.integer(0, 1) == 1) idx.push_back(i);
  }
  if (idx.empty()) idx.push_back(static_cast<PointIndex>(s.integer(0, 8)));
  const Eigen::VectorXd upstream = s.normal(5, 1);
  const auto grad = aggregate_instance_feature_backward(upstream, features.rows(), idx);
  return check_gradient([&] { return upstream.dot(aggregate_instance_feature(features, idx)); }, features,
                        sign * grad);
}

double trial_distill(Sampler& s, double sign) {
  constexpr Eigen::Index n = 8;
  constexpr Eigen::Index d = 6;
  constexpr Eigen::Index e = 5;
  constexpr Eigen::Index hidden = 7;
  const Eigen::MatrixXd z2d = s.normal(n, e);
  Eigen::MatrixXd z3d = s.normal(n, d);
  Projector g{s.normal(hidden, d, 0.5), s.normal(hidden, 1, 0.1), s.normal(e, hidden, 0.5), s.normal(e, 1, 0.1),
              Activation::Tanh};
  const double tau = 0.5;
  const auto grads = cross_modal_distill_loss(z2d, z3d, g, tau);
  auto f = [&] { return cross_modal_distill_loss(z2d, z3d, g, tau).value; };
  double worst = check_gradient(f, z3d, sign * grads.grad_z3d);
  worst = std::max(worst, check_gradient(f, g.W1, sign * grads.grad_projector.W1));
  worst = std::max(worst, check_gradient(f, g.b1, sign * grads.grad_projector.b1));
  worst = std::max(worst, check_gradient(f, g.W2, sign * grads.grad_projector.W2));
  worst = std::max(worst, check_gradient(f, g.b2, sign * grads.grad_projector.b2));
  return worst;
}

double trial_pcl(Sampler& s, double sign) {
  constexpr std::uint32_t classes = 4;
  constexpr Eigen::Index dim = 6;
  const auto labels = s.labels(15, classes, 0.2);
  Eigen::MatrixXd features = s.normal(15, dim);
  PrototypeBank bank(classes, dim, 0.9);
  bank.current = s.normal(classes, dim);
  bank.adjacent = s.normal(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    bank.current_ready[c] = c == 0 || s.integer(0, 3) > 0;
    bank.adjacent_ready[c] = c == 1 || s.integer(0, 3) > 0;
  }
  const auto g = pcl_loss(features, labels, bank, 0.5);
  return check_gradient([&] { return pcl_loss(features, labels, bank, 0.5).value; }, features, sign * g.grad);
}

double trial_vote(Sampler& s, double sign) {
  constexpr Eigen::Index n = 10;
  const Eigen::MatrixXd points = s.normal(n, 3, 5.0);
  const Eigen::MatrixXd centers = points + s.normal(n, 3, 1.0);
  Eigen::MatrixXd offsets = s.normal(n, 3, 1.0);
  // Keep every residual clear of the |.| kink relative to the FD step.
  for (Eigen::Index i = 0; i < offsets.size(); ++i) {
    const double r = points.data()[i] + offsets.data()[i] - centers.data()[i];
    if (std::abs(r) < 1e-3) offsets.data()[i] += 0.01;
  }
  std::vector<std::uint8_t> fg(n);
  for (auto& f : fg) f = static_cast<std::uint8_t>(s.integer(0, 3) > 0);
  const auto g = vote_loss(points, offsets, centers, fg);
  return check_gradient([&] { return vote_loss(points, offsets, centers, fg).value; }, offsets, sign * g.grad);
}

}  // namespace

GradCheckReport run_gradient_checks(std::uint64_t seed, std::size_t trials,
                                    const std::optional<std::string>& sign_flip_kernel) {
  if (trials < 1) throw std::invalid_argument("run_gradient_checks: trials must be >= 1");
  const std::vector<std::pair<std::string, Trial>> suite{
      {"focal_loss", trial_focal},
      {"weighted_cls_loss", trial_weighted},
      {"kl_distill_loss", trial_kl},
      {"aggregate_instance_feature", trial_aggregate},
      {"cross_modal_distill_loss", trial_distill},
      {"pcl_loss", trial_pcl},
      {"vote_loss", trial_vote},
  };
  if (sign_flip_kernel && std::ranges::none_of(suite, [&](const auto& k) { return k.first == *sign_flip_kernel; })) {
    throw std::invalid_argument("unknown kernel '" + *sign_flip_kernel + "'");
  }
  GradCheckReport report{seed, trials, {}, true};
  for (std::size_t k = 0; k < suite.size(); ++k) {
    const auto& [name, trial] = suite[k];
    const double sign = sign_flip_kernel && *sign_flip_kernel == name ? -1.0 : 1.0;
    Sampler sampler(seed * 0x9E3779B97F4A7C15ULL + k);
    KernelCheck check{name, trials, 0.0, true};
    for (std::size_t t = 0; t < trials; ++t) check.max_relative_error = std::max(check.max_relative_error, trial(sampler, sign));
    check.passed = check.max_relative_error <= kGradTolerance;
    report.passed = report.passed && check.passed;
    report.kernels.push_back(check);
  }
  return report;
}

}  // namespace lidarlabel
