#include "lidarlabel/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "lidarlabel/vsv.hpp"

namespace lidarlabel {

namespace {

double log_sum_exp(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
  const Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

// d cos(a, h) / d h.
Eigen::VectorXd cosine_grad_wrt_second(const Eigen::VectorXd& a, const Eigen::VectorXd& h) {
  const double na = a.norm();
  const double nh = h.norm();
  if (na == 0.0 || nh == 0.0) return Eigen::VectorXd::Zero(h.size());
  const double cos = a.dot(h) / (na * nh);
  return (a / na - cos * h / nh) / nh;
}

double activate(double u, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return std::tanh(u);
    case Activation::Relu:
      return u > 0.0 ? u : 0.0;
    case Activation::Identity:
      return u;
  }
  return u;
}

double activate_grad(double u, double out, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return 1.0 - out * out;
    case Activation::Relu:
      return u > 0.0 ? 1.0 : 0.0;
    case Activation::Identity:
      return 1.0;
  }
  return 1.0;
}

}  // namespace

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

LossGrad focal_loss(const Eigen::VectorXd& logits, int target, double gamma, double alpha) {
  if (target < 0 || target >= logits.size()) throw std::invalid_argument("focal_loss: target out of range");
  const auto t = static_cast<Eigen::Index>(target);
  const double log_pt = logits(t) - log_sum_exp(logits);
  const double pt = std::exp(log_pt);
  const double q = 1.0 - pt;
  const double modulator = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
  LossGrad out;
  out.value = -alpha * modulator * log_pt;

  // dL/dz_j = alpha [gamma q^(gamma-1) p_t log p_t - q^gamma] (delta_tj - p_j)
  double focus_term = 0.0;
  if (gamma != 0.0 && q > 0.0) focus_term = gamma * std::pow(q, gamma - 1.0) * pt * log_pt;
  const double scale = alpha * (focus_term - modulator);
  Eigen::VectorXd delta = -softmax(logits);
  delta(t) += 1.0;
  out.grad = scale * delta;
  return out;
}

LossGrad weighted_cls_loss(const Eigen::MatrixXd& logits, const PointLabels& labels, double gamma, double alpha) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size() ||
      logits.cols() != static_cast<Eigen::Index>(labels.num_classes)) {
    throw std::invalid_argument("weighted_cls_loss: logits shape does not match labels");
  }
  LossGrad out{0.0, Eigen::MatrixXd::Zero(logits.rows(), logits.cols())};
  std::size_t contributing = 0;
  for (const auto c : labels.class_id) contributing += c >= 0 ? 1 : 0;
  if (contributing == 0) return out;
  const double inv = 1.0 / static_cast<double>(contributing);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto cls = labels.class_id[static_cast<std::size_t>(i)];
    if (cls < 0) continue;
    const double s = labels.confidence[static_cast<std::size_t>(i)];
    const auto f = focal_loss(logits.row(i).transpose(), cls, gamma, alpha);
    out.value += inv * s * f.value;
    out.grad.row(i) = (inv * s) * f.grad.transpose();
  }
  return out;
}

LossGrad kl_distill_loss(const Eigen::MatrixXd& teacher_priors, const Eigen::MatrixXd& student_logits,
                         double temperature) {
  if (teacher_priors.rows() != student_logits.rows() || teacher_priors.cols() != student_logits.cols()) {
    throw std::invalid_argument("kl_distill_loss: teacher/student shape mismatch");
  }
  if (teacher_priors.rows() == 0) throw std::invalid_argument("kl_distill_loss: no points");
  if (!(temperature > 0.0)) throw std::invalid_argument("kl_distill_loss: temperature must be positive");
  const auto m = static_cast<double>(teacher_priors.rows());
  LossGrad out{0.0, Eigen::MatrixXd::Zero(student_logits.rows(), student_logits.cols())};
  for (Eigen::Index i = 0; i < teacher_priors.rows(); ++i) {
    const Eigen::VectorXd tz = teacher_priors.row(i).transpose() / temperature;
    const Eigen::VectorXd sz = student_logits.row(i).transpose() / temperature;
    const Eigen::VectorXd log_t = tz.array() - log_sum_exp(tz);
    const Eigen::VectorXd log_s = sz.array() - log_sum_exp(sz);
    const Eigen::VectorXd t = log_t.array().exp();
    const Eigen::VectorXd s = log_s.array().exp();
    double kl = 0.0;
    for (Eigen::Index c = 0; c < t.size(); ++c) {
      if (t(c) > 0.0) kl += t(c) * (log_t(c) - log_s(c));
    }
    out.value += kl / m;
    out.grad.row(i) = ((s - t) / (temperature * m)).transpose();
  }
  return out;
}

Eigen::VectorXd aggregate_instance_feature(const FeatureMatrix& point_features, std::span<const PointIndex> indices) {
  if (indices.empty()) throw std::invalid_argument("aggregate_instance_feature: empty index set");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(point_features.cols());
  for (const auto idx : indices) {
    if (idx >= point_features.rows()) throw std::out_of_range("aggregate_instance_feature: index out of range");
    sum += point_features.row(idx).transpose();
  }
  return sum / static_cast<double>(indices.size());
}

FeatureMatrix aggregate_instance_feature_backward(const Eigen::VectorXd& upstream, Eigen::Index num_rows,
                                                  std::span<const PointIndex> indices) {
  if (indices.empty()) throw std::invalid_argument("aggregate_instance_feature: empty index set");
  FeatureMatrix grad = FeatureMatrix::Zero(num_rows, upstream.size());
  const double inv = 1.0 / static_cast<double>(indices.size());
  for (const auto idx : indices) grad.row(idx) += inv * upstream.transpose();
  return grad;
}

Eigen::MatrixXd Projector::forward(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim()) throw std::invalid_argument("Projector: input dimension mismatch");
  Eigen::MatrixXd hidden = (x * W1.transpose()).rowwise() + b1.transpose();
  hidden = hidden.unaryExpr([this](double u) { return activate(u, activation); });
  return (hidden * W2.transpose()).rowwise() + b2.transpose();
}

Projector Projector::zeros_like(const Projector& p) {
  return {Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols()), Eigen::VectorXd::Zero(p.b1.size()),
          Eigen::MatrixXd::Zero(p.W2.rows(), p.W2.cols()), Eigen::VectorXd::Zero(p.b2.size()), p.activation};
}

DistillGrad cross_modal_distill_loss(const Eigen::MatrixXd& z2d, const Eigen::MatrixXd& z3d, const Projector& g,
                                     double tau) {
  const Eigen::Index n = z2d.rows();
  if (n < 1 || z3d.rows() != n) throw std::invalid_argument("cross_modal_distill_loss: batch size mismatch");
  if (!(tau > 0.0)) throw std::invalid_argument("cross_modal_distill_loss: tau must be positive");
  const Eigen::MatrixXd h = g.forward(z3d);
  if (h.cols() != z2d.cols()) throw std::invalid_argument("cross_modal_distill_loss: dim mismatch after projection");

  Eigen::MatrixXd sim(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) sim(i, j) = cosine_similarity(z2d.row(i).transpose(), h.row(j).transpose());
  }
  const Eigen::MatrixXd logits = sim / tau;

  // dvalue/dlogits accumulates both directions: rows (2D anchors query the
  // projected 3D features) and columns (3D queries against 2D anchors).
  const double w = 0.5 / static_cast<double>(n);
  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(n, n);
  double row_term = 0.0;
  double col_term = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd row = logits.row(i).transpose();
    const Eigen::VectorXd col = logits.col(i);
    row_term += log_sum_exp(row) - logits(i, i);
    col_term += log_sum_exp(col) - logits(i, i);
    dlogits.row(i) += w * softmax(row).transpose();
    dlogits.col(i) += w * softmax(col);
    dlogits(i, i) -= 2.0 * w;
  }
  DistillGrad out;
  out.value = 0.5 * (row_term + col_term) / static_cast<double>(n);

  const Eigen::MatrixXd dsim = dlogits / tau;
  Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(n, h.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      dh.row(j) += dsim(i, j) * cosine_grad_wrt_second(z2d.row(i).transpose(), h.row(j).transpose()).transpose();
    }
  }

  out.grad_projector = Projector::zeros_like(g);
  out.grad_z3d = Eigen::MatrixXd::Zero(z3d.rows(), z3d.cols());
  auto& gp = out.grad_projector;
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::VectorXd x = z3d.row(j).transpose();
    const Eigen::VectorXd u = g.W1 * x + g.b1;
    const Eigen::VectorXd t = u.unaryExpr([&](double v) { return activate(v, g.activation); });
    const Eigen::VectorXd dhj = dh.row(j).transpose();
    gp.W2 += dhj * t.transpose();
    gp.b2 += dhj;
    const Eigen::VectorXd dt = g.W2.transpose() * dhj;
    Eigen::VectorXd du(u.size());
    for (Eigen::Index k = 0; k < u.size(); ++k) du(k) = dt(k) * activate_grad(u(k), t(k), g.activation);
    gp.W1 += du * x.transpose();
    gp.b1 += du;
    out.grad_z3d.row(j) = (g.W1.transpose() * du).transpose();
  }
  return out;
}

std::vector<IndexSet> select_reliable_current(const PointLabels& labels, const Eigen::MatrixXd& predictions,
                                              double T_conf, double phi) {
  if (static_cast<std::size_t>(predictions.rows()) != labels.size() ||
      predictions.cols() != static_cast<Eigen::Index>(labels.num_classes)) {
    throw std::invalid_argument("select_reliable_current: prediction shape does not match labels");
  }
  // Confidences are stored as f32, so the threshold is compared at that precision.
  const auto conf_threshold = static_cast<float>(T_conf);
  std::vector<IndexSet> sets(labels.num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = labels.class_id[i];
    if (c < 0) continue;
    if (labels.confidence[i] > conf_threshold && predictions(static_cast<Eigen::Index>(i), c) > phi) {
      sets[static_cast<std::size_t>(c)].push_back(static_cast<PointIndex>(i));
    }
  }
  return sets;
}

std::vector<IndexSet> select_reliable_adjacent(const VoteMap& votes, std::span<const Vec3> adjacent_points,
                                               double voxel_size, std::size_t num_classes) {
  std::vector<IndexSet> sets(num_classes);
  if (votes.empty()) return sets;
  for (std::size_t i = 0; i < adjacent_points.size(); ++i) {
    const int c = votes.get(voxel_key(adjacent_points[i], voxel_size));
    if (c >= 0 && static_cast<std::size_t>(c) < num_classes) {
      sets[static_cast<std::size_t>(c)].push_back(static_cast<PointIndex>(i));
    }
  }
  return sets;
}

std::vector<std::optional<Eigen::VectorXd>> estimate_prototypes(const FeatureMatrix& features,
                                                                std::span<const IndexSet> reliable_sets) {
  std::vector<std::optional<Eigen::VectorXd>> out;
  out.reserve(reliable_sets.size());
  for (const auto& set : reliable_sets) {
    if (set.empty()) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(aggregate_instance_feature(features, set));
    }
  }
  return out;
}

PrototypeBank::PrototypeBank(std::size_t num_classes, Eigen::Index dim, double momentum)
    : current(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_classes), dim)),
      adjacent(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_classes), dim)),
      current_ready(num_classes, false),
      adjacent_ready(num_classes, false),
      theta(momentum) {}

namespace {

void ema_update(Eigen::MatrixXd& protos, std::vector<bool>& ready,
                std::span<const std::optional<Eigen::VectorXd>> estimates, double theta) {
  if (estimates.size() != ready.size()) throw std::invalid_argument("update_prototypes: class count mismatch");
  for (std::size_t c = 0; c < estimates.size(); ++c) {
    if (!estimates[c]) continue;
    const auto& est = *estimates[c];
    if (est.size() != protos.cols()) throw std::invalid_argument("update_prototypes: feature dim mismatch");
    const auto row = static_cast<Eigen::Index>(c);
    if (ready[c]) {
      protos.row(row) = theta * protos.row(row) + (1.0 - theta) * est.transpose();
    } else {
      protos.row(row) = est.transpose();
      ready[c] = true;
    }
  }
}

// One InfoNCE term over the initialized prototypes; adds its gradient into
// `grad` and returns (value, contributing point count).
std::pair<double, std::size_t> prototype_term(const FeatureMatrix& features, const PointLabels& labels,
                                              const Eigen::MatrixXd& protos, const std::vector<bool>& ready,
                                              double tau, Eigen::MatrixXd& grad) {
  std::vector<Eigen::Index> usable;
  for (std::size_t c = 0; c < ready.size(); ++c) {
    if (ready[c]) usable.push_back(static_cast<Eigen::Index>(c));
  }
  std::vector<Eigen::Index> anchors;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = labels.class_id[i];
    if (c >= 0 && static_cast<std::size_t>(c) < ready.size() && ready[static_cast<std::size_t>(c)]) {
      anchors.push_back(static_cast<Eigen::Index>(i));
    }
  }
  if (anchors.empty()) return {0.0, 0};
  const double inv = 1.0 / static_cast<double>(anchors.size());
  double value = 0.0;
  Eigen::VectorXd logits(static_cast<Eigen::Index>(usable.size()));
  for (const auto i : anchors) {
    const Eigen::VectorXd f = features.row(i).transpose();
    const auto target = labels.class_id[static_cast<std::size_t>(i)];
    Eigen::Index target_slot = 0;
    for (std::size_t k = 0; k < usable.size(); ++k) {
      logits(static_cast<Eigen::Index>(k)) = cosine_similarity(f, protos.row(usable[k]).transpose()) / tau;
      if (usable[k] == target) target_slot = static_cast<Eigen::Index>(k);
    }
    value += inv * (log_sum_exp(logits) - logits(target_slot));
    Eigen::VectorXd dlogit = softmax(logits);
    dlogit(target_slot) -= 1.0;
    for (std::size_t k = 0; k < usable.size(); ++k) {
      const Eigen::VectorXd proto = protos.row(usable[k]).transpose();
      grad.row(i) += (inv * dlogit(static_cast<Eigen::Index>(k)) / tau) * cosine_grad_wrt_second(proto, f).transpose();
    }
  }
  return {value, anchors.size()};
}

}  // namespace

PrototypeBank update_prototypes(const PrototypeBank& bank,
                                std::span<const std::optional<Eigen::VectorXd>> current_estimates,
                                std::span<const std::optional<Eigen::VectorXd>> adjacent_estimates) {
  if (!(bank.theta >= 0.0 && bank.theta <= 1.0)) throw std::invalid_argument("update_prototypes: theta outside [0,1]");
  PrototypeBank next = bank;
  ema_update(next.current, next.current_ready, current_estimates, bank.theta);
  ema_update(next.adjacent, next.adjacent_ready, adjacent_estimates, bank.theta);
  return next;
}

LossGrad pcl_loss(const FeatureMatrix& features, const PointLabels& labels, const PrototypeBank& bank, double tau) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw std::invalid_argument("pcl_loss: feature rows do not match labels");
  }
  if (features.cols() != bank.current.cols() || features.cols() != bank.adjacent.cols()) {
    throw std::invalid_argument("pcl_loss: feature dim does not match prototypes");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("pcl_loss: tau must be positive");
  LossGrad out{0.0, Eigen::MatrixXd::Zero(features.rows(), features.cols())};
  const auto [cur, n_cur] = prototype_term(features, labels, bank.current, bank.current_ready, tau, out.grad);
  const auto [adj, n_adj] = prototype_term(features, labels, bank.adjacent, bank.adjacent_ready, tau, out.grad);
  if (n_cur == 0 && n_adj == 0) throw InvariantError("pcl_loss: no foreground point has an initialized prototype");
  out.value = cur + adj;
  return out;
}

LossGrad vote_loss(const Eigen::MatrixXd& points, const Eigen::MatrixXd& pred_offsets,
                   const Eigen::MatrixXd& target_centers, std::span<const std::uint8_t> foreground) {
  const Eigen::Index n = pred_offsets.rows();
  if (points.rows() != n || target_centers.rows() != n || static_cast<Eigen::Index>(foreground.size()) != n ||
      points.cols() != 3 || pred_offsets.cols() != 3 || target_centers.cols() != 3) {
    throw std::invalid_argument("vote_loss: expected matching N x 3 inputs");
  }
  LossGrad out{0.0, Eigen::MatrixXd::Zero(n, 3)};
  std::size_t count = 0;
  for (const auto f : foreground) count += f != 0 ? 1 : 0;
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (foreground[static_cast<std::size_t>(i)] == 0) continue;
    const Eigen::RowVector3d r = points.row(i) + pred_offsets.row(i) - target_centers.row(i);
    out.value += inv * r.cwiseAbs().sum();
    for (Eigen::Index k = 0; k < 3; ++k) out.grad(i, k) = inv * static_cast<double>((r(k) > 0.0) - (r(k) < 0.0));
  }
  return out;
}

double total_loss(const std::array<double, 5>& components, const std::array<double, 5>& alphas) {
  double sum = 0.0;
  for (std::size_t k = 0; k < components.size(); ++k) sum += alphas[k] * components[k];
  return sum;
}

}  // namespace lidarlabel
