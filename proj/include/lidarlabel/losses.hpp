#pragma once

// Training-loss kernels as pure value + gradient functions over plain arrays.
// Every kernel works in f64.

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "lidarlabel/model.hpp"

namespace lidarlabel {

/// Rows are points (or instances), columns feature dimensions.
using FeatureMatrix = Eigen::MatrixXd;

struct LossGrad {
  double value = 0.0;
  Eigen::MatrixXd grad;
};

/// -alpha (1 - p_t)^gamma log p_t over softmax(logits). grad is a column vector.
LossGrad focal_loss(const Eigen::VectorXd& logits, int target, double gamma, double alpha);

/// Confidence-weighted focal loss, averaged over labeled points (class_id >= 0).
LossGrad weighted_cls_loss(const Eigen::MatrixXd& logits, const PointLabels& labels, double gamma, double alpha);

/// Mean KL(softmax(prior / T) || softmax(logits / T)); grad is w.r.t. the
/// student logits.
LossGrad kl_distill_loss(const Eigen::MatrixXd& teacher_priors, const Eigen::MatrixXd& student_logits,
                         double temperature);

/// Arithmetic mean of the selected feature rows.
Eigen::VectorXd aggregate_instance_feature(const FeatureMatrix& point_features, std::span<const PointIndex> indices);

/// Gradient of dot(upstream, aggregate_instance_feature(...)) w.r.t. the features.
FeatureMatrix aggregate_instance_feature_backward(const Eigen::VectorXd& upstream, Eigen::Index num_rows,
                                                  std::span<const PointIndex> indices);

enum class Activation { Tanh, Relu, Identity };

/// Two affine maps with an elementwise nonlinearity in between.
struct Projector {
  Eigen::MatrixXd W1;  // hidden x in
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;  // out x hidden
  Eigen::VectorXd b2;
  Activation activation = Activation::Tanh;

  [[nodiscard]] Eigen::Index input_dim() const { return W1.cols(); }
  [[nodiscard]] Eigen::Index output_dim() const { return W2.rows(); }
  /// Applies the map to every row of x.
  [[nodiscard]] Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  static Projector zeros_like(const Projector& p);
};

struct DistillGrad {
  double value = 0.0;
  Eigen::MatrixXd grad_z3d;
  Projector grad_projector;
};

/// Symmetric InfoNCE between 2D anchors z2d (N x E) and projected 3D
/// features g(z3d) (N x E), cosine similarity, temperature tau. Matching
/// rows are positives.
DistillGrad cross_modal_distill_loss(const Eigen::MatrixXd& z2d, const Eigen::MatrixXd& z3d, const Projector& g,
                                     double tau);

/// Per class c: { p | class_id(p) = c, S(p) > T_conf, predictions(p, c) > phi }.
std::vector<IndexSet> select_reliable_current(const PointLabels& labels, const Eigen::MatrixXd& predictions,
                                              double T_conf, double phi);

class VoteMap;
/// Per class c: adjacent points whose voxel voted c.
std::vector<IndexSet> select_reliable_adjacent(const VoteMap& votes, std::span<const Vec3> adjacent_points,
                                               double voxel_size, std::size_t num_classes);

/// Mean feature per class; classes with an empty set are absent.
std::vector<std::optional<Eigen::VectorXd>> estimate_prototypes(const FeatureMatrix& features,
                                                                std::span<const IndexSet> reliable_sets);

struct PrototypeBank {
  Eigen::MatrixXd current;   // C x d
  Eigen::MatrixXd adjacent;  // C x d
  std::vector<bool> current_ready;
  std::vector<bool> adjacent_ready;
  double theta = 0.9;

  PrototypeBank() = default;
  PrototypeBank(std::size_t num_classes, Eigen::Index dim, double momentum);
};

/// EMA update F(t) = theta F(t-1) + (1 - theta) F_hat for both prototype
/// sets. A class seen for the first time takes its estimate directly.
PrototypeBank update_prototypes(const PrototypeBank& bank,
                                std::span<const std::optional<Eigen::VectorXd>> current_estimates,
                                std::span<const std::optional<Eigen::VectorXd>> adjacent_estimates);

/// L_cur + L_adj: InfoNCE pulling each foreground feature toward its class
/// prototype, over the initialized prototypes of each set. Throws
/// InvariantError when no foreground point has a usable prototype.
LossGrad pcl_loss(const FeatureMatrix& features, const PointLabels& labels, const PrototypeBank& bank, double tau);

/// Mean over foreground points of ||point + offset - center||_1. grad is
/// w.r.t. the offsets.
LossGrad vote_loss(const Eigen::MatrixXd& points, const Eigen::MatrixXd& pred_offsets,
                   const Eigen::MatrixXd& target_centers, std::span<const std::uint8_t> foreground);

double total_loss(const std::array<double, 5>& components, const std::array<double, 5>& alphas);

/// Cosine similarity; zero when either vector is zero.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace lidarlabel
