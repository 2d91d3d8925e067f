#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

namespace cola {

/// Scalar loss plus its gradient with respect to the loss input
/// (logits or probabilities, depending on the function).
struct LossResult {
  double loss = 0.0;
  Eigen::MatrixXd grad;
};

/// Row-wise softmax with max-shift.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

/// Mean negative log-softmax over rows whose target is not ignore_id.
/// Ignored rows receive zero gradient. Throws EmptyBatch if every row is ignored.
LossResult cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> targets, int ignore_id);

/// Lovasz-softmax over the classes present in targets, averaged across them.
LossResult lovasz_softmax(const Eigen::MatrixXd& probs, std::span<const int> targets, int ignore_id);

/// Per-class Lovasz extension value; nullopt for classes absent from targets.
std::vector<std::optional<double>> lovasz_per_class(const Eigen::MatrixXd& probs, std::span<const int> targets,
                                                    int ignore_id);

/// Gradient of the Lovasz extension of the Jaccard loss with respect to the
/// sorted errors, given the foreground indicator in the same sorted order.
std::vector<double> lovasz_grad(std::span<const double> sorted_foreground);

/// cross_entropy(logits) + lovasz_weight * lovasz_softmax(softmax(logits)),
/// with the Lovasz gradient chained back through the softmax.
LossResult mixed_loss(const Eigen::MatrixXd& logits, std::span<const int> targets, int ignore_id,
                      double lovasz_weight = 1.0);

}  // namespace cola
