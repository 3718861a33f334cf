#pragma once

#include <Eigen/Dense>

namespace trajmix {

/// Max-subtracted softmax; entries are positive and sum to 1.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

double logsumexp(const Eigen::VectorXd& values);

/// -sum p log p with 0 log 0 := 0.
double categorical_entropy(const Eigen::VectorXd& probs);

/// Gradient pullback through softmax: given g = d f / d probs at probs =
/// softmax(u), returns d f / d u.
Eigen::VectorXd softmax_grad_pullback(const Eigen::VectorXd& probs, const Eigen::VectorXd& grad_probs);

}  // namespace trajmix
