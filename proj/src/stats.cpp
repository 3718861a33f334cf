#include "trajmix/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace trajmix {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    if (logits.size() == 0) throw std::invalid_argument("softmax of empty vector");
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        if (!std::isfinite(logits[i])) throw std::invalid_argument("softmax logits must be finite");
    const double shift = logits.maxCoeff();
    Eigen::VectorXd out = (logits.array() - shift).exp();
    out /= out.sum();
    return out;
}

double logsumexp(const Eigen::VectorXd& values) {
    const double shift = values.maxCoeff();
    return shift + std::log((values.array() - shift).exp().sum());
}

double categorical_entropy(const Eigen::VectorXd& probs) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
    return h;
}

Eigen::VectorXd softmax_grad_pullback(const Eigen::VectorXd& probs,
                                      const Eigen::VectorXd& grad_probs) {
    const double mean = probs.dot(grad_probs);
    return probs.array() * (grad_probs.array() - mean);
}

}  // namespace trajmix
