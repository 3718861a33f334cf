#pragma once

#include <Eigen/Dense>

#include "trajmix/rng.hpp"

namespace trajmix {

/// Multivariate normal held by its mean and lower-triangular Cholesky factor
/// of the covariance. The factor diagonal must be strictly positive.
struct GaussianDist {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov_factor;
};

void validate(const GaussianDist& dist);

/// Exact log density via triangular solves; never forms the inverse.
double mvn_logpdf(const Eigen::VectorXd& x, const GaussianDist& dist);

/// mean + L * eps with eps standard normal. Deterministic under a fixed rng.
Eigen::VectorXd mvn_sample(const GaussianDist& dist, Rng& rng);

}  // namespace trajmix
