#pragma once

#include <Eigen/Dense>

namespace trajmix {

/// Ornstein-Uhlenbeck covariance parameters. Both are kept strictly positive;
/// optimizers work on their logs.
struct OUKernelParams {
    double amplitude = 1.0;    // a, in the units of the variable
    double lengthscale = 1.0;  // l, in years
};

void validate(const OUKernelParams& params);

/// K(s, t) = a^2 exp(-|s - t| / l), evaluated on a grid of time pairs.
Eigen::MatrixXd ou_kernel_matrix(const OUKernelParams& params, const Eigen::VectorXd& times_a,
                                 const Eigen::VectorXd& times_b);

/// Pairwise |t_i - t_j| matrix.
Eigen::MatrixXd abs_time_gaps(const Eigen::VectorXd& times_a, const Eigen::VectorXd& times_b);

/// Square OU matrix with the model's standard 1e-8 * a^2 diagonal
/// regularization applied. All density and conditioning code uses this form
/// so bounds and oracles agree to full precision.
Eigen::MatrixXd ou_regularized(const OUKernelParams& params, const Eigen::VectorXd& times);

/// Lower Cholesky factor of a symmetric PSD matrix, adding escalating diagonal
/// jitter (starting at 1e-8 * scale, growing tenfold up to 1e-2 * scale) until
/// the factorization succeeds. Throws on failure at the largest jitter.
Eigen::MatrixXd chol_with_jitter(const Eigen::MatrixXd& mat, double scale);

}  // namespace trajmix
