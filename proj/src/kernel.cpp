#include "trajmix/kernel.hpp"

#include <cmath>
#include <stdexcept>

namespace trajmix {

void validate(const OUKernelParams& params) {
    if (!(params.amplitude > 0.0) || !std::isfinite(params.amplitude))
        throw std::invalid_argument("OU amplitude must be positive and finite");
    if (!(params.lengthscale > 0.0) || !std::isfinite(params.lengthscale))
        throw std::invalid_argument("OU lengthscale must be positive and finite");
}

Eigen::MatrixXd abs_time_gaps(const Eigen::VectorXd& times_a, const Eigen::VectorXd& times_b) {
    Eigen::MatrixXd gaps(times_a.size(), times_b.size());
    for (Eigen::Index i = 0; i < times_a.size(); ++i)
        for (Eigen::Index j = 0; j < times_b.size(); ++j)
            gaps(i, j) = std::abs(times_a[i] - times_b[j]);
    return gaps;
}

Eigen::MatrixXd ou_kernel_matrix(const OUKernelParams& params, const Eigen::VectorXd& times_a,
                                 const Eigen::VectorXd& times_b) {
    validate(params);
    for (Eigen::Index i = 0; i < times_a.size(); ++i)
        if (!std::isfinite(times_a[i])) throw std::invalid_argument("kernel times must be finite");
    for (Eigen::Index j = 0; j < times_b.size(); ++j)
        if (!std::isfinite(times_b[j])) throw std::invalid_argument("kernel times must be finite");

    const double a2 = params.amplitude * params.amplitude;
    const double inv_l = 1.0 / params.lengthscale;
    Eigen::MatrixXd k(times_a.size(), times_b.size());
    for (Eigen::Index i = 0; i < times_a.size(); ++i)
        for (Eigen::Index j = 0; j < times_b.size(); ++j)
            k(i, j) = a2 * std::exp(-inv_l * std::abs(times_a[i] - times_b[j]));
    return k;
}

Eigen::MatrixXd ou_regularized(const OUKernelParams& params, const Eigen::VectorXd& times) {
    const double a2 = params.amplitude * params.amplitude;
    return ou_kernel_matrix(params, times, times) +
           1e-8 * a2 * Eigen::MatrixXd::Identity(times.size(), times.size());
}

Eigen::MatrixXd chol_with_jitter(const Eigen::MatrixXd& mat, double scale) {
    if (mat.rows() != mat.cols()) throw std::invalid_argument("cholesky needs a square matrix");
    const Eigen::Index n = mat.rows();
    double jitter = 1e-8 * scale;
    const double max_jitter = 1e-2 * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(mat);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    while (jitter <= max_jitter * (1.0 + 1e-12)) {
        llt.compute(mat + jitter * Eigen::MatrixXd::Identity(n, n));
        if (llt.info() == Eigen::Success) return llt.matrixL();
        jitter *= 10.0;
    }
    throw std::runtime_error("cholesky factorization failed after jitter escalation");
}

}  // namespace trajmix
