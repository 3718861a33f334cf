#include "trajmix/mvn.hpp"

#include <cmath>
#include <stdexcept>

namespace trajmix {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

void validate(const GaussianDist& dist) {
    if (dist.cov_factor.rows() != dist.cov_factor.cols() ||
        dist.cov_factor.rows() != dist.mean.size())
        throw std::invalid_argument("gaussian mean/factor dimensions disagree");
    for (Eigen::Index i = 0; i < dist.cov_factor.rows(); ++i)
        if (!(dist.cov_factor(i, i) > 0.0))
            throw std::invalid_argument("covariance factor diagonal must be positive");
}

double mvn_logpdf(const Eigen::VectorXd& x, const GaussianDist& dist) {
    if (x.size() != dist.mean.size())
        throw std::invalid_argument("mvn_logpdf dimension mismatch");
    validate(dist);
    const Eigen::Index n = x.size();
    const Eigen::VectorXd z = dist.cov_factor.triangularView<Eigen::Lower>().solve(x - dist.mean);
    double log_det_half = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) log_det_half += std::log(dist.cov_factor(i, i));
    return -0.5 * static_cast<double>(n) * kLog2Pi - log_det_half - 0.5 * z.squaredNorm();
}

Eigen::VectorXd mvn_sample(const GaussianDist& dist, Rng& rng) {
    validate(dist);
    Eigen::VectorXd eps(dist.mean.size());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    return dist.mean + dist.cov_factor.triangularView<Eigen::Lower>() * eps;
}

}  // namespace trajmix
