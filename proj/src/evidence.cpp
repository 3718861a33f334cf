#include <cmath>
#include <stdexcept>
#include <vector>

#include "trajmix/model.hpp"
#include "trajmix/mvn.hpp"
#include "trajmix/stats.hpp"

namespace trajmix {

// p(y | Theta) = sum_z [ sum_c pi_c prod_p Psi_p(z_p | c) ] N(y | m_z, V)
// where the Gaussian runs over the stacked observation vector and
// V = Phi_l Sigma_b Phi_l^T + blockdiag(K_p + sigma_p^2 I).
// Variables with no observations marginalize out of both factors.
double exact_log_evidence(const ModelParams& params, const PatientRecord& patient) {
    params.validate();
    patient.validate(params.config);

    const int p_count = params.config.num_variables();
    const int g_count = params.config.num_clusters;

    std::vector<int> observed;
    Eigen::Index total_n = 0;
    for (int p = 0; p < p_count; ++p) {
        const Eigen::Index n = patient.labs[static_cast<std::size_t>(p)].size();
        if (n > 0) observed.push_back(p);
        total_n += n;
    }
    double combos = static_cast<double>(g_count);
    for (const int gp : params.config.subpop_counts) combos *= static_cast<double>(gp);
    if (total_n > 200 || combos > 1e4)
        throw std::invalid_argument("instance too large for exact evidence enumeration");
    if (total_n == 0) return 0.0;

    // Stacked observation vector, noise-augmented kernel block diagonal, and
    // the block design lifting the random effects into observation space.
    Eigen::VectorXd y(total_n);
    Eigen::MatrixXd lift = Eigen::MatrixXd::Zero(total_n, params.config.rand_eff_dim());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(total_n, total_n);
    std::vector<Eigen::MatrixXd> curve_at_obs(static_cast<std::size_t>(p_count));
    std::vector<double> level(static_cast<std::size_t>(p_count), 0.0);
    Eigen::Index offset = 0;
    for (const int p : observed) {
        const VarParams& vp = params.vars[static_cast<std::size_t>(p)];
        const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
        const Eigen::Index n = series.size();
        y.segment(offset, n) = series.values;
        lift.block(offset, 2 * p, n, 2) = linear_design(series.times);
        cov.block(offset, offset, n, n) = ou_regularized(vp.kernel, series.times) +
                                          vp.noise_var * Eigen::MatrixXd::Identity(n, n);
        curve_at_obs[static_cast<std::size_t>(p)] =
            bspline_design(params.basis, series.times) * vp.subpop_curves.transpose();  // n x G_p
        level[static_cast<std::size_t>(p)] = vp.fixed_effect.dot(patient.covariates);
        offset += n;
    }
    cov += lift * params.rand_eff_cov * lift.transpose();
    const Eigen::MatrixXd factor = chol_with_jitter(cov, cov.diagonal().maxCoeff());

    double log_det_half = 0.0;
    for (Eigen::Index i = 0; i < total_n; ++i) log_det_half += std::log(factor(i, i));
    const double gauss_const =
        -0.5 * static_cast<double>(total_n) * std::log(2.0 * M_PI) - log_det_half;

    const Eigen::VectorXd pi = cluster_prior(params, patient.covariates);

    // Odometer over subpopulation assignments of the observed variables only.
    std::vector<int> assign(observed.size(), 0);
    std::vector<double> terms;
    while (true) {
        double weight = 0.0;
        for (int c = 0; c < g_count; ++c) {
            double w = pi[c];
            for (std::size_t k = 0; k < observed.size(); ++k) {
                const int p = observed[k];
                w *= params.vars[static_cast<std::size_t>(p)].subpop_mix(assign[k], c);
            }
            weight += w;
        }

        Eigen::VectorXd mean(total_n);
        Eigen::Index pos = 0;
        for (std::size_t k = 0; k < observed.size(); ++k) {
            const int p = observed[k];
            const Eigen::MatrixXd& curves = curve_at_obs[static_cast<std::size_t>(p)];
            const Eigen::Index n = curves.rows();
            mean.segment(pos, n) =
                curves.col(assign[k]).array() + level[static_cast<std::size_t>(p)];
            pos += n;
        }
        const Eigen::VectorXd z = factor.triangularView<Eigen::Lower>().solve(y - mean);
        const double log_gauss = gauss_const - 0.5 * z.squaredNorm();
        terms.push_back(std::log(std::max(weight, 1e-300)) + log_gauss);

        // advance odometer
        std::size_t k = 0;
        for (; k < observed.size(); ++k) {
            const int gp = params.config.subpop_counts[static_cast<std::size_t>(observed[k])];
            if (++assign[k] < gp) break;
            assign[k] = 0;
        }
        if (k == observed.size()) break;
    }

    Eigen::VectorXd all = Eigen::Map<Eigen::VectorXd>(terms.data(), static_cast<Eigen::Index>(terms.size()));
    return logsumexp(all);
}

}  // namespace trajmix
