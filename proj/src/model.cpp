#include "trajmix/model.hpp"

#include <cmath>
#include <stdexcept>

#include "trajmix/mvn.hpp"
#include "trajmix/stats.hpp"

namespace trajmix {

void ModelConfig::validate() const {
    if (variables.empty()) throw std::invalid_argument("model needs at least one variable");
    if (num_clusters < 1) throw std::invalid_argument("cluster count must be >= 1");
    if (subpop_counts.size() != variables.size())
        throw std::invalid_argument("subpop_counts must have one entry per variable");
    for (const int g : subpop_counts)
        if (g < 1) throw std::invalid_argument("subpopulation counts must be >= 1");
    if (covariate_dim < 1) throw std::invalid_argument("covariate dimension must be >= 1");
}

void ModelParams::validate() const {
    config.validate();
    const int p_count = config.num_variables();
    const int g = config.num_clusters;
    const int q = config.covariate_dim;
    if (static_cast<int>(vars.size()) != p_count)
        throw std::invalid_argument("per-variable parameter count mismatch");
    for (int p = 0; p < p_count; ++p) {
        const VarParams& vp = vars[static_cast<std::size_t>(p)];
        const int gp = config.subpop_counts[static_cast<std::size_t>(p)];
        if (vp.fixed_effect.size() != q) throw std::invalid_argument("fixed effect size mismatch");
        if (vp.subpop_curves.rows() != gp || vp.subpop_curves.cols() != basis.dimension())
            throw std::invalid_argument("subpopulation curve shape mismatch");
        if (vp.subpop_mix.rows() != gp || vp.subpop_mix.cols() != g)
            throw std::invalid_argument("subpopulation mixing shape mismatch");
        for (int col = 0; col < g; ++col) {
            const double sum = vp.subpop_mix.col(col).sum();
            if (std::abs(sum - 1.0) > 1e-8 || vp.subpop_mix.col(col).minCoeff() < 0.0)
                throw std::invalid_argument("subpopulation mixing columns must be distributions");
        }
        ::trajmix::validate(vp.kernel);
        if (!(vp.noise_var > 0.0)) throw std::invalid_argument("noise variance must be positive");
    }
    if (cluster_weights.rows() != g || cluster_weights.cols() != q)
        throw std::invalid_argument("cluster weight shape mismatch");
    if (cluster_weights.row(0).cwiseAbs().maxCoeff() != 0.0)
        throw std::invalid_argument("reference cluster weights must be exactly zero");
    const int d = config.rand_eff_dim();
    if (rand_eff_cov.rows() != d || rand_eff_cov.cols() != d)
        throw std::invalid_argument("random-effect covariance shape mismatch");
}

void PatientRecord::validate(const ModelConfig& config) const {
    if (covariates.size() != config.covariate_dim)
        throw std::invalid_argument("covariate dimension mismatch for patient " + id);
    if (static_cast<int>(labs.size()) != config.num_variables())
        throw std::invalid_argument("lab series count mismatch for patient " + id);
    for (Eigen::Index i = 0; i < covariates.size(); ++i)
        if (!std::isfinite(covariates[i]))
            throw std::invalid_argument("non-finite covariate for patient " + id);
    for (const VarSeries& series : labs) {
        if (series.times.size() != series.values.size())
            throw std::invalid_argument("time/value length mismatch for patient " + id);
        for (Eigen::Index j = 0; j < series.size(); ++j) {
            if (!std::isfinite(series.times[j]) || !std::isfinite(series.values[j]))
                throw std::invalid_argument("non-finite observation for patient " + id);
            if (j > 0 && series.times[j] < series.times[j - 1])
                throw std::invalid_argument("observation times must be ascending for patient " + id);
        }
    }
}

Eigen::VectorXd mean_function(const ModelParams& params, const Eigen::VectorXd& covariates,
                              int subpop, const Eigen::Vector2d& rand_eff,
                              const Eigen::VectorXd& deviation, const Eigen::VectorXd& times,
                              int var) {
    if (var < 0 || var >= params.config.num_variables())
        throw std::out_of_range("variable index out of range");
    const VarParams& vp = params.vars[static_cast<std::size_t>(var)];
    if (subpop < 0 || subpop >= vp.subpop_curves.rows())
        throw std::out_of_range("subpopulation index out of range");
    if (deviation.size() != 0 && deviation.size() != times.size())
        throw std::invalid_argument("deviation length must match times");

    const double level = vp.fixed_effect.dot(covariates);
    const Eigen::MatrixXd phi_z = bspline_design(params.basis, times);
    const Eigen::MatrixXd phi_l = linear_design(times);
    Eigen::VectorXd mean = Eigen::VectorXd::Constant(times.size(), level);
    mean += phi_z * vp.subpop_curves.row(subpop).transpose();
    mean += phi_l * rand_eff;
    if (deviation.size() != 0) mean += deviation;
    return mean;
}

Eigen::VectorXd cluster_prior(const ModelParams& params, const Eigen::VectorXd& covariates) {
    return softmax(params.cluster_weights * covariates);
}

Eigen::VectorXd subpop_conditional(const ModelParams& params, int var, int cluster) {
    if (var < 0 || var >= params.config.num_variables())
        throw std::out_of_range("variable index out of range");
    if (cluster < 0 || cluster >= params.config.num_clusters)
        throw std::out_of_range("cluster index out of range");
    return params.vars[static_cast<std::size_t>(var)].subpop_mix.col(cluster);
}

double joint_log_density(const ModelParams& params, const PatientRecord& patient,
                         const LatentState& latent) {
    const int p_count = params.config.num_variables();
    if (static_cast<int>(latent.subpops.size()) != p_count ||
        static_cast<int>(latent.deviations.size()) != p_count)
        throw std::invalid_argument("latent state inconsistent with config");
    if (latent.rand_effects.size() != params.config.rand_eff_dim())
        throw std::invalid_argument("random-effect vector size mismatch");
    if (latent.cluster < 0 || latent.cluster >= params.config.num_clusters)
        throw std::out_of_range("cluster index out of range");

    const Eigen::VectorXd pi = cluster_prior(params, patient.covariates);
    double total = std::log(pi[latent.cluster]);

    GaussianDist b_prior{Eigen::VectorXd::Zero(params.config.rand_eff_dim()),
                         chol_with_jitter(params.rand_eff_cov, 1.0)};
    total += mvn_logpdf(latent.rand_effects, b_prior);

    for (int p = 0; p < p_count; ++p) {
        const VarParams& vp = params.vars[static_cast<std::size_t>(p)];
        const int z = latent.subpops[static_cast<std::size_t>(p)];
        if (z < 0 || z >= vp.subpop_mix.rows()) throw std::out_of_range("subpop index out of range");
        total += std::log(vp.subpop_mix(z, latent.cluster));

        const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
        const Eigen::VectorXd& f = latent.deviations[static_cast<std::size_t>(p)];
        if (f.size() != series.size())
            throw std::invalid_argument("deviation length mismatch in latent state");
        if (series.size() == 0) continue;

        const double a2 = vp.kernel.amplitude * vp.kernel.amplitude;
        GaussianDist f_prior{Eigen::VectorXd::Zero(series.size()),
                             chol_with_jitter(ou_regularized(vp.kernel, series.times), a2)};
        total += mvn_logpdf(f, f_prior);

        const Eigen::VectorXd mu =
            mean_function(params, patient.covariates, z,
                          latent.rand_effects.segment<2>(2 * p), f, series.times, p);
        const double log_noise = std::log(2.0 * M_PI * vp.noise_var);
        total += -0.5 * static_cast<double>(series.size()) * log_noise -
                 (series.values - mu).squaredNorm() / (2.0 * vp.noise_var);
    }
    return total;
}

std::pair<PatientRecord, LatentState> sample_patient(const ModelParams& params,
                                                     const Eigen::VectorXd& covariates,
                                                     const std::vector<Eigen::VectorXd>& times,
                                                     Rng& rng) {
    const int p_count = params.config.num_variables();
    if (static_cast<int>(times.size()) != p_count)
        throw std::invalid_argument("need one time vector per variable");

    LatentState latent;
    const Eigen::VectorXd pi = cluster_prior(params, covariates);
    latent.cluster = rng.categorical(std::vector<double>(pi.data(), pi.data() + pi.size()));

    latent.subpops.resize(static_cast<std::size_t>(p_count));
    for (int p = 0; p < p_count; ++p) {
        const Eigen::VectorXd psi = subpop_conditional(params, p, latent.cluster);
        latent.subpops[static_cast<std::size_t>(p)] =
            rng.categorical(std::vector<double>(psi.data(), psi.data() + psi.size()));
    }

    GaussianDist b_prior{Eigen::VectorXd::Zero(params.config.rand_eff_dim()),
                         chol_with_jitter(params.rand_eff_cov, 1.0)};
    latent.rand_effects = mvn_sample(b_prior, rng);

    PatientRecord patient;
    patient.covariates = covariates;
    patient.labs.resize(static_cast<std::size_t>(p_count));
    latent.deviations.resize(static_cast<std::size_t>(p_count));
    for (int p = 0; p < p_count; ++p) {
        const VarParams& vp = params.vars[static_cast<std::size_t>(p)];
        const Eigen::VectorXd& t = times[static_cast<std::size_t>(p)];
        VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
        series.times = t;
        if (t.size() == 0) {
            latent.deviations[static_cast<std::size_t>(p)] = Eigen::VectorXd();
            series.values = Eigen::VectorXd();
            continue;
        }
        const double a2 = vp.kernel.amplitude * vp.kernel.amplitude;
        GaussianDist f_prior{Eigen::VectorXd::Zero(t.size()),
                             chol_with_jitter(ou_regularized(vp.kernel, t), a2)};
        Eigen::VectorXd f = mvn_sample(f_prior, rng);
        latent.deviations[static_cast<std::size_t>(p)] = f;

        Eigen::VectorXd mu =
            mean_function(params, covariates, latent.subpops[static_cast<std::size_t>(p)],
                          latent.rand_effects.segment<2>(2 * p), f, t, p);
        const double noise_sd = std::sqrt(vp.noise_var);
        series.values.resize(t.size());
        for (Eigen::Index j = 0; j < t.size(); ++j)
            series.values[j] = mu[j] + noise_sd * rng.normal();
    }
    return {std::move(patient), std::move(latent)};
}

}  // namespace trajmix
