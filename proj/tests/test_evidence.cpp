#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "trajmix/model.hpp"
#include "trajmix/mvn.hpp"
#include "trajmix/stats.hpp"

using namespace trajmix;

namespace {

ModelParams demo(std::uint64_t seed, int p_count, int g_count, int gp) {
    ModelConfig config;
    for (int p = 0; p < p_count; ++p)
        config.variables.push_back({"lab" + std::to_string(p), false});
    config.num_clusters = g_count;
    config.subpop_counts.assign(static_cast<std::size_t>(p_count), gp);
    config.covariate_dim = 2;
    config.interior_knot_count = 3;
    return make_demo_params(config, 0.0, 5.0, 1.0, 3.0, 0.4, RngFactory(seed));
}

PatientRecord sample_with_times(const ModelParams& params, std::uint64_t seed,
                                const std::vector<int>& counts) {
    Rng rng(seed);
    Eigen::VectorXd x(2);
    x << 1.0, rng.normal();
    std::vector<Eigen::VectorXd> times(counts.size());
    for (std::size_t p = 0; p < counts.size(); ++p) {
        std::vector<double> draws(static_cast<std::size_t>(counts[p]));
        for (double& t : draws) t = 5.0 * rng.uniform();
        std::sort(draws.begin(), draws.end());
        times[p] = Eigen::Map<Eigen::VectorXd>(draws.data(), counts[p]);
    }
    auto [patient, latent] = sample_patient(params, x, times, rng);
    patient.id = "ev";
    return patient;
}

}  // namespace

TEST_CASE("single-component evidence is one closed-form Gaussian term") {
    ModelParams params = demo(3, 1, 1, 1);
    const PatientRecord patient = sample_with_times(params, 11, {5});
    const VarSeries& series = patient.labs[0];
    const VarParams& vp = params.vars[0];

    const Eigen::MatrixXd phi_l = linear_design(series.times);
    const Eigen::MatrixXd cov = phi_l * params.rand_eff_cov * phi_l.transpose() +
                                ou_regularized(vp.kernel, series.times) +
                                vp.noise_var * Eigen::MatrixXd::Identity(5, 5);
    const Eigen::VectorXd mean =
        (bspline_design(params.basis, series.times) * vp.subpop_curves.row(0).transpose())
            .array() +
        vp.fixed_effect.dot(patient.covariates);
    const double closed_form = oracles::naive_mvn_logpdf(series.values, mean, cov);
    CHECK(exact_log_evidence(params, patient) == doctest::Approx(closed_form).epsilon(1e-8));
}

TEST_CASE("equal mixing columns make the evidence independent of cluster weights") {
    ModelParams params = demo(5, 2, 2, 2);
    for (VarParams& vp : params.vars) vp.subpop_mix.col(1) = vp.subpop_mix.col(0);
    const PatientRecord patient = sample_with_times(params, 13, {4, 3});

    const double base = exact_log_evidence(params, patient);
    params.cluster_weights(1, 0) = 2.7;
    params.cluster_weights(1, 1) = -1.3;
    CHECK(exact_log_evidence(params, patient) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("evidence matches a Monte Carlo estimate from prior samples") {
    ModelParams params = demo(7, 2, 2, 2);
    const PatientRecord patient = sample_with_times(params, 17, {3, 2});
    const double exact = exact_log_evidence(params, patient);

    // log p(y) ~ log mean_s exp(log N(y | mu(latent_s), sigma^2 I))
    Rng rng(999);
    const int n_samples = 200000;
    std::vector<double> logw(static_cast<std::size_t>(n_samples));
    std::vector<Eigen::VectorXd> times;
    for (const VarSeries& series : patient.labs) times.push_back(series.times);
    for (int s = 0; s < n_samples; ++s) {
        auto [draw, latent] = sample_patient(params, patient.covariates, times, rng);
        double lw = 0.0;
        for (int p = 0; p < 2; ++p) {
            const VarParams& vp = params.vars[static_cast<std::size_t>(p)];
            const Eigen::VectorXd mu = mean_function(
                params, patient.covariates, latent.subpops[static_cast<std::size_t>(p)],
                latent.rand_effects.segment<2>(2 * p),
                latent.deviations[static_cast<std::size_t>(p)], times[static_cast<std::size_t>(p)],
                p);
            lw += -0.5 * patient.labs[p].size() * std::log(2.0 * M_PI * vp.noise_var) -
                  (patient.labs[p].values - mu).squaredNorm() / (2.0 * vp.noise_var);
        }
        logw[static_cast<std::size_t>(s)] = lw;
    }
    const double shift = *std::max_element(logw.begin(), logw.end());
    double mean = 0.0;
    for (const double lw : logw) mean += std::exp(lw - shift);
    mean /= n_samples;
    double var = 0.0;
    for (const double lw : logw) {
        const double d = std::exp(lw - shift) - mean;
        var += d * d;
    }
    const double se = std::sqrt(var / n_samples / (n_samples - 1.0));
    const double lo = shift + std::log(mean - 3.0 * se);
    const double hi = shift + std::log(mean + 3.0 * se);
    CHECK(exact > lo);
    CHECK(exact < hi);
}

TEST_CASE("evidence is invariant under a joint label permutation") {
    ModelParams params = demo(9, 2, 2, 2);
    const PatientRecord patient = sample_with_times(params, 23, {4, 2});
    const double base = exact_log_evidence(params, patient);

    // Swap the two clusters: permute W rows, mixing columns; the curves and
    // subpopulation labels swap per variable as well.
    ModelParams permuted = params;
    for (std::size_t p = 0; p < permuted.vars.size(); ++p) {
        VarParams& vp = permuted.vars[p];
        vp.subpop_mix.col(0).swap(vp.subpop_mix.col(1));  // cluster swap
        vp.subpop_mix.row(0).swap(vp.subpop_mix.row(1));  // subpop swap
        vp.subpop_curves.row(0).swap(vp.subpop_curves.row(1));
    }
    // W swap with re-pinning: new row0 = old row1, then subtract it from all.
    Eigen::MatrixXd w = params.cluster_weights;
    w.row(0).swap(w.row(1));
    const Eigen::RowVectorXd shift = w.row(0);
    w.rowwise() -= shift;  // softmax-invariant, restores the zero reference row
    permuted.cluster_weights = w;

    CHECK(exact_log_evidence(permuted, patient) == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("oversized instances are rejected") {
    ModelParams params = demo(1, 1, 1, 1);
    PatientRecord patient = sample_with_times(params, 29, {4});
    VarSeries big;
    big.times = Eigen::VectorXd::LinSpaced(250, 0.0, 5.0);
    big.values = Eigen::VectorXd::Zero(250);
    patient.labs[0] = big;
    CHECK_THROWS_AS(exact_log_evidence(params, patient), std::invalid_argument);
}
