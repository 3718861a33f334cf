#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "trajmix/elbo.hpp"
#include "trajmix/model.hpp"
#include "trajmix/mvn.hpp"
#include "trajmix/stats.hpp"

using namespace trajmix;

namespace {

// Single-variable, single-component model with a negligible random-effect
// prior, so the exact posterior factorizes over (b, f) to working precision
// and the mean-field family contains it.
struct ConjugateCase {
    ModelParams params;
    PatientRecord patient;
    LocalVariational exact_posterior_locals;
    oracles::ConjugatePosterior posterior;
};

ConjugateCase make_conjugate_case(std::uint64_t seed) {
    ModelConfig config;
    config.variables = {{"lab0", false}};
    config.num_clusters = 1;
    config.subpop_counts = {1};
    config.covariate_dim = 2;
    config.interior_knot_count = 2;

    ConjugateCase out;
    out.params = make_demo_params(config, 0.0, 5.0, 1.0, 2.0, 0.0, RngFactory(seed));
    out.params.rand_eff_cov = 1e-12 * Eigen::MatrixXd::Identity(2, 2);

    Rng rng(seed + 100);
    Eigen::VectorXd x(2);
    x << 1.0, rng.normal();
    Eigen::VectorXd times(6);
    times << 0.4, 1.0, 1.9, 2.7, 3.6, 4.4;
    auto [patient, latent] = sample_patient(out.params, x, {times}, rng);
    patient.id = "conj";
    out.patient = patient;

    out.posterior = oracles::conjugate_posterior(out.params, out.patient);
    const Eigen::Index b_dim = out.posterior.b_dim;
    const Eigen::Index n = times.size();

    LocalVariational local = init_local(out.params, out.patient);
    local.b_mean = out.posterior.mean.head(b_dim);
    local.b_cov_factor =
        chol_with_jitter(out.posterior.cov.topLeftCorner(b_dim, b_dim), 1e-12);
    local.f_mean[0] = out.posterior.mean.tail(n);
    local.f_cov_factor[0] = chol_with_jitter(out.posterior.cov.bottomRightCorner(n, n), 1.0);
    out.exact_posterior_locals = local;
    return out;
}

}  // namespace

TEST_CASE("elbo at the exact conjugate posterior equals the evidence") {
    const ConjugateCase cc = make_conjugate_case(41);
    const double bound = elbo(cc.params, {cc.patient}, {cc.exact_posterior_locals}, false);
    const double evidence = exact_log_evidence(cc.params, cc.patient);
    CHECK(bound == doctest::Approx(evidence).epsilon(1e-6));
    CHECK(bound <= evidence + 1e-8);
}

TEST_CASE("elbo never exceeds the exact evidence, for arbitrary locals") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull, 6ull, 7ull, 8ull}) {
        oracles::TinyInstance tiny = oracles::make_tiny_instance(seed, 2, 2, 2, 2, 4);
        double evidence = 0.0;
        for (const PatientRecord& patient : tiny.patients)
            evidence += exact_log_evidence(tiny.params, patient);
        const double bound = elbo(tiny.params, tiny.patients, tiny.locals, false);
        CHECK(bound <= evidence + 1e-8);
    }
}

TEST_CASE("elbo matches a Monte Carlo estimate on a tiny instance") {
    oracles::TinyInstance tiny = oracles::make_tiny_instance(77, 1, 2, 2, 1, 3);
    const ModelParams& params = tiny.params;
    const PatientRecord& patient = tiny.patients[0];
    const LocalVariational& local = tiny.locals[0];

    const double analytic = elbo(params, tiny.patients, tiny.locals, false);

    Rng rng(31337);
    const int n_samples = 300000;
    double mean = 0.0, m2 = 0.0;
    const Eigen::Index n = patient.labs[0].size();
    GaussianDist qb{local.b_mean, local.b_cov_factor};
    GaussianDist qf{local.f_mean[0], local.f_cov_factor[0]};
    for (int s = 0; s < n_samples; ++s) {
        LatentState latent;
        latent.cluster = rng.categorical(
            {local.cluster_probs[0], local.cluster_probs[1]});
        latent.subpops = {rng.categorical(
            {local.subpop_probs[0][0], local.subpop_probs[0][1]})};
        latent.rand_effects = mvn_sample(qb, rng);
        latent.deviations = {mvn_sample(qf, rng)};

        double value = joint_log_density(params, patient, latent);
        value -= std::log(local.cluster_probs[latent.cluster]);
        value -= std::log(local.subpop_probs[0][latent.subpops[0]]);
        value -= mvn_logpdf(latent.rand_effects, qb);
        value -= mvn_logpdf(latent.deviations[0], qf);
        (void)n;

        const double delta = value - mean;
        mean += delta / (s + 1);
        m2 += delta * (value - mean);
    }
    const double se = std::sqrt(m2 / (n_samples - 1.0) / n_samples);
    CHECK(std::abs(analytic - mean) < 3.0 * se);
}

TEST_CASE("parameter prior term is the product of its normal factors") {
    oracles::TinyInstance tiny = oracles::make_tiny_instance(5, 2, 2, 2, 1, 3);
    const double with_prior = elbo(tiny.params, tiny.patients, tiny.locals, true, 10.0);
    const double without = elbo(tiny.params, tiny.patients, tiny.locals, false);
    double expected = 0.0;
    const double var = 100.0;
    auto add = [&](double value) {
        expected += -0.5 * std::log(2.0 * M_PI * var) - value * value / (2.0 * var);
    };
    for (const VarParams& vp : tiny.params.vars) {
        for (Eigen::Index i = 0; i < vp.fixed_effect.size(); ++i) add(vp.fixed_effect[i]);
        for (Eigen::Index i = 0; i < vp.subpop_curves.rows(); ++i)
            for (Eigen::Index j = 0; j < vp.subpop_curves.cols(); ++j)
                add(vp.subpop_curves(i, j));
    }
    for (Eigen::Index i = 1; i < tiny.params.cluster_weights.rows(); ++i)
        for (Eigen::Index j = 0; j < tiny.params.cluster_weights.cols(); ++j)
            add(tiny.params.cluster_weights(i, j));
    CHECK(with_prior - without == doctest::Approx(expected).epsilon(1e-10));
}
