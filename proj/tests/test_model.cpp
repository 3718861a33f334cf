#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "trajmix/model.hpp"
#include "trajmix/mvn.hpp"
#include "trajmix/stats.hpp"

using namespace trajmix;

namespace {

ModelParams small_params(std::uint64_t seed = 1, int p_count = 2, int g_count = 2, int gp = 3) {
    ModelConfig config;
    for (int p = 0; p < p_count; ++p)
        config.variables.push_back({"lab" + std::to_string(p), false});
    config.num_clusters = g_count;
    config.subpop_counts.assign(static_cast<std::size_t>(p_count), gp);
    config.covariate_dim = 2;
    config.interior_knot_count = 3;
    return make_demo_params(config, 0.0, 5.0, 1.0, 3.0, 0.3, RngFactory(seed));
}

}  // namespace

TEST_CASE("mean_function composes its four terms") {
    ModelParams params = small_params();
    Eigen::VectorXd times(3);
    times << 0.5, 2.0, 4.5;
    Eigen::VectorXd x(2);
    x << 1.0, -0.4;

    SUBCASE("all components zero gives zero") {
        ModelParams zeroed = params;
        for (VarParams& vp : zeroed.vars) {
            vp.fixed_effect.setZero();
            vp.subpop_curves.setZero();
        }
        const Eigen::VectorXd mean = mean_function(zeroed, x, 0, Eigen::Vector2d::Zero(),
                                                   Eigen::VectorXd(), times, 0);
        CHECK(mean.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("intercept-only random effect gives a constant") {
        ModelParams zeroed = params;
        for (VarParams& vp : zeroed.vars) {
            vp.fixed_effect.setZero();
            vp.subpop_curves.setZero();
        }
        const Eigen::VectorXd mean = mean_function(zeroed, x, 1, Eigen::Vector2d(3.25, 0.0),
                                                   Eigen::VectorXd(), times, 1);
        for (Eigen::Index j = 0; j < times.size(); ++j)
            CHECK(mean[j] == doctest::Approx(3.25).epsilon(1e-14));
    }

    SUBCASE("random instance equals independent recomputation of the terms") {
        Rng rng(9);
        Eigen::VectorXd f(3);
        for (int j = 0; j < 3; ++j) f[j] = rng.normal();
        const Eigen::Vector2d b(rng.normal(), rng.normal());
        const int var = 1, subpop = 2;
        const Eigen::VectorXd mean = mean_function(params, x, subpop, b, f, times, var);

        const VarParams& vp = params.vars[var];
        for (Eigen::Index j = 0; j < times.size(); ++j) {
            const double level = vp.fixed_effect.dot(x);
            const double curve =
                params.basis.row(times[j]).dot(vp.subpop_curves.row(subpop));
            const double slope = b[0] + b[1] * times[j];
            CHECK(mean[j] == doctest::Approx(level + curve + slope + f[j]).epsilon(1e-12));
        }
    }

    SUBCASE("index errors") {
        CHECK_THROWS_AS(
            mean_function(params, x, 99, Eigen::Vector2d::Zero(), Eigen::VectorXd(), times, 0),
            std::out_of_range);
        CHECK_THROWS_AS(
            mean_function(params, x, 0, Eigen::Vector2d::Zero(), Eigen::VectorXd(), times, 7),
            std::out_of_range);
    }
}

TEST_CASE("cluster_prior") {
    ModelParams params = small_params();
    Eigen::VectorXd x(2);
    x << 1.0, 0.3;

    SUBCASE("zero weights give the uniform distribution") {
        params.cluster_weights.setZero();
        const Eigen::VectorXd pi = cluster_prior(params, x);
        for (int g = 0; g < 2; ++g) CHECK(pi[g] == doctest::Approx(0.5).epsilon(1e-14));
    }

    SUBCASE("two clusters with log-3 gap") {
        params.cluster_weights.setZero();
        // w_2^T x = ln 3 via the intercept column
        params.cluster_weights(1, 0) = std::log(3.0);
        params.cluster_weights(1, 1) = 0.0;
        Eigen::VectorXd unit(2);
        unit << 1.0, 0.0;
        const Eigen::VectorXd pi = cluster_prior(params, unit);
        CHECK(pi[0] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(pi[1] == doctest::Approx(0.75).epsilon(1e-12));
    }

    SUBCASE("sums to one for random weights") {
        Rng rng(4);
        for (int rep = 0; rep < 10; ++rep) {
            for (int g = 1; g < 2; ++g)
                for (int j = 0; j < 2; ++j) params.cluster_weights(g, j) = 2.0 * rng.normal();
            Eigen::VectorXd xr(2);
            xr << 1.0, rng.normal();
            CHECK(cluster_prior(params, xr).sum() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("subpop_conditional returns mixing columns") {
    ModelParams params = small_params(1, 1, 3, 3);
    SUBCASE("identity mixing makes z deterministic given c") {
        params.vars[0].subpop_mix = Eigen::MatrixXd::Identity(3, 3);
        for (int c = 0; c < 3; ++c) {
            const Eigen::VectorXd psi = subpop_conditional(params, 0, c);
            CHECK(psi[c] == 1.0);
            CHECK(psi.sum() == doctest::Approx(1.0));
        }
    }
    SUBCASE("columns are returned verbatim and sum to one") {
        Eigen::MatrixXd mix(2, 2);
        mix << 0.3, 0.6, 0.7, 0.4;
        ModelParams two = small_params(2, 1, 2, 2);
        two.vars[0].subpop_mix = mix;
        const Eigen::VectorXd col = subpop_conditional(two, 0, 0);
        CHECK(col[0] == 0.3);
        CHECK(col[1] == 0.7);
        CHECK(subpop_conditional(two, 0, 1).sum() == doctest::Approx(1.0));
    }
    SUBCASE("index error") {
        CHECK_THROWS_AS(subpop_conditional(params, 0, 99), std::out_of_range);
    }
}

namespace {

// Independent term-by-term recomputation of the joint log density.
double naive_joint_log_density(const ModelParams& params, const PatientRecord& patient,
                               const LatentState& latent) {
    double total = std::log(cluster_prior(params, patient.covariates)[latent.cluster]);
    total += oracles::naive_mvn_logpdf(latent.rand_effects,
                                       Eigen::VectorXd::Zero(latent.rand_effects.size()),
                                       params.rand_eff_cov);
    for (int p = 0; p < params.config.num_variables(); ++p) {
        const VarParams& vp = params.vars[static_cast<std::size_t>(p)];
        total += std::log(vp.subpop_mix(latent.subpops[static_cast<std::size_t>(p)],
                                        latent.cluster));
        const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
        if (series.size() == 0) continue;
        const Eigen::VectorXd& f = latent.deviations[static_cast<std::size_t>(p)];
        total += oracles::naive_mvn_logpdf(f, Eigen::VectorXd::Zero(f.size()),
                                           ou_regularized(vp.kernel, series.times));
        const Eigen::VectorXd mu = mean_function(
            params, patient.covariates, latent.subpops[static_cast<std::size_t>(p)],
            latent.rand_effects.segment<2>(2 * p), f, series.times, p);
        for (Eigen::Index j = 0; j < series.size(); ++j)
            total += -0.5 * std::log(2.0 * M_PI * vp.noise_var) -
                     (series.values[j] - mu[j]) * (series.values[j] - mu[j]) /
                         (2.0 * vp.noise_var);
    }
    return total;
}

}  // namespace

TEST_CASE("joint_log_density") {
    ModelParams params = small_params(3);
    Rng rng(17);

    Eigen::VectorXd x(2);
    x << 1.0, 0.8;
    std::vector<Eigen::VectorXd> times(2);
    Eigen::VectorXd t0(4);
    t0 << 0.3, 1.1, 2.2, 4.0;
    times[0] = t0;
    Eigen::VectorXd t1(3);
    t1 << 0.9, 2.5, 3.3;
    times[1] = t1;
    auto [patient, latent] = sample_patient(params, x, times, rng);

    SUBCASE("matches the independent term-by-term oracle") {
        CHECK(joint_log_density(params, patient, latent) ==
              doctest::Approx(naive_joint_log_density(params, patient, latent)).epsilon(1e-10));
    }

    SUBCASE("zero observations leaves prior terms only") {
        std::vector<Eigen::VectorXd> empty(2);
        empty[0] = Eigen::VectorXd();
        empty[1] = Eigen::VectorXd();
        auto [blank, blank_latent] = sample_patient(params, x, empty, rng);
        const double value = joint_log_density(params, blank, blank_latent);
        double expected = std::log(cluster_prior(params, x)[blank_latent.cluster]);
        expected += oracles::naive_mvn_logpdf(blank_latent.rand_effects,
                                              Eigen::VectorXd::Zero(4), params.rand_eff_cov);
        for (int p = 0; p < 2; ++p)
            expected += std::log(params.vars[p].subpop_mix(blank_latent.subpops[p],
                                                           blank_latent.cluster));
        CHECK(value == doctest::Approx(expected).epsilon(1e-10));
    }

    SUBCASE("doubling the noise scale changes the likelihood by the analytic amount") {
        ModelParams wide = params;
        for (VarParams& vp : wide.vars) vp.noise_var *= 4.0;  // sigma doubled
        const double base = joint_log_density(params, patient, latent);
        const double wide_value = joint_log_density(wide, patient, latent);

        double expected_delta = 0.0;
        for (int p = 0; p < 2; ++p) {
            const VarParams& vp = params.vars[p];
            const VarSeries& series = patient.labs[p];
            const Eigen::VectorXd mu = mean_function(
                wide, x, latent.subpops[p], latent.rand_effects.segment<2>(2 * p),
                latent.deviations[p], series.times, p);
            const double sq = (series.values - mu).squaredNorm();
            expected_delta += -static_cast<double>(series.size()) * std::log(2.0) +
                              sq / (2.0 * vp.noise_var) - sq / (8.0 * vp.noise_var);
        }
        CHECK(wide_value - base == doctest::Approx(expected_delta).epsilon(1e-9));
    }

    SUBCASE("dimension mismatch throws") {
        LatentState bad = latent;
        bad.deviations[0] = Eigen::VectorXd::Zero(1);
        CHECK_THROWS_AS(joint_log_density(params, patient, bad), std::invalid_argument);
    }
}

TEST_CASE("sample_patient") {
    ModelParams params = small_params(5);

    SUBCASE("degenerate noise collapses onto fixed effect plus curve") {
        ModelParams tight = params;
        for (VarParams& vp : tight.vars) {
            vp.noise_var = 1e-30;
            vp.kernel.amplitude = 1e-15;
        }
        tight.rand_eff_cov = 1e-30 * Eigen::MatrixXd::Identity(4, 4);
        Eigen::VectorXd x(2);
        x << 1.0, 0.5;
        Eigen::VectorXd t(3);
        t << 0.5, 2.0, 4.0;
        Rng rng(31);
        auto [patient, latent] = sample_patient(tight, x, {t, t}, rng);
        for (int p = 0; p < 2; ++p) {
            const Eigen::VectorXd expected =
                mean_function(tight, x, latent.subpops[p], Eigen::Vector2d::Zero(),
                              Eigen::VectorXd(), t, p);
            CHECK((patient.labs[p].values - expected).cwiseAbs().maxCoeff() < 1e-7);
        }
    }

    SUBCASE("cluster frequencies match the prior within Monte Carlo error") {
        Eigen::VectorXd x(2);
        x << 1.0, 1.2;
        const Eigen::VectorXd pi = cluster_prior(params, x);
        Rng rng(77);
        const int n = 100000;
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(2);
        std::vector<Eigen::VectorXd> empty(2);
        for (int s = 0; s < n; ++s) {
            auto [patient, latent] = sample_patient(params, x, empty, rng);
            counts[latent.cluster] += 1.0;
        }
        for (int g = 0; g < 2; ++g) {
            const double freq = counts[g] / n;
            const double mc_se = std::sqrt(pi[g] * (1.0 - pi[g]) / n);
            CHECK(std::abs(freq - pi[g]) < 3.0 * mc_se);
        }
    }

    SUBCASE("fixed seed reproducibility") {
        Eigen::VectorXd x(2);
        x << 1.0, -0.2;
        Eigen::VectorXd t(4);
        t << 0.2, 1.0, 2.0, 3.5;
        Rng r1(123), r2(123);
        auto [p1, l1] = sample_patient(params, x, {t, t}, r1);
        auto [p2, l2] = sample_patient(params, x, {t, t}, r2);
        CHECK(l1.cluster == l2.cluster);
        for (int p = 0; p < 2; ++p)
            CHECK((p1.labs[p].values - p2.labs[p].values).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("sampled patients always have finite joint density") {
        Rng rng(55);
        for (int rep = 0; rep < 25; ++rep) {
            Eigen::VectorXd x(2);
            x << 1.0, rng.normal();
            Eigen::VectorXd t(2);
            t << rng.uniform() * 2.0, 2.0 + rng.uniform() * 2.0;
            auto [patient, latent] = sample_patient(params, x, {t, Eigen::VectorXd()}, rng);
            CHECK(std::isfinite(joint_log_density(params, patient, latent)));
        }
    }
}
