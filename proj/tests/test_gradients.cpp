#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "trajmix/elbo.hpp"
#include "trajmix/runner.hpp"

using namespace trajmix;

TEST_CASE("analytic gradients match central finite differences") {
    oracles::TinyInstance tiny = oracles::make_tiny_instance(101, 2, 2, 2, 2, 5);
    const double worst = gradient_max_rel_error(tiny.params, tiny.patients, tiny.locals, 1e-5);
    CHECK(worst < 1e-5);
}

TEST_CASE("gradients vanish at the prior for a data-free patient") {
    // Single cluster, no observations, locals at prior moments: every local
    // and per-patient global coordinate is stationary.
    ModelConfig config;
    config.variables = {{"lab0", false}, {"lab1", false}};
    config.num_clusters = 1;
    config.subpop_counts = {3, 2};
    config.covariate_dim = 2;
    config.interior_knot_count = 2;
    const ModelParams params = make_demo_params(config, 0.0, 4.0, 1.0, 2.0, 0.2, RngFactory(4));

    PatientRecord patient;
    patient.id = "empty";
    patient.covariates = Eigen::VectorXd::Zero(2);
    patient.covariates[0] = 1.0;
    patient.labs.resize(2);

    const LocalVariational local = init_local(params, patient);
    const ElboGradients grads = elbo_gradients(params, {patient}, {local}, false);
    CHECK(grads.locals[0].cwiseAbs().maxCoeff() < 1e-8);
    CHECK(grads.global.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("gradients are deterministic for fixed inputs") {
    oracles::TinyInstance tiny = oracles::make_tiny_instance(55, 2, 2, 2, 2, 4);
    const ElboGradients a = elbo_gradients(tiny.params, tiny.patients, tiny.locals, true);
    const ElboGradients b = elbo_gradients(tiny.params, tiny.patients, tiny.locals, true);
    CHECK((a.global - b.global).cwiseAbs().maxCoeff() == 0.0);
    for (std::size_t i = 0; i < a.locals.size(); ++i)
        CHECK((a.locals[i] - b.locals[i]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("packers round-trip their structures") {
    oracles::TinyInstance tiny = oracles::make_tiny_instance(66, 2, 3, 2, 1, 4);
    const GlobalPacking packing(tiny.params.config, tiny.params.basis.dimension());
    ModelParams rebuilt = tiny.params;
    packing.unpack_into(packing.pack(tiny.params), rebuilt);
    for (std::size_t p = 0; p < tiny.params.vars.size(); ++p) {
        CHECK((rebuilt.vars[p].subpop_curves - tiny.params.vars[p].subpop_curves)
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
        CHECK((rebuilt.vars[p].subpop_mix - tiny.params.vars[p].subpop_mix)
                  .cwiseAbs()
                  .maxCoeff() < 1e-12);
        CHECK(rebuilt.vars[p].noise_var ==
              doctest::Approx(tiny.params.vars[p].noise_var).epsilon(1e-12));
    }
    CHECK((rebuilt.rand_eff_cov - tiny.params.rand_eff_cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(rebuilt.cluster_weights.row(0).cwiseAbs().maxCoeff() == 0.0);

    const LocalPacking local_packing(tiny.params, tiny.patients[0]);
    const LocalVariational rebuilt_local =
        local_packing.unpack(local_packing.pack(tiny.locals[0]));
    CHECK((rebuilt_local.cluster_probs - tiny.locals[0].cluster_probs).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((rebuilt_local.b_cov_factor - tiny.locals[0].b_cov_factor).cwiseAbs().maxCoeff() <
          1e-12);
    CHECK((rebuilt_local.f_mean[0] - tiny.locals[0].f_mean[0]).cwiseAbs().maxCoeff() < 1e-12);
}
