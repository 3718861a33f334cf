#include "trajmix/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trajmix {

CohortDataset simulate_cohort(const ModelParams& params, int n, const SimulateSpec& spec,
                              const RngFactory& rng, std::vector<LatentState>* truth_out) {
    params.validate();
    const int p_count = params.config.num_variables();
    if (static_cast<int>(spec.missingness.size()) != p_count)
        throw std::invalid_argument("missingness spec must cover every variable");
    if (static_cast<int>(spec.covariates.size()) + 1 != params.config.covariate_dim)
        throw std::invalid_argument("covariate spec must cover covariate_dim - 1 entries");
    for (const VarMissingness& mv : spec.missingness) {
        if (mv.min_count < 1 || mv.max_count < mv.min_count)
            throw std::invalid_argument("bad observation count range");
        if (!(mv.p_unobserved >= 0.0 && mv.p_unobserved <= 1.0))
            throw std::invalid_argument("bad unobserved probability");
    }

    CohortDataset dataset;
    dataset.variables = params.config.variables;
    dataset.origin_rule = "simulated";
    dataset.covariates.names = {"intercept"};
    for (std::size_t k = 0; k < spec.covariates.size(); ++k)
        dataset.covariates.names.push_back("x" + std::to_string(k + 1));

    if (truth_out != nullptr) truth_out->clear();

    for (int i = 0; i < n; ++i) {
        Rng stream = rng.stream("sim-patient", static_cast<std::uint64_t>(i));

        Eigen::VectorXd x(params.config.covariate_dim);
        x[0] = 1.0;
        for (std::size_t k = 0; k < spec.covariates.size(); ++k) {
            const CovariateGen& gen = spec.covariates[k];
            if (gen.kind == CovariateGen::Kind::kBernoulli)
                x[static_cast<Eigen::Index>(k + 1)] = stream.uniform() < gen.mean ? 1.0 : 0.0;
            else
                x[static_cast<Eigen::Index>(k + 1)] = gen.mean + gen.sd * stream.normal();
        }

        std::vector<Eigen::VectorXd> times(static_cast<std::size_t>(p_count));
        for (int p = 0; p < p_count; ++p) {
            const VarMissingness& mv = spec.missingness[static_cast<std::size_t>(p)];
            if (stream.uniform() < mv.p_unobserved) {
                times[static_cast<std::size_t>(p)] = Eigen::VectorXd();
                continue;
            }
            const int count = mv.min_count + stream.uniform_int(mv.max_count - mv.min_count + 1);
            std::vector<double> draws(static_cast<std::size_t>(count));
            for (double& t : draws) t = mv.t_lo + (mv.t_hi - mv.t_lo) * stream.uniform();
            std::sort(draws.begin(), draws.end());
            times[static_cast<std::size_t>(p)] =
                Eigen::Map<Eigen::VectorXd>(draws.data(), count);
        }

        auto [patient, latent] = sample_patient(params, x, times, stream);
        patient.id = "sim-" + std::to_string(i);
        dataset.patients.push_back(std::move(patient));
        if (truth_out != nullptr) truth_out->push_back(std::move(latent));
    }
    return dataset;
}

ModelParams make_demo_params(const ModelConfig& config, double t_lo, double t_hi,
                             double noise_sd, double separation_sds, double rand_eff_corr,
                             const RngFactory& rng) {
    config.validate();
    if (!(std::abs(rand_eff_corr) < 1.0))
        throw std::invalid_argument("random-effect correlation must lie in (-1, 1)");

    ModelParams params;
    params.config = config;
    params.train_lo = t_lo;
    params.train_hi = t_hi;
    params.basis = SplineBasis(config.spline_degree,
                               evenly_spaced_interior(t_lo, t_hi, config.interior_knot_count),
                               t_lo, t_hi);
    const int basis_dim = params.basis.dimension();
    const int p_count = config.num_variables();
    const int g_count = config.num_clusters;

    Rng stream = rng.stream("demo-params");
    params.cluster_weights = Eigen::MatrixXd::Zero(g_count, config.covariate_dim);
    for (int g = 1; g < g_count; ++g)
        for (int j = 0; j < config.covariate_dim; ++j)
            params.cluster_weights(g, j) = 0.3 * stream.normal();

    // Equicorrelated intercepts across variables; slopes mildly correlated the
    // same way, with smaller scale.
    const int b_dim = config.rand_eff_dim();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(b_dim, b_dim);
    const double int_var = noise_sd * noise_sd;
    const double slope_var = 0.25 * noise_sd * noise_sd;
    for (int p = 0; p < p_count; ++p) {
        cov(2 * p, 2 * p) = int_var;
        cov(2 * p + 1, 2 * p + 1) = slope_var;
        for (int p2 = 0; p2 < p; ++p2) {
            cov(2 * p, 2 * p2) = cov(2 * p2, 2 * p) = rand_eff_corr * int_var;
            cov(2 * p + 1, 2 * p2 + 1) = cov(2 * p2 + 1, 2 * p + 1) = rand_eff_corr * slope_var;
        }
    }
    params.rand_eff_cov = cov;

    const double separation = separation_sds * noise_sd;
    for (int p = 0; p < p_count; ++p) {
        VarParams vp;
        const int gp = config.subpop_counts[static_cast<std::size_t>(p)];
        vp.fixed_effect = Eigen::VectorXd::Zero(config.covariate_dim);
        vp.fixed_effect[0] = 10.0 * (p + 1);

        // Distinct smooth shapes: a level offset per subpopulation plus a
        // subpopulation-specific slope across the span.
        vp.subpop_curves.resize(gp, basis_dim);
        const int grid_size = 24;
        Eigen::VectorXd grid(grid_size);
        for (int i = 0; i < grid_size; ++i)
            grid[i] = t_lo + (t_hi - t_lo) * static_cast<double>(i) / (grid_size - 1);
        const Eigen::MatrixXd grid_design = bspline_design(params.basis, grid);
        Eigen::MatrixXd gram = grid_design.transpose() * grid_design +
                               1e-8 * Eigen::MatrixXd::Identity(basis_dim, basis_dim);
        const Eigen::LDLT<Eigen::MatrixXd> solver(gram);
        for (int h = 0; h < gp; ++h) {
            Eigen::VectorXd shape(grid_size);
            const double slope = separation * (h - 0.5 * (gp - 1)) / std::max(1.0, t_hi - t_lo);
            for (int i = 0; i < grid_size; ++i)
                shape[i] = separation * h + slope * (grid[i] - t_lo) +
                           0.2 * separation * std::sin(2.0 * M_PI * (grid[i] - t_lo) /
                                                       std::max(1.0, t_hi - t_lo) + h);
            vp.subpop_curves.row(h) = solver.solve(grid_design.transpose() * shape);
        }

        // Concentrated mixing: cluster g prefers subpopulation g mod G_p.
        vp.subpop_mix.resize(gp, g_count);
        for (int g = 0; g < g_count; ++g) {
            for (int h = 0; h < gp; ++h)
                vp.subpop_mix(h, g) = (h == g % gp) ? 0.85 : 0.15 / std::max(1, gp - 1);
            vp.subpop_mix.col(g) /= vp.subpop_mix.col(g).sum();
        }

        vp.kernel.amplitude = 0.8 * noise_sd;
        vp.kernel.lengthscale = 1.0;
        vp.noise_var = noise_sd * noise_sd;
        params.vars.push_back(std::move(vp));
    }
    params.validate();
    return params;
}

}  // namespace trajmix
