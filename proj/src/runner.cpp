#include "trajmix/runner.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "trajmix/parallel.hpp"
#include "trajmix/simulate.hpp"
#include "trajmix/snapshot.hpp"

namespace trajmix {

namespace {

void write_manifest(const std::string& dir, const std::string& command, const AppConfig& cfg,
                    std::uint64_t seed, const nlohmann::json& extra) {
    nlohmann::json doc;
    doc["command"] = command;
    doc["config_hash"] = cfg.config_hash;
    doc["seed"] = seed;
    doc["timestamp"] = static_cast<std::int64_t>(
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
    doc["inputs"] = extra;
    std::ofstream out(dir + "/manifest.json");
    out << doc.dump(2) << "\n";
}

SimulateSpec make_simulate_spec(const AppConfig& cfg, int p_count) {
    SimulateSpec spec;
    for (int k = 0; k < cfg.simulate.normal_covariates; ++k)
        spec.covariates.push_back({CovariateGen::Kind::kNormal, 0.0, 1.0});
    for (int k = 0; k < cfg.simulate.bernoulli_covariates; ++k)
        spec.covariates.push_back(
            {CovariateGen::Kind::kBernoulli, cfg.simulate.bernoulli_p, 0.0});
    for (int p = 0; p < p_count; ++p) {
        VarMissingness mv;
        mv.p_unobserved = p < static_cast<int>(cfg.simulate.p_unobserved.size())
                              ? cfg.simulate.p_unobserved[static_cast<std::size_t>(p)]
                              : 0.0;
        mv.min_count = cfg.simulate.obs_min;
        mv.max_count = cfg.simulate.obs_max;
        mv.t_lo = cfg.simulate.t_lo;
        mv.t_hi = cfg.simulate.t_hi;
        spec.missingness.push_back(mv);
    }
    return spec;
}

ModelConfig cohort_model_config(const AppConfig& cfg, const CohortDataset& cohort) {
    ModelConfig config = cfg.model;
    config.variables = cohort.variables;
    if (config.subpop_counts.size() != config.variables.size()) {
        const int gp = config.subpop_counts.empty() ? 4 : config.subpop_counts.front();
        config.subpop_counts.assign(config.variables.size(), gp);
    }
    if (cohort.patients.empty()) throw std::runtime_error("cohort is empty");
    config.covariate_dim = static_cast<int>(cohort.patients.front().covariates.size());
    return config;
}

}  // namespace

int cmd_simulate(const AppConfig& cfg, const std::string& out_dir, int n, std::uint64_t seed,
                 int workers) {
    (void)workers;
    if (cfg.model.variables.empty())
        throw std::runtime_error("config must name at least one variable");
    const RngFactory rng(seed);

    ModelParams params;
    if (!cfg.simulate.snapshot.empty()) {
        params = load_snapshot(cfg.simulate.snapshot);
    } else {
        ModelConfig config = cfg.model;
        config.covariate_dim =
            1 + cfg.simulate.normal_covariates + cfg.simulate.bernoulli_covariates;
        params = make_demo_params(config, cfg.simulate.t_lo, cfg.simulate.t_hi,
                                  cfg.simulate.noise_sd, cfg.simulate.separation_sds,
                                  cfg.simulate.rand_eff_corr, rng);
    }

    const SimulateSpec spec = make_simulate_spec(cfg, params.config.num_variables());
    std::vector<LatentState> truth;
    const CohortDataset cohort = simulate_cohort(params, n, spec, rng, &truth);

    std::filesystem::create_directories(out_dir);
    save_cohort(cohort, out_dir, cfg.config_hash, seed, &truth);
    save_snapshot(params, out_dir + "/true_params.json");
    write_manifest(out_dir, "simulate", cfg, seed, {{"n", n}});
    std::cout << "simulated " << cohort.patients.size() << " patients into " << out_dir << "\n";
    return 0;
}

int cmd_preprocess(const AppConfig& cfg, const std::vector<std::string>& lab_files,
                   const std::string& demographics_file, const std::string& out_dir, bool strict,
                   bool log_acr) {
    CohortOptions options = cfg.preprocess;
    options.strict = strict;
    if (log_acr)
        for (VariableSpec& spec : options.roster)
            if (spec.name.find("acr") != std::string::npos) spec.log_scale = true;

    const CohortBuild build = build_cohort(lab_files, demographics_file, options);
    std::filesystem::create_directories(out_dir);
    save_cohort(build.dataset, out_dir, cfg.config_hash, 0);

    {
        std::ofstream out(out_dir + "/dropped.csv");
        out << "patient_id,reason\n";
        for (const DropRecord& drop : build.dropped)
            out << drop.patient_id << "," << drop.reason << "\n";
    }
    nlohmann::json extra;
    extra["lab_files"] = lab_files;
    extra["demographics"] = demographics_file;
    write_manifest(out_dir, "preprocess", cfg, 0, extra);
    std::cout << "kept " << build.dataset.patients.size() << " patients, dropped "
              << build.dropped.size() << "\n";
    return 0;
}

int cmd_fit(const AppConfig& cfg, const std::string& cohort_dir, const std::string& out_dir,
            std::uint64_t seed, int workers) {
    const CohortDataset cohort = load_cohort(cohort_dir);
    const ModelConfig config = cohort_model_config(cfg, cohort);

    FitOptions options = cfg.fit;
    options.seed = seed;
    options.workers = workers;
    std::filesystem::create_directories(out_dir);
    if (options.checkpoint_every > 0) options.checkpoint_dir = out_dir;

    const RngFactory rng(seed);
    const FitResult result = fit(cohort.patients, config, options, rng);

    save_snapshot(result.params, out_dir + "/snapshot.json");
    write_trace_csv(result.trace, out_dir + "/trace.csv");
    write_manifest(out_dir, "fit", cfg, seed,
                   {{"cohort", cohort_dir},
                    {"epochs_run", result.epochs_run},
                    {"converged", result.converged}});
    std::cout << "fit " << cohort.patients.size() << " patients for " << result.epochs_run
              << " epochs" << (result.converged ? " (converged)" : "") << "\n";
    return 0;
}

int cmd_predict(const AppConfig& cfg, const std::string& snapshot_path,
                const std::string& cohort_dir, double truncate_time,
                const std::vector<TimeBin>& horizon_bins, int n_samples,
                const std::string& out_dir, bool dump_samples, std::uint64_t seed, int workers) {
    const ModelParams params = load_snapshot(snapshot_path);
    const CohortDataset cohort = load_cohort(cohort_dir);
    const int p_count = params.config.num_variables();

    // Forecast at the midpoint of every requested horizon bin past the cutoff.
    std::vector<double> grid;
    for (const TimeBin& bin : horizon_bins) {
        const double mid = 0.5 * (bin.lo + bin.hi);
        if (mid > truncate_time) grid.push_back(mid);
    }
    if (grid.empty()) throw std::runtime_error("no horizon bin lies past the truncation time");
    Eigen::VectorXd targets(static_cast<Eigen::Index>(grid.size()));
    for (Eigen::Index j = 0; j < targets.size(); ++j) targets[j] = grid[static_cast<std::size_t>(j)];

    const RngFactory rng(seed);
    std::vector<std::string> rows(cohort.patients.size());
    std::vector<std::string> sample_rows(cohort.patients.size());
    HeldoutOptions heldout = cfg.heldout;

    parallel_for(cohort.patients.size(), workers, [&](std::size_t i) {
        const PatientRecord& patient = cohort.patients[i];
        const TruncatedPatient split =
            truncate_history(patient, truncate_time, cfg.protocol.bins);
        const LocalVariational local = fit_heldout_local(params, split.history, heldout);
        ForecastRequest request;
        request.target_times.assign(static_cast<std::size_t>(p_count), targets);
        request.n_samples = n_samples;
        request.seed = rng.stream("forecast", i).next_u64();
        const Forecast forecast = predictive_draws(params, local, split.history, request);
        append_forecast_csv(rows[i], patient.id, params, forecast, true);
        if (dump_samples)
            append_forecast_samples_csv(sample_rows[i], patient.id, params, forecast, true);
    });

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir + "/forecasts.csv");
        out << forecast_csv_header();
        for (const std::string& row : rows) out << row;
    }
    if (dump_samples) {
        std::ofstream out(out_dir + "/forecast_samples.csv");
        out << forecast_samples_csv_header();
        for (const std::string& row : sample_rows) out << row;
    }
    write_manifest(out_dir, "predict", cfg, seed,
                   {{"snapshot", snapshot_path},
                    {"cohort", cohort_dir},
                    {"truncate", truncate_time},
                    {"samples", n_samples}});
    std::cout << "forecasts for " << cohort.patients.size() << " patients written to " << out_dir
              << "\n";
    return 0;
}

int cmd_evaluate(const AppConfig& cfg, const std::string& cohort_dir, const std::string& out_dir,
                 std::uint64_t seed, int workers) {
    const CohortDataset cohort = load_cohort(cohort_dir);
    const ModelConfig config = cohort_model_config(cfg, cohort);

    FitOptions options = cfg.fit;
    options.seed = seed;
    options.workers = workers;
    EvalProtocol protocol = cfg.protocol;
    protocol.seed = seed;

    const RngFactory rng(seed);
    EvaluationReport report = run_benchmark(cohort.patients, config, protocol, options, rng);
    report.config_hash = cfg.config_hash;

    std::filesystem::create_directories(out_dir);
    write_report_csv(report, out_dir + "/report.csv");
    {
        std::ofstream out(out_dir + "/table.txt");
        out << render_report_table(report);
    }
    write_manifest(out_dir, "evaluate", cfg, seed, {{"cohort", cohort_dir}});
    std::cout << render_report_table(report);
    return 0;
}

double gradient_max_rel_error(const ModelParams& params,
                              const std::vector<PatientRecord>& patients,
                              const std::vector<LocalVariational>& locals, double h) {
    const GlobalPacking global_packing(params.config, params.basis.dimension());
    const ElboGradients analytic = elbo_gradients(params, patients, locals, true);

    auto rel_err = [](double a, double b) {
        return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
    };

    double worst = 0.0;
    // Global coordinates.
    {
        const Eigen::VectorXd base = global_packing.pack(params);
        ModelParams probe = params;
        for (Eigen::Index k = 0; k < base.size(); ++k) {
            Eigen::VectorXd up = base, down = base;
            up[k] += h;
            down[k] -= h;
            global_packing.unpack_into(up, probe);
            const double hi = elbo(probe, patients, locals, true);
            global_packing.unpack_into(down, probe);
            const double lo = elbo(probe, patients, locals, true);
            worst = std::max(worst, rel_err((hi - lo) / (2.0 * h), analytic.global[k]));
        }
    }
    // Local coordinates, one patient at a time.
    for (std::size_t i = 0; i < patients.size(); ++i) {
        const LocalPacking packing(params, patients[i]);
        const Eigen::VectorXd base = packing.pack(locals[i]);
        std::vector<LocalVariational> probe = locals;
        for (Eigen::Index k = 0; k < base.size(); ++k) {
            Eigen::VectorXd up = base, down = base;
            up[k] += h;
            down[k] -= h;
            probe[i] = packing.unpack(up);
            const double hi = elbo(params, patients, probe, true);
            probe[i] = packing.unpack(down);
            const double lo = elbo(params, patients, probe, true);
            probe[i] = locals[i];
            worst = std::max(worst, rel_err((hi - lo) / (2.0 * h), analytic.locals[i][k]));
        }
    }
    return worst;
}

int cmd_gradcheck(std::uint64_t seed) {
    const RngFactory rng(seed);

    ModelConfig config;
    config.variables = {{"lab_a", false}, {"lab_b", false}, {"lab_c", false}};
    config.num_clusters = 2;
    config.subpop_counts = {2, 2, 2};
    config.covariate_dim = 3;
    config.interior_knot_count = 4;

    ModelParams params = make_demo_params(config, 0.0, 6.0, 1.0, 3.0, 0.4, rng);
    Rng stream = rng.stream("gradcheck");

    std::vector<PatientRecord> patients;
    std::vector<LocalVariational> locals;
    for (int i = 0; i < 4; ++i) {
        Eigen::VectorXd x(3);
        x << 1.0, stream.normal(), stream.normal();
        std::vector<Eigen::VectorXd> times(3);
        for (int p = 0; p < 3; ++p) {
            const int n = 2 + stream.uniform_int(5);
            std::vector<double> draws(static_cast<std::size_t>(n));
            for (double& t : draws) t = 6.0 * stream.uniform();
            std::sort(draws.begin(), draws.end());
            times[static_cast<std::size_t>(p)] = Eigen::Map<Eigen::VectorXd>(draws.data(), n);
        }
        auto [patient, latent] = sample_patient(params, x, times, stream);
        patient.id = "gc-" + std::to_string(i);
        patients.push_back(patient);
        LocalVariational local = init_local(params, patient);
        // Wander away from the prior moments so no gradient is trivially zero.
        const LocalPacking packing(params, patient);
        Eigen::VectorXd coords = packing.pack(local);
        for (Eigen::Index k = 0; k < coords.size(); ++k) coords[k] += 0.1 * stream.normal();
        locals.push_back(packing.unpack(coords));
    }

    const double worst = gradient_max_rel_error(params, patients, locals, 1e-5);
    std::cout << "max relative gradient error: " << worst << "\n";
    if (worst < 1e-5) {
        std::cout << "gradcheck PASS\n";
        return 0;
    }
    std::cout << "gradcheck FAIL (tolerance 1e-5)\n";
    return 1;
}

}  // namespace trajmix
