#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trajmix/runner.hpp"

namespace {

trajmix::AppConfig load_config_or_default(const std::string& path) {
    if (path.empty()) {
        trajmix::AppConfig cfg;
        cfg.model.variables = {{"egfr", false}};
        cfg.model.subpop_counts = {4};
        cfg.preprocess.roster = cfg.model.variables;
        cfg.config_hash = trajmix::fnv1a_hex("");
        return cfg;
    }
    return trajmix::load_app_config(path);
}

std::vector<trajmix::TimeBin> parse_bins_flag(const std::vector<std::string>& specs) {
    std::vector<trajmix::TimeBin> bins;
    for (const std::string& spec : specs) {
        const auto colon = spec.find(':');
        if (colon == std::string::npos)
            throw CLI::ValidationError("--horizon-bins", "expected lo:hi, got '" + spec + "'");
        bins.push_back({std::stod(spec.substr(0, colon)), std::stod(spec.substr(colon + 1))});
    }
    return bins;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trajmix: latent-cluster Gaussian-process trajectories for sparse "
                 "multivariate longitudinal data"};
    app.require_subcommand(1);

    std::string config_path, out_dir, cohort_dir, snapshot_path, demographics_file;
    std::vector<std::string> lab_files, bin_specs;
    std::uint64_t seed = 0;
    int n = 100, workers = 0, samples = 0, batch = 0, epochs = 0;
    double truncate_time = 1.0;
    bool strict = false, log_acr = false, dump_samples = false;

    CLI::App* sim = app.add_subcommand("simulate", "sample a synthetic cohort");
    sim->add_option("--config", config_path, "TOML run config");
    sim->add_option("--out", out_dir, "output directory")->required();
    sim->add_option("--n", n, "number of patients")->required();
    sim->add_option("--seed", seed, "root seed")->required();
    sim->add_option("--workers", workers, "worker threads");

    CLI::App* pre = app.add_subcommand("preprocess", "build a cohort from lab CSVs");
    pre->add_option("--config", config_path, "TOML run config")->required();
    pre->add_option("--labs", lab_files, "long-format lab CSV files")->required();
    pre->add_option("--demographics", demographics_file, "demographics CSV")->required();
    pre->add_option("--out", out_dir, "output directory")->required();
    pre->add_flag("--strict", strict, "abort on malformed rows");
    pre->add_flag("--log-acr", log_acr, "model ACR-like labs on the log scale");

    CLI::App* fit_cmd = app.add_subcommand("fit", "train on a cohort archive");
    fit_cmd->add_option("--config", config_path, "TOML run config")->required();
    fit_cmd->add_option("--cohort", cohort_dir, "cohort archive directory")->required();
    fit_cmd->add_option("--out", out_dir, "output directory")->required();
    fit_cmd->add_option("--seed", seed, "root seed")->required();
    fit_cmd->add_option("--batch", batch, "batch size override");
    fit_cmd->add_option("--epochs", epochs, "epoch budget override");
    fit_cmd->add_option("--workers", workers, "worker threads");

    CLI::App* pred = app.add_subcommand("predict", "forecast from a model snapshot");
    pred->add_option("--config", config_path, "TOML run config");
    pred->add_option("--snapshot", snapshot_path, "model snapshot JSON")->required();
    pred->add_option("--cohort", cohort_dir, "cohort archive directory")->required();
    pred->add_option("--truncate", truncate_time, "history cutoff in years")->required();
    pred->add_option("--horizon-bins", bin_specs, "forecast bins as lo:hi pairs");
    pred->add_option("--samples", samples, "posterior-predictive draws per target");
    pred->add_option("--out", out_dir, "output directory")->required();
    pred->add_option("--seed", seed, "root seed");
    pred->add_option("--workers", workers, "worker threads");
    pred->add_flag("--dump-samples", dump_samples, "write every draw in long format");

    CLI::App* eval = app.add_subcommand("evaluate", "cross-validated benchmark with baseline");
    eval->add_option("--config", config_path, "TOML run config")->required();
    eval->add_option("--cohort", cohort_dir, "cohort archive directory")->required();
    eval->add_option("--out", out_dir, "output directory")->required();
    eval->add_option("--seed", seed, "root seed")->required();
    eval->add_option("--workers", workers, "worker threads");

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    grad->add_option("--seed", seed, "root seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        trajmix::AppConfig cfg = load_config_or_default(config_path);
        if (sim->parsed()) return trajmix::cmd_simulate(cfg, out_dir, n, seed, workers);
        if (pre->parsed())
            return trajmix::cmd_preprocess(cfg, lab_files, demographics_file, out_dir, strict,
                                           log_acr);
        if (fit_cmd->parsed()) {
            if (batch > 0) cfg.fit.batch_size = batch;
            if (epochs > 0) cfg.fit.max_epochs = epochs;
            return trajmix::cmd_fit(cfg, cohort_dir, out_dir, seed, workers);
        }
        if (pred->parsed()) {
            std::vector<trajmix::TimeBin> bins =
                bin_specs.empty() ? cfg.protocol.bins : parse_bins_flag(bin_specs);
            const int n_samples = samples > 0 ? samples : cfg.protocol.n_samples;
            return trajmix::cmd_predict(cfg, snapshot_path, cohort_dir, truncate_time, bins,
                                        n_samples, out_dir, dump_samples, seed, workers);
        }
        if (eval->parsed()) return trajmix::cmd_evaluate(cfg, cohort_dir, out_dir, seed, workers);
        if (grad->parsed()) return trajmix::cmd_gradcheck(seed);
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 2;
}
