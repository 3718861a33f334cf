#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajmix/config.hpp"

namespace trajmix {

/// CLI command bodies. Each writes its artifacts plus a manifest.json
/// (command, config hash, seed, inputs; the timestamp is the only
/// run-dependent field) and returns a process exit status.

int cmd_simulate(const AppConfig& cfg, const std::string& out_dir, int n, std::uint64_t seed,
                 int workers);

int cmd_preprocess(const AppConfig& cfg, const std::vector<std::string>& lab_files,
                   const std::string& demographics_file, const std::string& out_dir, bool strict,
                   bool log_acr);

int cmd_fit(const AppConfig& cfg, const std::string& cohort_dir, const std::string& out_dir,
            std::uint64_t seed, int workers);

int cmd_predict(const AppConfig& cfg, const std::string& snapshot_path,
                const std::string& cohort_dir, double truncate_time,
                const std::vector<TimeBin>& horizon_bins, int n_samples,
                const std::string& out_dir, bool dump_samples, std::uint64_t seed, int workers);

int cmd_evaluate(const AppConfig& cfg, const std::string& cohort_dir, const std::string& out_dir,
                 std::uint64_t seed, int workers);

/// Finite-difference audit of the analytic gradients on a built-in small
/// instance; prints the worst relative error and fails above 1e-5.
int cmd_gradcheck(std::uint64_t seed);

/// Shared by gradcheck and the acceptance suite: max relative error between
/// analytic and central-difference ELBO gradients over every coordinate.
double gradient_max_rel_error(const ModelParams& params,
                              const std::vector<PatientRecord>& patients,
                              const std::vector<LocalVariational>& locals, double h);

}  // namespace trajmix
