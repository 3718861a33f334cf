#pragma once

#include <string>
#include <vector>

#include "trajmix/fit.hpp"
#include "trajmix/model.hpp"
#include "trajmix/predict.hpp"

namespace trajmix {

struct TimeBin {
    double lo = 0.0;
    double hi = 0.0;  // interval (lo, hi]
    std::string label() const;
};

struct EvalProtocol {
    int n_folds = 10;
    std::vector<double> truncations{1.0, 2.0, 4.0};
    std::vector<TimeBin> bins{{1.0, 2.0}, {2.0, 4.0}, {4.0, 8.0}, {8.0, 19.0}};
    std::uint64_t seed = 0;
    int n_samples = 1000;
    int heldout_iters = 400;

    void validate() const;
};

/// Disjoint near-equal test folds; every index lands in exactly one.
/// k = 1 degenerates to train = test = everything (smoke-test mode).
std::vector<std::pair<std::vector<int>, std::vector<int>>> kfold_split(int n, int k,
                                                                       std::uint64_t seed);

struct Target {
    double time = 0.0;
    double value = 0.0;
    int bin = -1;  // protocol bin index
};

struct TruncatedPatient {
    PatientRecord history;                     // observations with t <= t_trunc
    std::vector<std::vector<Target>> targets;  // per variable, observations after t_trunc
    bool has_targets = false;
};

TruncatedPatient truncate_history(const PatientRecord& patient, double t_trunc,
                                  const std::vector<TimeBin>& bins);

/// Mean absolute error per (variable, bin) for one patient's forecasts;
/// NaN where the patient has no targets in the bin.
Eigen::MatrixXd patient_mae(const std::vector<Eigen::VectorXd>& predictions,
                            const std::vector<std::vector<Target>>& targets, int n_bins);

struct TTestResult {
    double t = 0.0;
    double p = 0.5;
    bool testable = false;
};

/// One-sided paired t-test with alternative mean(a) < mean(b). All-zero
/// differences report p = 0.5; single pairs are not testable.
TTestResult paired_ttest_one_sided(const std::vector<double>& errors_a,
                                   const std::vector<double>& errors_b);

/// Cumulative significance marks at the .05/.01/.001/.0001 levels.
std::string significance_stars(double p);

/// Independent single-variable fits, one per lab, sharing the inference path.
std::vector<ModelParams> univariate_baseline(const std::vector<PatientRecord>& patients,
                                             const ModelConfig& config, const FitOptions& options,
                                             const RngFactory& rng);

/// Restriction of a config / patient set to one variable.
ModelConfig restrict_config(const ModelConfig& config, int var);
PatientRecord restrict_patient(const PatientRecord& patient, int var);

struct ReportCell {
    std::string lab;
    std::string model;  // "multivariate" or "univariate"
    double truncation = 0.0;
    int bin_index = -1;
    std::vector<double> fold_maes;
    double mae_mean = 0.0;
    double mae_sd = 0.0;
    double p_value = std::numeric_limits<double>::quiet_NaN();  // multivariate rows only
    std::string stars;
};

struct EvaluationReport {
    std::vector<std::string> labs;
    std::vector<double> truncations;
    std::vector<TimeBin> bins;
    std::vector<ReportCell> cells;
    std::uint64_t seed = 0;
    std::string config_hash;
};

/// Per-patient error table for one model arm over one test set: rows are
/// patients, columns are (lab, truncation, bin) flattened; NaN marks cells
/// without targets. Univariate arms pass one parameter set per lab.
Eigen::MatrixXd evaluate_arm(const std::vector<ModelParams>& arm_params, bool univariate,
                             const std::vector<PatientRecord>& test_patients,
                             const EvalProtocol& protocol, const RngFactory& rng, int fold,
                             int workers);

/// Full benchmark: per fold, fits the multivariate model and the per-lab
/// baseline, forecasts truncated test patients, and assembles the MAE /
/// significance report.
EvaluationReport run_benchmark(const std::vector<PatientRecord>& patients,
                               const ModelConfig& config, const EvalProtocol& protocol,
                               const FitOptions& fit_options, const RngFactory& rng);

void write_report_csv(const EvaluationReport& report, const std::string& path);
std::string render_report_table(const EvaluationReport& report);

}  // namespace trajmix
