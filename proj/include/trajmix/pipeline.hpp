#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trajmix/model.hpp"

namespace trajmix {

/// One validated long-format lab row. Times live on a continuous year axis;
/// calendar rows additionally carry (year, month) for month binning.
struct RawLabEvent {
    std::string patient_id;
    std::string lab_code;
    double time_years = 0.0;
    bool calendar = false;
    int year = 0;
    int month = 0;  // 1-12
    double value = 0.0;
};

struct ParseOptions {
    bool strict = false;  // strict: malformed rows abort with the line number
};

struct ParseResult {
    std::vector<RawLabEvent> events;
    long dropped_unknown_code = 0;
    long skipped_malformed = 0;
};

/// Reads `patient_id,lab_code,time,value` CSVs. The time column is either an
/// ISO-8601 date or a fractional year; the format is auto-detected per file
/// and may not be mixed within one file. Rows with codes outside the roster
/// are dropped and counted.
ParseResult parse_labs(const std::vector<std::string>& paths,
                       const std::vector<std::string>& roster, const ParseOptions& options = {});

/// Continuous-axis day count for a civil date, as fractional years.
double date_to_years(int year, int month, int day);

struct BinnedPoint {
    double time = 0.0;  // bin midpoint
    double value = 0.0;
};

/// Collapses one patient-variable event list (sorted by time) to one point per
/// non-empty month bin: calendar rows bin by (year, month), fractional rows by
/// 1/12-year slots. The bin value is the arithmetic mean.
std::vector<BinnedPoint> monthly_bin(const std::vector<RawLabEvent>& events);

/// Shifts all series so t = 0 sits at the first primary-variable bin strictly
/// below the threshold. Returns the origin on the input axis, or nullopt when
/// no bin qualifies (patient ineligible).
std::optional<double> align_origin(std::vector<std::vector<BinnedPoint>>& series, int egfr_index,
                                   double threshold);

struct CohortOptions {
    std::vector<VariableSpec> roster;  // modeled variables, in order
    std::string egfr_code = "egfr";
    std::string creatinine_code = "creatinine";
    int min_creatinine_count = 5;
    double egfr_threshold = 60.0;
    double min_separation_days = 90.0;
    bool strict = false;
};

struct DropRecord {
    std::string patient_id;
    std::string reason;
};

/// Raw-value cohort filters: at least `min_creatinine_count` creatinine rows,
/// and two sub-threshold primary values separated by at least the given
/// number of days. Returns pass/fail with a reason for failures.
std::optional<std::string> cohort_filter_reason(const std::vector<RawLabEvent>& patient_events,
                                                const CohortOptions& options);

struct Demographics {
    std::string patient_id;
    double age = 0.0;
    std::string gender;
    std::string race;
    bool hypertension = false;
    bool diabetes = false;
};

std::vector<Demographics> parse_demographics(const std::string& path);

struct CovariateLayout {
    std::vector<std::string> names;  // intercept, age, gender, race dummies, htn, dm
    double age_mean = 0.0;
    double age_sd = 1.0;
    std::vector<std::string> race_levels;  // reference level first
};

/// Fixed-order covariate vectors: intercept, standardized age, gender
/// indicator, race dummies against the first (sorted) level, hypertension and
/// diabetes indicators. Throws when a requested patient has no row.
std::pair<std::vector<Eigen::VectorXd>, CovariateLayout> build_covariates(
    const std::vector<Demographics>& rows, const std::vector<std::string>& patient_ids);

/// A preprocessed cohort plus its conventions and provenance.
struct CohortDataset {
    std::vector<PatientRecord> patients;
    std::vector<VariableSpec> variables;
    CovariateLayout covariates;
    std::string origin_rule = "first-egfr-bin-below-60";
    double bin_width_years = 1.0 / 12.0;
    std::vector<std::string> source_files;
    std::map<std::string, long> drop_counts;
};

struct CohortBuild {
    CohortDataset dataset;
    std::vector<DropRecord> dropped;
};

/// Full preprocessing pass: parse, filter, log-transform flagged variables,
/// bin, align, attach covariates.
CohortBuild build_cohort(const std::vector<std::string>& lab_files,
                         const std::string& demographics_file, const CohortOptions& options);

/// Cohort archive: patients.jsonl + covariates.csv + manifest.json in one
/// directory; ground-truth latents ride in truth.jsonl when present.
void save_cohort(const CohortDataset& dataset, const std::string& dir,
                 const std::string& config_hash = "", std::uint64_t seed = 0,
                 const std::vector<LatentState>* truth = nullptr);
CohortDataset load_cohort(const std::string& dir);
std::vector<LatentState> load_ground_truth(const std::string& dir);

}  // namespace trajmix
