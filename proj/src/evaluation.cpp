#include "trajmix/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "trajmix/parallel.hpp"

namespace trajmix {

std::string TimeBin::label() const {
    auto fmt = [](double v) {
        std::ostringstream out;
        out << v;
        return out.str();
    };
    return "(" + fmt(lo) + "," + fmt(hi) + "]";
}

void EvalProtocol::validate() const {
    if (n_folds < 1) throw std::invalid_argument("fold count must be >= 1");
    if (truncations.empty() || bins.empty())
        throw std::invalid_argument("protocol needs truncations and bins");
    for (const double t : truncations)
        if (!(t > 0.0)) throw std::invalid_argument("truncation times must be positive");
    for (std::size_t i = 0; i < bins.size(); ++i) {
        if (!(bins[i].lo < bins[i].hi)) throw std::invalid_argument("bins must have lo < hi");
        if (i > 0 && bins[i].lo < bins[i - 1].hi)
            throw std::invalid_argument("bins must be disjoint and ascending");
    }
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> kfold_split(int n, int k,
                                                                       std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("fold count must be >= 1");
    if (k == 1) {
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        return {{all, all}};
    }
    if (n < k) throw std::invalid_argument("need at least as many patients as folds");

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);

    std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
    for (int i = 0; i < n; ++i) folds[static_cast<std::size_t>(i % k)].push_back(order[i]);

    std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
    for (int f = 0; f < k; ++f) {
        std::vector<int> test = folds[static_cast<std::size_t>(f)];
        std::sort(test.begin(), test.end());
        std::vector<int> train;
        for (int g = 0; g < k; ++g) {
            if (g == f) continue;
            train.insert(train.end(), folds[static_cast<std::size_t>(g)].begin(),
                         folds[static_cast<std::size_t>(g)].end());
        }
        std::sort(train.begin(), train.end());
        out.emplace_back(std::move(train), std::move(test));
    }
    return out;
}

TruncatedPatient truncate_history(const PatientRecord& patient, double t_trunc,
                                  const std::vector<TimeBin>& bins) {
    if (!(t_trunc > 0.0)) throw std::invalid_argument("truncation time must be positive");
    TruncatedPatient out;
    out.history.id = patient.id;
    out.history.covariates = patient.covariates;
    out.history.labs.resize(patient.labs.size());
    out.targets.resize(patient.labs.size());

    for (std::size_t p = 0; p < patient.labs.size(); ++p) {
        const VarSeries& series = patient.labs[p];
        std::vector<double> h_t, h_y;
        for (Eigen::Index j = 0; j < series.size(); ++j) {
            const double t = series.times[j];
            if (t <= t_trunc) {  // closed boundary: t == t_trunc stays history
                h_t.push_back(t);
                h_y.push_back(series.values[j]);
                continue;
            }
            int bin = -1;
            for (std::size_t b = 0; b < bins.size(); ++b) {
                if (t > bins[b].lo && t <= bins[b].hi) {
                    bin = static_cast<int>(b);
                    break;
                }
            }
            if (bin >= 0) {
                out.targets[p].push_back({t, series.values[j], bin});
                out.has_targets = true;
            }
        }
        out.history.labs[p].times =
            Eigen::Map<Eigen::VectorXd>(h_t.data(), static_cast<Eigen::Index>(h_t.size()));
        out.history.labs[p].values =
            Eigen::Map<Eigen::VectorXd>(h_y.data(), static_cast<Eigen::Index>(h_y.size()));
    }
    return out;
}

Eigen::MatrixXd patient_mae(const std::vector<Eigen::VectorXd>& predictions,
                            const std::vector<std::vector<Target>>& targets, int n_bins) {
    const std::size_t p_count = targets.size();
    Eigen::MatrixXd mae = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(p_count), n_bins,
                                                    std::numeric_limits<double>::quiet_NaN());
    for (std::size_t p = 0; p < p_count; ++p) {
        if (predictions[p].size() != static_cast<Eigen::Index>(targets[p].size()))
            throw std::invalid_argument("prediction/target count mismatch");
        Eigen::VectorXd sums = Eigen::VectorXd::Zero(n_bins);
        Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_bins);
        for (std::size_t j = 0; j < targets[p].size(); ++j) {
            const Target& target = targets[p][j];
            sums[target.bin] += std::abs(predictions[p][static_cast<Eigen::Index>(j)] -
                                         target.value);
            counts[target.bin] += 1;
        }
        for (int b = 0; b < n_bins; ++b)
            if (counts[b] > 0)
                mae(static_cast<Eigen::Index>(p), b) = sums[b] / counts[b];
    }
    return mae;
}

TTestResult paired_ttest_one_sided(const std::vector<double>& errors_a,
                                   const std::vector<double>& errors_b) {
    if (errors_a.size() != errors_b.size())
        throw std::invalid_argument("paired t-test needs equal-length vectors");
    const std::size_t n = errors_a.size();
    TTestResult result;
    if (n < 2) return result;  // not testable

    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += errors_a[i] - errors_b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = errors_a[i] - errors_b[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    result.testable = true;
    if (sd == 0.0) {
        if (mean == 0.0) {
            result.t = 0.0;
            result.p = 0.5;  // degenerate: identical pairs
        } else {
            result.t = mean < 0.0 ? -std::numeric_limits<double>::infinity()
                                  : std::numeric_limits<double>::infinity();
            result.p = mean < 0.0 ? 0.0 : 1.0;
        }
        return result;
    }
    result.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    result.p = boost::math::cdf(dist, result.t);  // alternative: a < b
    return result;
}

std::string significance_stars(double p) {
    if (std::isnan(p)) return "";
    if (p < 1e-4) return "***";
    if (p < 1e-3) return "**";
    if (p < 1e-2) return "*";
    if (p < 5e-2) return ".";
    return "";
}

ModelConfig restrict_config(const ModelConfig& config, int var) {
    ModelConfig out = config;
    out.variables = {config.variables[static_cast<std::size_t>(var)]};
    out.subpop_counts = {config.subpop_counts[static_cast<std::size_t>(var)]};
    return out;
}

PatientRecord restrict_patient(const PatientRecord& patient, int var) {
    PatientRecord out;
    out.id = patient.id;
    out.covariates = patient.covariates;
    out.labs = {patient.labs[static_cast<std::size_t>(var)]};
    return out;
}

std::vector<ModelParams> univariate_baseline(const std::vector<PatientRecord>& patients,
                                             const ModelConfig& config, const FitOptions& options,
                                             const RngFactory& rng) {
    std::vector<ModelParams> out;
    for (int p = 0; p < config.num_variables(); ++p) {
        std::vector<PatientRecord> restricted;
        restricted.reserve(patients.size());
        for (const PatientRecord& patient : patients)
            restricted.push_back(restrict_patient(patient, p));
        const RngFactory lab_rng(rng.stream("baseline-lab", static_cast<std::uint64_t>(p)).next_u64());
        out.push_back(fit(restricted, restrict_config(config, p), options, lab_rng).params);
    }
    return out;
}

Eigen::MatrixXd evaluate_arm(const std::vector<ModelParams>& arm_params, bool univariate,
                             const std::vector<PatientRecord>& test_patients,
                             const EvalProtocol& protocol, const RngFactory& rng, int fold,
                             int workers) {
    const int p_count = univariate ? static_cast<int>(arm_params.size())
                                   : arm_params.at(0).config.num_variables();
    const int n_truncs = static_cast<int>(protocol.truncations.size());
    const int n_bins = static_cast<int>(protocol.bins.size());
    Eigen::MatrixXd errors = Eigen::MatrixXd::Constant(
        static_cast<Eigen::Index>(test_patients.size()),
        static_cast<Eigen::Index>(p_count) * n_truncs * n_bins,
        std::numeric_limits<double>::quiet_NaN());

    HeldoutOptions heldout;
    heldout.iters = protocol.heldout_iters;

    parallel_for(test_patients.size(), workers, [&](std::size_t i) {
        const PatientRecord& patient = test_patients[i];
        for (int ti = 0; ti < n_truncs; ++ti) {
            const TruncatedPatient split =
                truncate_history(patient, protocol.truncations[static_cast<std::size_t>(ti)],
                                 protocol.bins);
            if (!split.has_targets) continue;
            const std::uint64_t forecast_seed =
                rng.stream("forecast", static_cast<std::uint64_t>(fold),
                           static_cast<std::uint64_t>(i) * 101 + static_cast<std::uint64_t>(ti))
                    .next_u64();

            std::vector<std::vector<Eigen::VectorXd>> preds(
                static_cast<std::size_t>(p_count));
            if (univariate) {
                for (int p = 0; p < p_count; ++p) {
                    if (split.targets[static_cast<std::size_t>(p)].empty()) continue;
                    const PatientRecord single = restrict_patient(split.history, p);
                    const ModelParams& mp = arm_params[static_cast<std::size_t>(p)];
                    const LocalVariational local = fit_heldout_local(mp, single, heldout);
                    ForecastRequest request;
                    const std::vector<Target>& tg = split.targets[static_cast<std::size_t>(p)];
                    Eigen::VectorXd times(static_cast<Eigen::Index>(tg.size()));
                    for (Eigen::Index j = 0; j < times.size(); ++j)
                        times[j] = tg[static_cast<std::size_t>(j)].time;
                    request.target_times = {times};
                    request.n_samples = protocol.n_samples;
                    request.seed = forecast_seed + static_cast<std::uint64_t>(p);
                    const Forecast forecast = predictive_draws(mp, local, single, request);
                    preds[static_cast<std::size_t>(p)] = point_forecast(forecast);
                }
            } else {
                const ModelParams& mp = arm_params.at(0);
                const LocalVariational local = fit_heldout_local(mp, split.history, heldout);
                ForecastRequest request;
                request.target_times.resize(static_cast<std::size_t>(p_count));
                for (int p = 0; p < p_count; ++p) {
                    const std::vector<Target>& tg = split.targets[static_cast<std::size_t>(p)];
                    Eigen::VectorXd times(static_cast<Eigen::Index>(tg.size()));
                    for (Eigen::Index j = 0; j < times.size(); ++j)
                        times[j] = tg[static_cast<std::size_t>(j)].time;
                    request.target_times[static_cast<std::size_t>(p)] = times;
                }
                request.n_samples = protocol.n_samples;
                request.seed = forecast_seed;
                const Forecast forecast = predictive_draws(mp, local, split.history, request);
                const std::vector<Eigen::VectorXd> all = point_forecast(forecast);
                for (int p = 0; p < p_count; ++p)
                    preds[static_cast<std::size_t>(p)] = {all[static_cast<std::size_t>(p)]};
            }

            // Per-variable MAE by bin for this truncation.
            std::vector<Eigen::VectorXd> flat_preds(static_cast<std::size_t>(p_count));
            for (int p = 0; p < p_count; ++p) {
                if (preds[static_cast<std::size_t>(p)].empty())
                    flat_preds[static_cast<std::size_t>(p)] = Eigen::VectorXd::Zero(
                        static_cast<Eigen::Index>(split.targets[static_cast<std::size_t>(p)].size()));
                else
                    flat_preds[static_cast<std::size_t>(p)] =
                        preds[static_cast<std::size_t>(p)].at(0);
            }
            const Eigen::MatrixXd mae = patient_mae(flat_preds, split.targets, n_bins);
            for (int p = 0; p < p_count; ++p)
                for (int b = 0; b < n_bins; ++b)
                    errors(static_cast<Eigen::Index>(i),
                           (static_cast<Eigen::Index>(p) * n_truncs + ti) * n_bins + b) =
                        mae(p, b);
        }
    });
    return errors;
}

namespace {

double nan_mean(const Eigen::VectorXd& column, int* count_out = nullptr) {
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < column.size(); ++i) {
        if (!std::isnan(column[i])) {
            sum += column[i];
            ++count;
        }
    }
    if (count_out != nullptr) *count_out = count;
    return count > 0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

EvaluationReport run_benchmark(const std::vector<PatientRecord>& patients,
                               const ModelConfig& config, const EvalProtocol& protocol,
                               const FitOptions& fit_options, const RngFactory& rng) {
    protocol.validate();
    config.validate();

    const int p_count = config.num_variables();
    const int n_truncs = static_cast<int>(protocol.truncations.size());
    const int n_bins = static_cast<int>(protocol.bins.size());
    const int n_cols = p_count * n_truncs * n_bins;

    const auto folds = kfold_split(static_cast<int>(patients.size()), protocol.n_folds,
                                   protocol.seed);

    // Pooled per-patient errors across folds (each patient tested once unless
    // n_folds == 1) and per-fold cell means.
    std::vector<Eigen::MatrixXd> fold_multi, fold_uni;
    std::vector<std::vector<double>> pooled_multi(static_cast<std::size_t>(n_cols));
    std::vector<std::vector<double>> pooled_uni(static_cast<std::size_t>(n_cols));

    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& [train_idx, test_idx] = folds[f];
        std::vector<PatientRecord> train, test;
        for (const int i : train_idx) train.push_back(patients[static_cast<std::size_t>(i)]);
        for (const int i : test_idx) test.push_back(patients[static_cast<std::size_t>(i)]);

        const RngFactory fold_rng(rng.stream("fold", static_cast<std::uint64_t>(f)).next_u64());
        const ModelParams multivariate = fit(train, config, fit_options, fold_rng).params;
        const std::vector<ModelParams> univariate =
            univariate_baseline(train, config, fit_options, fold_rng);

        const Eigen::MatrixXd err_multi =
            evaluate_arm({multivariate}, false, test, protocol, fold_rng, static_cast<int>(f),
                         fit_options.workers);
        const Eigen::MatrixXd err_uni = evaluate_arm(univariate, true, test, protocol, fold_rng,
                                                     static_cast<int>(f), fit_options.workers);
        fold_multi.push_back(err_multi);
        fold_uni.push_back(err_uni);

        for (Eigen::Index i = 0; i < err_multi.rows(); ++i) {
            for (int c = 0; c < n_cols; ++c) {
                const double a = err_multi(i, c);
                const double b = err_uni(i, c);
                if (!std::isnan(a) && !std::isnan(b)) {
                    pooled_multi[static_cast<std::size_t>(c)].push_back(a);
                    pooled_uni[static_cast<std::size_t>(c)].push_back(b);
                }
            }
        }
    }

    EvaluationReport report;
    for (const VariableSpec& spec : config.variables) report.labs.push_back(spec.name);
    report.truncations = protocol.truncations;
    report.bins = protocol.bins;
    report.seed = protocol.seed;

    for (int p = 0; p < p_count; ++p) {
        for (int ti = 0; ti < n_truncs; ++ti) {
            for (int b = 0; b < n_bins; ++b) {
                const int c = (p * n_truncs + ti) * n_bins + b;
                // Populated only when the bin extends beyond the truncation
                // and some patient produced targets there.
                std::vector<double> fm, fu;
                for (std::size_t f = 0; f < folds.size(); ++f) {
                    int count = 0;
                    const double mean_m = nan_mean(fold_multi[f].col(c), &count);
                    if (count > 0) {
                        fm.push_back(mean_m);
                        fu.push_back(nan_mean(fold_uni[f].col(c)));
                    }
                }
                if (fm.empty()) continue;

                auto mean_sd = [](const std::vector<double>& v) {
                    double mean = 0.0;
                    for (const double x : v) mean += x;
                    mean /= static_cast<double>(v.size());
                    double ss = 0.0;
                    for (const double x : v) ss += (x - mean) * (x - mean);
                    const double sd =
                        v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
                    return std::make_pair(mean, sd);
                };

                const TTestResult ttest = paired_ttest_one_sided(
                    pooled_multi[static_cast<std::size_t>(c)],
                    pooled_uni[static_cast<std::size_t>(c)]);

                ReportCell multi;
                multi.lab = config.variables[static_cast<std::size_t>(p)].name;
                multi.model = "multivariate";
                multi.truncation = protocol.truncations[static_cast<std::size_t>(ti)];
                multi.bin_index = b;
                multi.fold_maes = fm;
                std::tie(multi.mae_mean, multi.mae_sd) = mean_sd(fm);
                if (ttest.testable) {
                    multi.p_value = ttest.p;
                    multi.stars = significance_stars(ttest.p);
                }
                report.cells.push_back(std::move(multi));

                ReportCell uni;
                uni.lab = config.variables[static_cast<std::size_t>(p)].name;
                uni.model = "univariate";
                uni.truncation = protocol.truncations[static_cast<std::size_t>(ti)];
                uni.bin_index = b;
                uni.fold_maes = fu;
                std::tie(uni.mae_mean, uni.mae_sd) = mean_sd(fu);
                report.cells.push_back(std::move(uni));
            }
        }
    }
    return report;
}

}  // namespace trajmix
