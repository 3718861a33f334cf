#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "trajmix/fit.hpp"
#include "trajmix/local_state.hpp"
#include "trajmix/model.hpp"
#include "trajmix/mvn.hpp"

namespace trajmix {

struct HeldoutOptions {
    int iters = 400;
    double local_step = 0.05;
};

/// Learns the variational factors for a new patient against frozen globals.
LocalVariational fit_heldout_local(const ModelParams& params, const PatientRecord& patient,
                                   const HeldoutOptions& options = {});

/// Extends the deviation posterior of one variable to new times by
/// conditioning the GP on the observed times as pseudo-inputs:
/// mean = A mu_f, cov = K** - A (K_oo - Sigma_f) A^T with A = K*o K_oo^{-1}.
/// With no observations this is the prior at the targets.
GaussianDist extend_f(const ModelParams& params, const LocalVariational& local,
                      const PatientRecord& patient, int var, const Eigen::VectorXd& target_times);

struct ForecastRequest {
    std::vector<Eigen::VectorXd> target_times;  // per variable; entries may be empty
    int n_samples = 1000;
    std::uint64_t seed = 0;
};

struct VariableForecast {
    Eigen::VectorXd times;
    Eigen::VectorXd mean;       // sample mean of the posterior-predictive draws
    Eigen::VectorXd sd;         // sqrt(latent-mean variance + observation noise)
    Eigen::MatrixXd samples;    // n_samples x |times|, observation draws
};

struct Forecast {
    std::vector<VariableForecast> vars;
};

/// Posterior-predictive sampling: per draw, a subpopulation per variable from
/// its variational weights, a joint random-effect vector, deviations from the
/// conditional GP, then observation noise.
Forecast predictive_draws(const ModelParams& params, const LocalVariational& local,
                          const PatientRecord& patient, const ForecastRequest& request);

/// Per-variable predictive means (sample based).
std::vector<Eigen::VectorXd> point_forecast(const Forecast& forecast);

/// CSV rows (patient_id, variable, target_time, pred_mean, pred_sd). Values
/// for log-scale variables are reported back on the original scale when
/// back_transform is set.
void append_forecast_csv(std::string& out, const std::string& patient_id,
                         const ModelParams& params, const Forecast& forecast,
                         bool back_transform);
std::string forecast_csv_header();

/// Optional long-format dump of every sample.
void append_forecast_samples_csv(std::string& out, const std::string& patient_id,
                                 const ModelParams& params, const Forecast& forecast,
                                 bool back_transform);
std::string forecast_samples_csv_header();

}  // namespace trajmix
