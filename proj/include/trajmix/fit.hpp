#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trajmix/elbo.hpp"
#include "trajmix/local_state.hpp"
#include "trajmix/model.hpp"
#include "trajmix/rng.hpp"

namespace trajmix {

/// RMSProp accumulator over one flat coordinate vector.
struct OptimizerState {
    Eigen::VectorXd sq_grad_avg;  // r, elementwise >= 0
    double decay = 0.9;           // rho
    double step = 0.01;           // eta
    double epsilon = 1e-8;
    std::int64_t iterations = 0;

    static OptimizerState make(int size, double decay, double step, double epsilon);
    /// r <- rho r + (1 - rho) g^2, returns eta * g / (sqrt(r) + eps).
    Eigen::VectorXd update(const Eigen::VectorXd& grad);
};

struct FitOptions {
    int batch_size = 256;
    int max_epochs = 50;
    int local_iters = 15;          // local refinement sweeps per global step
    double tol = 1e-6;             // relative ELBO change for convergence
    std::uint64_t seed = 0;
    double step = 0.01;            // RMSProp eta
    double decay = 0.9;            // RMSProp rho
    double epsilon = 1e-8;
    double prior_sd = 10.0;
    int eval_subsample = 2000;     // patients used for the convergence ELBO
    int convergence_window = 5;    // epochs between convergence comparisons
    int workers = 0;               // 0 = hardware concurrency
    double local_step = 0.05;      // initial local line-search scale
    int checkpoint_every = 0;      // epochs; 0 disables
    std::string checkpoint_dir;
    int freeze_scale_epochs = 0;   // keep kernel/noise scales fixed this long
};

enum class LocalStatus { kConverged, kMaxIters, kStalled };

struct LocalUpdateResult {
    LocalVariational local;
    double elbo_before = 0.0;
    double elbo_after = 0.0;
    LocalStatus status = LocalStatus::kMaxIters;
};

/// Line-searched, RMSProp-scaled gradient ascent on one patient's variational
/// coordinates with the globals held fixed. The per-patient objective never
/// decreases across the call.
LocalUpdateResult local_update(const ModelParams& params, const PatientContext& ctx,
                               const LocalVariational& local, int iters,
                               double initial_step = 0.05);

/// One stochastic parameter step from a batch: per-patient gradients scaled by
/// N_total / batch size, plus the parameter prior gradient, pushed through
/// RMSProp. Returns the batch ELBO estimate used for the step.
double global_update(ModelParams& params, const std::vector<const PatientContext*>& batch,
                     const std::vector<const LocalVariational*>& batch_locals,
                     OptimizerState& state, int n_total, double prior_sd, int workers,
                     const std::vector<int>* frozen_coords = nullptr);

struct TraceRow {
    int epoch = 0;
    int step = 0;
    double elbo_estimate = 0.0;
    double wall_time_seconds = 0.0;
};

struct FitResult {
    ModelParams params;
    std::vector<LocalVariational> locals;
    std::vector<TraceRow> trace;
    int epochs_run = 0;
    bool converged = false;
};

/// Data-driven starting point: zero fixed effects and cluster weights, uniform
/// mixing, per-variable k-means over smoothed observed curves for the
/// subpopulation coefficients, and an even split of the empirical variance
/// between signal and noise.
ModelParams init_params(const std::vector<PatientRecord>& patients, const ModelConfig& config,
                        const RngFactory& rng);

/// Full training loop: alternating local refinement sweeps and stochastic
/// global steps until the ELBO stabilizes or the epoch budget runs out.
/// Warm starts pass the previous stage's parameters and locals.
FitResult fit(const std::vector<PatientRecord>& patients, const ModelConfig& config,
              const FitOptions& options, const RngFactory& rng,
              const std::optional<ModelParams>& initial = std::nullopt,
              const std::vector<LocalVariational>* initial_locals = nullptr);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

}  // namespace trajmix
