#pragma once

#include <Eigen/Dense>
#include <vector>

#include "trajmix/local_state.hpp"
#include "trajmix/model.hpp"

namespace trajmix {

/// Natural-space gradient of the objective with respect to the global
/// parameters, accumulated per patient and chained into packed coordinates
/// at the end (mixing matrices are already in logit space; the random-effect
/// covariance is kept in Sigma space until packing).
struct GlobalGrad {
    std::vector<Eigen::VectorXd> fixed_effect;
    std::vector<Eigen::MatrixXd> subpop_curves;
    std::vector<Eigen::MatrixXd> mix_logits;
    std::vector<double> log_amplitude;
    std::vector<double> log_lengthscale;
    std::vector<double> log_noise_var;
    Eigen::MatrixXd cluster_weights;  // full G x q; row 0 dropped at packing
    Eigen::MatrixXd rand_eff_cov;     // symmetric, Sigma space

    static GlobalGrad zero(const ModelConfig& config, int basis_dim);
    void add(const GlobalGrad& other);
    void scale(double s);
    /// Chains Sigma-space and pinned blocks into the packed coordinate layout.
    Eigen::VectorXd pack(const ModelParams& params) const;
};

/// One patient's ELBO contribution, with optional gradients.
struct PatientEval {
    double elbo = 0.0;
    Eigen::VectorXd local_grad;  // packed local coordinates; empty unless requested
    GlobalGrad global_grad;      // zero-sized unless requested
};

PatientEval eval_patient(const ModelParams& params, const PatientContext& ctx,
                         const LocalVariational& local, bool want_local_grad,
                         bool want_global_grad);

/// Log prior over the point-estimated parameters: independent normals with
/// standard deviation `prior_sd` on fixed effects, curve coefficients and the
/// free cluster-weight rows; flat elsewhere.
double param_log_prior(const ModelParams& params, double prior_sd);
GlobalGrad param_log_prior_grad(const ModelParams& params, double prior_sd);

/// Full ELBO over a set of patients.
double elbo(const ModelParams& params, const std::vector<PatientRecord>& patients,
            const std::vector<LocalVariational>& locals, bool include_param_prior,
            double prior_sd = 10.0);

struct ElboGradients {
    Eigen::VectorXd global;                // packed global coordinates
    std::vector<Eigen::VectorXd> locals;   // packed local coordinates per patient
};

/// Exact gradients of elbo() in the unconstrained parameterization.
ElboGradients elbo_gradients(const ModelParams& params,
                             const std::vector<PatientRecord>& patients,
                             const std::vector<LocalVariational>& locals,
                             bool include_param_prior, double prior_sd = 10.0);

}  // namespace trajmix
