#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "trajmix/kernel.hpp"
#include "trajmix/rng.hpp"
#include "trajmix/spline.hpp"

namespace trajmix {

inline constexpr int kLinearDim = 2;  // random intercept + slope per variable

struct VariableSpec {
    std::string name;
    bool log_scale = false;  // stored/modeled on the natural-log scale
};

/// Dimensions and naming for one model instance.
struct ModelConfig {
    std::vector<VariableSpec> variables;  // size P
    int num_clusters = 6;                 // G
    std::vector<int> subpop_counts;       // G_p per variable
    int covariate_dim = 0;                // q, including intercept
    int spline_degree = 3;
    int interior_knot_count = 8;          // evenly spaced over the training span

    int num_variables() const { return static_cast<int>(variables.size()); }
    int rand_eff_dim() const { return num_variables() * kLinearDim; }
    int basis_dim() const { return interior_knot_count + spline_degree + 1; }
    void validate() const;
};

/// Parameters for one longitudinal variable.
struct VarParams {
    Eigen::VectorXd fixed_effect;   // length q; covariate-driven level shift
    Eigen::MatrixXd subpop_curves;  // G_p x d_z spline coefficients, one row per subpopulation
    Eigen::MatrixXd subpop_mix;     // G_p x G; column g is the subpopulation law under cluster g
    OUKernelParams kernel;
    double noise_var = 1.0;
};

/// All global parameters plus the shared spline basis.
struct ModelParams {
    std::vector<VarParams> vars;
    Eigen::MatrixXd cluster_weights;  // G x q; row 0 pinned to zero
    Eigen::MatrixXd rand_eff_cov;     // (P * 2) x (P * 2), SPD, variable-major blocks
    SplineBasis basis;
    double train_lo = 0.0;  // observation-time span of the training cohort
    double train_hi = 1.0;

    ModelConfig config;  // dimensions + variable roster

    void validate() const;
};

/// One individual's covariates and irregular observation sequences.
struct VarSeries {
    Eigen::VectorXd times;   // years, ascending
    Eigen::VectorXd values;  // same length as times
    Eigen::Index size() const { return times.size(); }
};

struct PatientRecord {
    std::string id;
    Eigen::VectorXd covariates;  // length q, intercept included
    std::vector<VarSeries> labs;  // size P; entries may be empty

    void validate(const ModelConfig& config) const;
};

/// Ground-truth latent variables for one patient (used when simulating).
struct LatentState {
    int cluster = 0;                        // c in [0, G)
    std::vector<int> subpops;               // z_p in [0, G_p)
    Eigen::VectorXd rand_effects;           // length P * 2, variable-major
    std::vector<Eigen::VectorXd> deviations;  // f_p at that variable's observation times
};

/// Mean trajectory for variable p at the given times:
/// fixed effect + subpopulation curve + linear random effect + deviation.
/// Passing an empty deviation treats it as zero.
Eigen::VectorXd mean_function(const ModelParams& params, const Eigen::VectorXd& covariates,
                              int subpop, const Eigen::Vector2d& rand_eff,
                              const Eigen::VectorXd& deviation, const Eigen::VectorXd& times,
                              int var);

/// softmax(W x); entry 0 is the zero-weight reference cluster.
Eigen::VectorXd cluster_prior(const ModelParams& params, const Eigen::VectorXd& covariates);

/// Column `cluster` of the variable's subpopulation mixing matrix.
Eigen::VectorXd subpop_conditional(const ModelParams& params, int var, int cluster);

/// log p(c) + log p(b) + sum_p [log p(z_p | c) + log p(f_p) + sum_j log N(y | mu, sigma^2)].
/// Excludes the parameter prior.
double joint_log_density(const ModelParams& params, const PatientRecord& patient,
                         const LatentState& latent);

/// Ancestral draw c -> z -> b, f -> y at caller-supplied observation times.
std::pair<PatientRecord, LatentState> sample_patient(const ModelParams& params,
                                                     const Eigen::VectorXd& covariates,
                                                     const std::vector<Eigen::VectorXd>& times,
                                                     Rng& rng);

/// Exact log marginal likelihood by enumerating (c, z) and integrating the
/// Gaussian latents in closed form. Only valid for small instances
/// (total observations <= 200 and G * prod_p G_p <= 1e4).
double exact_log_evidence(const ModelParams& params, const PatientRecord& patient);

}  // namespace trajmix
