#pragma once

#include <Eigen/Dense>
#include <vector>

#include "trajmix/model.hpp"

namespace trajmix {

/// Per-patient variational factors: categorical weights over the global
/// cluster and subpopulations, a Gaussian over the random effects, and a
/// Gaussian over each observed variable's deviation function.
struct LocalVariational {
    Eigen::VectorXd cluster_probs;              // length G, simplex
    std::vector<Eigen::VectorXd> subpop_probs;  // per variable, length G_p, simplex
    Eigen::VectorXd b_mean;                     // length P * 2
    Eigen::MatrixXd b_cov_factor;               // lower-triangular, positive diagonal
    std::vector<Eigen::VectorXd> f_mean;        // per variable, length n_ip
    std::vector<Eigen::MatrixXd> f_cov_factor;  // per variable, n_ip x n_ip

    void validate(const ModelConfig& config, const PatientRecord& patient) const;
};

/// Prior-moment initialization: cluster weights from the covariate prior,
/// subpopulation weights from the mixing matrix under those cluster weights,
/// random effects and deviations at their prior moments.
LocalVariational init_local(const ModelParams& params, const PatientRecord& patient);

/// Precomputed per-patient design: basis expansions and time-gap matrices at
/// the observation times. Built once; reused by every ELBO evaluation.
struct VarDesign {
    Eigen::VectorXd times;
    Eigen::VectorXd values;
    Eigen::MatrixXd curve_basis;   // n x d_z
    Eigen::MatrixXd linear_basis;  // n x 2
    Eigen::MatrixXd gaps;          // n x n, |t_i - t_j|
    Eigen::Index n() const { return times.size(); }
};

struct PatientContext {
    const PatientRecord* record = nullptr;
    std::vector<VarDesign> vars;
};

PatientContext make_context(const ModelParams& params, const PatientRecord& patient);

/// Maps a LocalVariational to and from one flat unconstrained vector:
/// categorical blocks as logits, Gaussian blocks in prior-whitened form
/// (means as L_prior^{-1} mu, covariance factors as L_prior^{-1} L_q lower
/// triangles with log diagonals). Whitening keeps the local optimization
/// well-conditioned whatever the prior scales are.
class LocalPacking {
public:
    LocalPacking(const ModelParams& params, const PatientRecord& patient);

    int size() const { return size_; }
    Eigen::VectorXd pack(const LocalVariational& local) const;
    LocalVariational unpack(const Eigen::VectorXd& coords) const;

    const Eigen::MatrixXd& b_prior_factor() const { return b_prior_factor_; }
    const Eigen::MatrixXd& f_prior_factor(int var) const {
        return f_prior_factors_[static_cast<std::size_t>(var)];
    }

private:
    int cluster_count_ = 0;
    std::vector<int> subpop_counts_;
    int rand_eff_dim_ = 0;
    std::vector<int> obs_counts_;
    int size_ = 0;
    Eigen::MatrixXd b_prior_factor_;
    std::vector<Eigen::MatrixXd> f_prior_factors_;
};

/// Same flattening for the global parameters. Cluster-weight row 0 is pinned
/// to zero and excluded from the coordinates; mixing-matrix columns become
/// per-column logits; positive scalars ride in log space; the random-effect
/// covariance rides as its Cholesky factor with log diagonal.
class GlobalPacking {
public:
    GlobalPacking(const ModelConfig& config, int basis_dim);

    int size() const { return size_; }
    Eigen::VectorXd pack(const ModelParams& params) const;
    /// Rebuilds parameter values in place; basis, config and span are kept.
    void unpack_into(const Eigen::VectorXd& coords, ModelParams& params) const;
    /// Coordinates of the per-variable log scale parameters (amplitude,
    /// lengthscale, noise variance), for optional burn-in freezing.
    std::vector<int> scale_coordinate_indices() const;

private:
    ModelConfig config_;
    int basis_dim_ = 0;
    int size_ = 0;
};

// Lower-triangle helpers shared by both packers (log-diagonal convention).
int tril_size(int n);
void pack_tril(const Eigen::MatrixXd& factor, Eigen::VectorXd& out, int& pos);
Eigen::MatrixXd unpack_tril(const Eigen::VectorXd& coords, int& pos, int n);

}  // namespace trajmix
