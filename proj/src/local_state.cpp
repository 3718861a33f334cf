#include "trajmix/local_state.hpp"

#include <cmath>
#include <stdexcept>

#include "trajmix/stats.hpp"

namespace trajmix {

namespace {
Eigen::VectorXd safe_log(const Eigen::VectorXd& probs) {
    Eigen::VectorXd out(probs.size());
    for (Eigen::Index i = 0; i < probs.size(); ++i) out[i] = std::log(std::max(probs[i], 1e-300));
    return out;
}
}  // namespace

void LocalVariational::validate(const ModelConfig& config, const PatientRecord& patient) const {
    const int p_count = config.num_variables();
    if (cluster_probs.size() != config.num_clusters)
        throw std::invalid_argument("cluster weight size mismatch");
    if (std::abs(cluster_probs.sum() - 1.0) > 1e-8 || cluster_probs.minCoeff() < 0.0)
        throw std::invalid_argument("cluster weights must lie on the simplex");
    if (static_cast<int>(subpop_probs.size()) != p_count ||
        static_cast<int>(f_mean.size()) != p_count ||
        static_cast<int>(f_cov_factor.size()) != p_count)
        throw std::invalid_argument("per-variable factor count mismatch");
    for (int p = 0; p < p_count; ++p) {
        const Eigen::VectorXd& nu = subpop_probs[static_cast<std::size_t>(p)];
        if (nu.size() != config.subpop_counts[static_cast<std::size_t>(p)])
            throw std::invalid_argument("subpopulation weight size mismatch");
        if (std::abs(nu.sum() - 1.0) > 1e-8 || nu.minCoeff() < 0.0)
            throw std::invalid_argument("subpopulation weights must lie on the simplex");
        const Eigen::Index n = patient.labs[static_cast<std::size_t>(p)].size();
        if (f_mean[static_cast<std::size_t>(p)].size() != n)
            throw std::invalid_argument("deviation mean length mismatch");
        const Eigen::MatrixXd& factor = f_cov_factor[static_cast<std::size_t>(p)];
        if (factor.rows() != n || factor.cols() != n)
            throw std::invalid_argument("deviation factor shape mismatch");
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(factor(i, i) > 0.0))
                throw std::invalid_argument("deviation factor diagonal must be positive");
    }
    if (b_mean.size() != config.rand_eff_dim())
        throw std::invalid_argument("random-effect mean size mismatch");
    if (b_cov_factor.rows() != config.rand_eff_dim() ||
        b_cov_factor.cols() != config.rand_eff_dim())
        throw std::invalid_argument("random-effect factor shape mismatch");
    for (Eigen::Index i = 0; i < b_cov_factor.rows(); ++i)
        if (!(b_cov_factor(i, i) > 0.0))
            throw std::invalid_argument("random-effect factor diagonal must be positive");
}

LocalVariational init_local(const ModelParams& params, const PatientRecord& patient) {
    patient.validate(params.config);
    const int p_count = params.config.num_variables();

    LocalVariational local;
    local.cluster_probs = cluster_prior(params, patient.covariates);
    local.subpop_probs.resize(static_cast<std::size_t>(p_count));
    for (int p = 0; p < p_count; ++p)
        local.subpop_probs[static_cast<std::size_t>(p)] =
            params.vars[static_cast<std::size_t>(p)].subpop_mix * local.cluster_probs;

    local.b_mean = Eigen::VectorXd::Zero(params.config.rand_eff_dim());
    local.b_cov_factor = chol_with_jitter(params.rand_eff_cov, 1.0);

    local.f_mean.resize(static_cast<std::size_t>(p_count));
    local.f_cov_factor.resize(static_cast<std::size_t>(p_count));
    for (int p = 0; p < p_count; ++p) {
        const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
        local.f_mean[static_cast<std::size_t>(p)] = Eigen::VectorXd::Zero(series.size());
        if (series.size() == 0) {
            local.f_cov_factor[static_cast<std::size_t>(p)] = Eigen::MatrixXd(0, 0);
            continue;
        }
        const VarParams& vp = params.vars[static_cast<std::size_t>(p)];
        local.f_cov_factor[static_cast<std::size_t>(p)] = chol_with_jitter(
            ou_regularized(vp.kernel, series.times), vp.kernel.amplitude * vp.kernel.amplitude);
    }
    return local;
}

PatientContext make_context(const ModelParams& params, const PatientRecord& patient) {
    PatientContext ctx;
    ctx.record = &patient;
    const int p_count = params.config.num_variables();
    ctx.vars.resize(static_cast<std::size_t>(p_count));
    for (int p = 0; p < p_count; ++p) {
        const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
        VarDesign& design = ctx.vars[static_cast<std::size_t>(p)];
        design.times = series.times;
        design.values = series.values;
        if (series.size() == 0) continue;
        design.curve_basis = bspline_design(params.basis, series.times);
        design.linear_basis = linear_design(series.times);
        design.gaps = abs_time_gaps(series.times, series.times);
    }
    return ctx;
}

int tril_size(int n) { return n * (n + 1) / 2; }

void pack_tril(const Eigen::MatrixXd& factor, Eigen::VectorXd& out, int& pos) {
    const int n = static_cast<int>(factor.rows());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) out[pos++] = factor(i, j);
        out[pos++] = std::log(factor(i, i));
    }
}

Eigen::MatrixXd unpack_tril(const Eigen::VectorXd& coords, int& pos, int n) {
    Eigen::MatrixXd factor = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) factor(i, j) = coords[pos++];
        factor(i, i) = std::exp(coords[pos++]);
    }
    return factor;
}

LocalPacking::LocalPacking(const ModelParams& params, const PatientRecord& patient)
    : cluster_count_(params.config.num_clusters),
      subpop_counts_(params.config.subpop_counts),
      rand_eff_dim_(params.config.rand_eff_dim()) {
    for (const VarSeries& series : patient.labs)
        obs_counts_.push_back(static_cast<int>(series.size()));
    size_ = cluster_count_;
    for (const int gp : subpop_counts_) size_ += gp;
    size_ += rand_eff_dim_ + tril_size(rand_eff_dim_);
    for (const int n : obs_counts_) size_ += n + tril_size(n);

    b_prior_factor_ = chol_with_jitter(params.rand_eff_cov, 1.0);
    f_prior_factors_.resize(obs_counts_.size());
    for (std::size_t p = 0; p < obs_counts_.size(); ++p) {
        if (obs_counts_[p] == 0) {
            f_prior_factors_[p] = Eigen::MatrixXd(0, 0);
            continue;
        }
        const VarParams& vp = params.vars[p];
        f_prior_factors_[p] =
            chol_with_jitter(ou_regularized(vp.kernel, patient.labs[p].times),
                             vp.kernel.amplitude * vp.kernel.amplitude);
    }
}

Eigen::VectorXd LocalPacking::pack(const LocalVariational& local) const {
    Eigen::VectorXd out(size_);
    int pos = 0;
    out.segment(pos, cluster_count_) = safe_log(local.cluster_probs);
    pos += cluster_count_;
    for (std::size_t p = 0; p < subpop_counts_.size(); ++p) {
        out.segment(pos, subpop_counts_[p]) = safe_log(local.subpop_probs[p]);
        pos += subpop_counts_[p];
    }
    const auto& lb = b_prior_factor_.triangularView<Eigen::Lower>();
    out.segment(pos, rand_eff_dim_) = lb.solve(local.b_mean);
    pos += rand_eff_dim_;
    pack_tril(lb.solve(local.b_cov_factor), out, pos);
    for (std::size_t p = 0; p < obs_counts_.size(); ++p) {
        const int n = obs_counts_[p];
        if (n > 0) {
            const auto& lf = f_prior_factors_[p].triangularView<Eigen::Lower>();
            out.segment(pos, n) = lf.solve(local.f_mean[p]);
            pos += n;
            pack_tril(lf.solve(local.f_cov_factor[p]), out, pos);
        }
    }
    return out;
}

LocalVariational LocalPacking::unpack(const Eigen::VectorXd& coords) const {
    if (coords.size() != size_) throw std::invalid_argument("local coordinate size mismatch");
    LocalVariational local;
    int pos = 0;
    local.cluster_probs = softmax(coords.segment(pos, cluster_count_));
    pos += cluster_count_;
    local.subpop_probs.resize(subpop_counts_.size());
    for (std::size_t p = 0; p < subpop_counts_.size(); ++p) {
        local.subpop_probs[p] = softmax(coords.segment(pos, subpop_counts_[p]));
        pos += subpop_counts_[p];
    }
    local.b_mean = b_prior_factor_.triangularView<Eigen::Lower>() *
                   coords.segment(pos, rand_eff_dim_);
    pos += rand_eff_dim_;
    local.b_cov_factor = b_prior_factor_.triangularView<Eigen::Lower>() *
                         unpack_tril(coords, pos, rand_eff_dim_);
    local.f_mean.resize(obs_counts_.size());
    local.f_cov_factor.resize(obs_counts_.size());
    for (std::size_t p = 0; p < obs_counts_.size(); ++p) {
        const int n = obs_counts_[p];
        if (n == 0) {
            local.f_mean[p] = Eigen::VectorXd();
            local.f_cov_factor[p] = Eigen::MatrixXd(0, 0);
            continue;
        }
        const auto& lf = f_prior_factors_[p].triangularView<Eigen::Lower>();
        local.f_mean[p] = lf * coords.segment(pos, n);
        pos += n;
        local.f_cov_factor[p] = lf * unpack_tril(coords, pos, n);
    }
    return local;
}

GlobalPacking::GlobalPacking(const ModelConfig& config, int basis_dim)
    : config_(config), basis_dim_(basis_dim) {
    const int q = config.covariate_dim;
    size_ = 0;
    for (int p = 0; p < config.num_variables(); ++p) {
        const int gp = config.subpop_counts[static_cast<std::size_t>(p)];
        size_ += q + gp * basis_dim_ + gp * config.num_clusters + 3;
    }
    size_ += (config.num_clusters - 1) * q;
    size_ += tril_size(config.rand_eff_dim());
}

Eigen::VectorXd GlobalPacking::pack(const ModelParams& params) const {
    Eigen::VectorXd out(size_);
    int pos = 0;
    for (const VarParams& vp : params.vars) {
        const int q = config_.covariate_dim;
        out.segment(pos, q) = vp.fixed_effect;
        pos += q;
        for (Eigen::Index h = 0; h < vp.subpop_curves.rows(); ++h) {
            out.segment(pos, basis_dim_) = vp.subpop_curves.row(h);
            pos += basis_dim_;
        }
        for (Eigen::Index g = 0; g < vp.subpop_mix.cols(); ++g) {
            out.segment(pos, vp.subpop_mix.rows()) = safe_log(vp.subpop_mix.col(g));
            pos += static_cast<int>(vp.subpop_mix.rows());
        }
        out[pos++] = std::log(vp.kernel.amplitude);
        out[pos++] = std::log(vp.kernel.lengthscale);
        out[pos++] = std::log(vp.noise_var);
    }
    for (int g = 1; g < config_.num_clusters; ++g) {
        out.segment(pos, config_.covariate_dim) = params.cluster_weights.row(g);
        pos += config_.covariate_dim;
    }
    pack_tril(chol_with_jitter(params.rand_eff_cov, 1.0), out, pos);
    return out;
}

std::vector<int> GlobalPacking::scale_coordinate_indices() const {
    std::vector<int> out;
    int pos = 0;
    for (int p = 0; p < config_.num_variables(); ++p) {
        const int gp = config_.subpop_counts[static_cast<std::size_t>(p)];
        pos += config_.covariate_dim + gp * basis_dim_ + gp * config_.num_clusters;
        out.push_back(pos++);
        out.push_back(pos++);
        out.push_back(pos++);
    }
    return out;
}

void GlobalPacking::unpack_into(const Eigen::VectorXd& coords, ModelParams& params) const {
    if (coords.size() != size_) throw std::invalid_argument("global coordinate size mismatch");
    int pos = 0;
    for (VarParams& vp : params.vars) {
        const int q = config_.covariate_dim;
        vp.fixed_effect = coords.segment(pos, q);
        pos += q;
        for (Eigen::Index h = 0; h < vp.subpop_curves.rows(); ++h) {
            vp.subpop_curves.row(h) = coords.segment(pos, basis_dim_);
            pos += basis_dim_;
        }
        for (Eigen::Index g = 0; g < vp.subpop_mix.cols(); ++g) {
            vp.subpop_mix.col(g) = softmax(coords.segment(pos, vp.subpop_mix.rows()));
            pos += static_cast<int>(vp.subpop_mix.rows());
        }
        vp.kernel.amplitude = std::exp(coords[pos++]);
        vp.kernel.lengthscale = std::exp(coords[pos++]);
        vp.noise_var = std::exp(coords[pos++]);
    }
    params.cluster_weights.row(0).setZero();
    for (int g = 1; g < config_.num_clusters; ++g) {
        params.cluster_weights.row(g) = coords.segment(pos, config_.covariate_dim);
        pos += config_.covariate_dim;
    }
    const Eigen::MatrixXd factor = unpack_tril(coords, pos, config_.rand_eff_dim());
    params.rand_eff_cov = factor * factor.transpose();
}

}  // namespace trajmix
