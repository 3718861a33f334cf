#include "trajmix/elbo.hpp"

#include <cmath>
#include <stdexcept>

#include "trajmix/stats.hpp"

namespace trajmix {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::VectorXd clamped_log(const Eigen::VectorXd& probs) {
    Eigen::VectorXd out(probs.size());
    for (Eigen::Index i = 0; i < probs.size(); ++i) out[i] = std::log(std::max(probs[i], 1e-300));
    return out;
}

Eigen::MatrixXd clamped_log(const Eigen::MatrixXd& probs) {
    Eigen::MatrixXd out(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        for (Eigen::Index j = 0; j < probs.cols(); ++j)
            out(i, j) = std::log(std::max(probs(i, j), 1e-300));
    return out;
}

double sum_log_diag(const Eigen::MatrixXd& factor) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < factor.rows(); ++i) s += std::log(factor(i, i));
    return s;
}

// Inverse of an SPD matrix through its lower Cholesky factor.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& factor) {
    const Eigen::Index n = factor.rows();
    Eigen::MatrixXd inv_factor =
        factor.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
    return inv_factor.transpose() * inv_factor;
}

// d phi / d L for phi(L L^T) with symmetric full-matrix derivative grad_sigma,
// restricted to the lower triangle and chained into the log-diagonal
// parameterization used by the packers.
void add_tril_chain(const Eigen::MatrixXd& grad_full, const Eigen::MatrixXd& factor,
                    Eigen::VectorXd& out, int& pos) {
    const int n = static_cast<int>(factor.rows());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) out[pos++] += grad_full(i, j);
        out[pos++] += grad_full(i, i) * factor(i, i);
    }
}

}  // namespace

GlobalGrad GlobalGrad::zero(const ModelConfig& config, int basis_dim) {
    GlobalGrad g;
    const int p_count = config.num_variables();
    g.fixed_effect.resize(static_cast<std::size_t>(p_count));
    g.subpop_curves.resize(static_cast<std::size_t>(p_count));
    g.mix_logits.resize(static_cast<std::size_t>(p_count));
    g.log_amplitude.assign(static_cast<std::size_t>(p_count), 0.0);
    g.log_lengthscale.assign(static_cast<std::size_t>(p_count), 0.0);
    g.log_noise_var.assign(static_cast<std::size_t>(p_count), 0.0);
    for (int p = 0; p < p_count; ++p) {
        const int gp = config.subpop_counts[static_cast<std::size_t>(p)];
        g.fixed_effect[static_cast<std::size_t>(p)] = Eigen::VectorXd::Zero(config.covariate_dim);
        g.subpop_curves[static_cast<std::size_t>(p)] = Eigen::MatrixXd::Zero(gp, basis_dim);
        g.mix_logits[static_cast<std::size_t>(p)] = Eigen::MatrixXd::Zero(gp, config.num_clusters);
    }
    g.cluster_weights = Eigen::MatrixXd::Zero(config.num_clusters, config.covariate_dim);
    g.rand_eff_cov = Eigen::MatrixXd::Zero(config.rand_eff_dim(), config.rand_eff_dim());
    return g;
}

void GlobalGrad::add(const GlobalGrad& other) {
    for (std::size_t p = 0; p < fixed_effect.size(); ++p) {
        fixed_effect[p] += other.fixed_effect[p];
        subpop_curves[p] += other.subpop_curves[p];
        mix_logits[p] += other.mix_logits[p];
        log_amplitude[p] += other.log_amplitude[p];
        log_lengthscale[p] += other.log_lengthscale[p];
        log_noise_var[p] += other.log_noise_var[p];
    }
    cluster_weights += other.cluster_weights;
    rand_eff_cov += other.rand_eff_cov;
}

void GlobalGrad::scale(double s) {
    for (std::size_t p = 0; p < fixed_effect.size(); ++p) {
        fixed_effect[p] *= s;
        subpop_curves[p] *= s;
        mix_logits[p] *= s;
        log_amplitude[p] *= s;
        log_lengthscale[p] *= s;
        log_noise_var[p] *= s;
    }
    cluster_weights *= s;
    rand_eff_cov *= s;
}

Eigen::VectorXd GlobalGrad::pack(const ModelParams& params) const {
    const ModelConfig& config = params.config;
    const int basis_dim = params.basis.dimension();
    GlobalPacking packing(config, basis_dim);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(packing.size());
    int pos = 0;
    for (std::size_t p = 0; p < fixed_effect.size(); ++p) {
        const int q = config.covariate_dim;
        out.segment(pos, q) = fixed_effect[p];
        pos += q;
        for (Eigen::Index h = 0; h < subpop_curves[p].rows(); ++h) {
            out.segment(pos, basis_dim) = subpop_curves[p].row(h);
            pos += basis_dim;
        }
        for (Eigen::Index g = 0; g < mix_logits[p].cols(); ++g) {
            out.segment(pos, mix_logits[p].rows()) = mix_logits[p].col(g);
            pos += static_cast<int>(mix_logits[p].rows());
        }
        out[pos++] = log_amplitude[p];
        out[pos++] = log_lengthscale[p];
        out[pos++] = log_noise_var[p];
    }
    for (int g = 1; g < config.num_clusters; ++g) {
        out.segment(pos, config.covariate_dim) = cluster_weights.row(g);
        pos += config.covariate_dim;
    }
    const Eigen::MatrixXd factor = chol_with_jitter(params.rand_eff_cov, 1.0);
    add_tril_chain(2.0 * rand_eff_cov * factor, factor, out, pos);
    return out;
}

// Term structure for one patient:
//   cluster term    sum_g nu_c[g] log pi_g
//   coupling term   sum_p sum_{h,g} nu_z[h] nu_c[g] log Psi[h, g]
//   b prior         E_q log N(b; 0, Sigma_b)
//   f priors        E_q log N(f_p; 0, K_p)        (observed variables)
//   likelihood      sum_j E_q log N(y_j; mu_j, sigma^2)
//   entropies       of every q factor.
// The likelihood expectation splits into the squared residual at the
// posterior-mean trajectory plus the posterior variance of the trajectory
// (subpopulation mixture variance + random-effect quadratic + deviation
// variance), all available in closed form.
PatientEval eval_patient(const ModelParams& params, const PatientContext& ctx,
                         const LocalVariational& local, bool want_local_grad,
                         bool want_global_grad) {
    const ModelConfig& config = params.config;
    const int p_count = config.num_variables();
    const int g_count = config.num_clusters;
    const int b_dim = config.rand_eff_dim();
    const Eigen::VectorXd& x = ctx.record->covariates;

    PatientEval out;
    if (want_global_grad) out.global_grad = GlobalGrad::zero(config, params.basis.dimension());

    int local_size = 0;
    if (want_local_grad) {
        local_size = g_count;
        for (const int gp : config.subpop_counts) local_size += gp;
        local_size += b_dim + b_dim * (b_dim + 1) / 2;
        for (const VarDesign& design : ctx.vars) {
            const int n = static_cast<int>(design.n());
            local_size += n + n * (n + 1) / 2;
        }
    }
    Eigen::VectorXd lgrad = Eigen::VectorXd::Zero(local_size);

    const Eigen::VectorXd pi = cluster_prior(params, x);
    const Eigen::VectorXd log_pi = clamped_log(pi);
    const Eigen::VectorXd& nu_c = local.cluster_probs;

    double value = nu_c.dot(log_pi) + categorical_entropy(nu_c);

    // b-prior and its entropy.
    const Eigen::MatrixXd prior_factor = chol_with_jitter(params.rand_eff_cov, 1.0);
    const Eigen::MatrixXd prior_prec = spd_inverse(prior_factor);
    const Eigen::MatrixXd& b_factor = local.b_cov_factor;
    const Eigen::MatrixXd b_cov = b_factor * b_factor.transpose();
    const Eigen::MatrixXd b_second = b_cov + local.b_mean * local.b_mean.transpose();
    value += -0.5 * (b_dim * kLog2Pi + 2.0 * sum_log_diag(prior_factor) +
                     (prior_prec * b_second).trace());
    value += 0.5 * b_dim * (kLog2Pi + 1.0) + sum_log_diag(b_factor);

    // Gradient staging for the local coordinates.
    Eigen::VectorXd g_nu_c;
    Eigen::VectorXd g_b_mean;
    Eigen::MatrixXd g_b_factor_full;  // natural d/dL before tril+chain
    if (want_local_grad) {
        g_nu_c = log_pi - clamped_log(nu_c) - Eigen::VectorXd::Ones(g_count);
        g_b_mean = -prior_prec * local.b_mean;
        g_b_factor_full = -prior_prec * b_factor;
    }
    if (want_global_grad) {
        out.global_grad.cluster_weights += (nu_c - pi) * x.transpose();
        out.global_grad.rand_eff_cov +=
            -0.5 * prior_prec + 0.5 * prior_prec * b_second * prior_prec;
    }

    std::vector<Eigen::VectorXd> g_nu_z(static_cast<std::size_t>(p_count));
    std::vector<Eigen::VectorXd> g_f_mean(static_cast<std::size_t>(p_count));
    std::vector<Eigen::MatrixXd> g_f_factor_full(static_cast<std::size_t>(p_count));
    std::vector<Eigen::MatrixXd> kernel_factors(static_cast<std::size_t>(p_count));

    for (int p = 0; p < p_count; ++p) {
        const VarParams& vp = params.vars[static_cast<std::size_t>(p)];
        const VarDesign& design = ctx.vars[static_cast<std::size_t>(p)];
        const Eigen::VectorXd& nu_z = local.subpop_probs[static_cast<std::size_t>(p)];
        const Eigen::MatrixXd log_mix = clamped_log(vp.subpop_mix);
        const Eigen::Index n = design.n();

        // Cluster-subpopulation coupling and the z entropy.
        value += nu_z.dot(log_mix * nu_c) + categorical_entropy(nu_z);
        if (want_local_grad) {
            g_nu_c += log_mix.transpose() * nu_z;
            g_nu_z[static_cast<std::size_t>(p)] =
                log_mix * nu_c - clamped_log(nu_z) - Eigen::VectorXd::Ones(nu_z.size());
        }
        if (want_global_grad) {
            Eigen::MatrixXd& mix_grad = out.global_grad.mix_logits[static_cast<std::size_t>(p)];
            for (int g = 0; g < g_count; ++g)
                mix_grad.col(g) += nu_c[g] * (nu_z - vp.subpop_mix.col(g));
        }

        if (n == 0) {
            if (want_local_grad) {
                g_f_mean[static_cast<std::size_t>(p)] = Eigen::VectorXd();
                g_f_factor_full[static_cast<std::size_t>(p)] = Eigen::MatrixXd(0, 0);
            }
            continue;
        }

        const double sigma2 = vp.noise_var;
        const double a2 = vp.kernel.amplitude * vp.kernel.amplitude;
        const Eigen::MatrixXd kernel = ou_regularized(vp.kernel, design.times);
        const Eigen::MatrixXd kernel_factor = chol_with_jitter(kernel, a2);
        const Eigen::MatrixXd kernel_prec = spd_inverse(kernel_factor);
        if (want_local_grad) kernel_factors[static_cast<std::size_t>(p)] = kernel_factor;

        const Eigen::VectorXd& f_mean = local.f_mean[static_cast<std::size_t>(p)];
        const Eigen::MatrixXd& f_factor = local.f_cov_factor[static_cast<std::size_t>(p)];
        const Eigen::MatrixXd f_cov = f_factor * f_factor.transpose();
        const Eigen::MatrixXd f_second = f_cov + f_mean * f_mean.transpose();

        // f prior and entropy.
        value += -0.5 * (n * kLog2Pi + 2.0 * sum_log_diag(kernel_factor) +
                         (kernel_prec * f_second).trace());
        value += 0.5 * n * (kLog2Pi + 1.0) + sum_log_diag(f_factor);

        // Likelihood pieces.
        const Eigen::MatrixXd curves = design.curve_basis * vp.subpop_curves.transpose();  // n x G_p
        const Eigen::VectorXd mix_curve = curves * nu_z;
        const double level = vp.fixed_effect.dot(x);
        const Eigen::Vector2d b_block = local.b_mean.segment<2>(2 * p);
        const Eigen::VectorXd mean = (mix_curve.array() + level).matrix() +
                                     design.linear_basis * b_block + f_mean;
        const Eigen::VectorXd resid = design.values - mean;

        const Eigen::Matrix2d b_cov_block = b_cov.block<2, 2>(2 * p, 2 * p);
        const Eigen::VectorXd quad_b =
            ((design.linear_basis * b_cov_block).cwiseProduct(design.linear_basis))
                .rowwise()
                .sum();
        const Eigen::VectorXd var_z =
            (curves.array().square().matrix() * nu_z) - mix_curve.array().square().matrix();
        const Eigen::VectorXd var_total = var_z + quad_b + f_cov.diagonal();

        value += -0.5 * n * std::log(2.0 * M_PI * sigma2) -
                 (resid.squaredNorm() + var_total.sum()) / (2.0 * sigma2);

        if (want_local_grad) {
            // z weights: mixture-mean and mixture-variance pulls.
            const Eigen::VectorXd sq_col_sums =
                curves.array().square().matrix().colwise().sum().transpose();
            g_nu_z[static_cast<std::size_t>(p)] +=
                (curves.transpose() * (resid + mix_curve)) / sigma2 -
                sq_col_sums / (2.0 * sigma2);
            g_b_mean.segment<2>(2 * p) += design.linear_basis.transpose() * resid / sigma2;
            // Sigma_q(b) pull from the trajectory variance, chained below.
            const Eigen::Matrix2d quad_pull =
                -design.linear_basis.transpose() * design.linear_basis / (2.0 * sigma2);
            g_b_factor_full.middleRows<2>(2 * p) +=
                2.0 * quad_pull * b_factor.middleRows<2>(2 * p);
            g_f_mean[static_cast<std::size_t>(p)] = -kernel_prec * f_mean + resid / sigma2;
            g_f_factor_full[static_cast<std::size_t>(p)] =
                -kernel_prec * f_factor - f_factor / sigma2;
        }

        if (want_global_grad) {
            GlobalGrad& gg = out.global_grad;
            gg.fixed_effect[static_cast<std::size_t>(p)] += (resid.sum() / sigma2) * x;
            const Eigen::VectorXd common = resid + mix_curve;
            Eigen::MatrixXd curve_grad =
                design.curve_basis.transpose() *
                (common * nu_z.transpose() - curves * nu_z.asDiagonal());
            gg.subpop_curves[static_cast<std::size_t>(p)] += curve_grad.transpose() / sigma2;

            gg.log_amplitude[static_cast<std::size_t>(p)] +=
                -static_cast<double>(n) + (kernel_prec * f_second).trace();
            const Eigen::MatrixXd weighted_prec =
                kernel_prec * f_second * kernel_prec - kernel_prec;
            gg.log_lengthscale[static_cast<std::size_t>(p)] +=
                0.5 * (weighted_prec.cwiseProduct(kernel.cwiseProduct(design.gaps))).sum() /
                vp.kernel.lengthscale;
            gg.log_noise_var[static_cast<std::size_t>(p)] +=
                -0.5 * static_cast<double>(n) +
                (resid.squaredNorm() + var_total.sum()) / (2.0 * sigma2);
        }
    }

    out.elbo = value;

    if (want_local_grad) {
        // Chain into the packed coordinates: logits for the categorical
        // blocks, prior-whitened means and factors for the Gaussian blocks.
        // Whitening: mu = L_prior mu~, L_q = L_prior L~, so gradients pull
        // back through L_prior^T. The entropy term contributes exactly 1 to
        // each log-diagonal coordinate.
        int pos = 0;
        lgrad.segment(pos, g_count) = softmax_grad_pullback(nu_c, g_nu_c);
        pos += g_count;
        for (int p = 0; p < p_count; ++p) {
            const Eigen::VectorXd& nu_z = local.subpop_probs[static_cast<std::size_t>(p)];
            lgrad.segment(pos, nu_z.size()) =
                softmax_grad_pullback(nu_z, g_nu_z[static_cast<std::size_t>(p)]);
            pos += static_cast<int>(nu_z.size());
        }
        lgrad.segment(pos, b_dim) = prior_factor.transpose() * g_b_mean;
        pos += b_dim;
        {
            const Eigen::MatrixXd whitened = prior_factor.transpose() * g_b_factor_full;
            for (int i = 0; i < b_dim; ++i) {
                for (int j = 0; j < i; ++j) lgrad[pos++] += whitened(i, j);
                const double tilde_diag = b_factor(i, i) / prior_factor(i, i);
                lgrad[pos++] += whitened(i, i) * tilde_diag + 1.0;
            }
        }
        for (int p = 0; p < p_count; ++p) {
            const Eigen::Index n = ctx.vars[static_cast<std::size_t>(p)].n();
            if (n == 0) continue;
            const Eigen::MatrixXd& prior_f = kernel_factors[static_cast<std::size_t>(p)];
            lgrad.segment(pos, n) =
                prior_f.transpose() * g_f_mean[static_cast<std::size_t>(p)];
            pos += static_cast<int>(n);
            const Eigen::MatrixXd& f_factor = local.f_cov_factor[static_cast<std::size_t>(p)];
            const Eigen::MatrixXd whitened =
                prior_f.transpose() * g_f_factor_full[static_cast<std::size_t>(p)];
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < i; ++j) lgrad[pos++] += whitened(i, j);
                const double tilde_diag = f_factor(i, i) / prior_f(i, i);
                lgrad[pos++] += whitened(i, i) * tilde_diag + 1.0;
            }
        }
        out.local_grad = std::move(lgrad);
    }
    return out;
}

double param_log_prior(const ModelParams& params, double prior_sd) {
    const double var = prior_sd * prior_sd;
    const double log_norm = -0.5 * std::log(2.0 * M_PI * var);
    double value = 0.0;
    auto add_block = [&](double sq_norm, Eigen::Index count) {
        value += static_cast<double>(count) * log_norm - sq_norm / (2.0 * var);
    };
    for (const VarParams& vp : params.vars) {
        add_block(vp.fixed_effect.squaredNorm(), vp.fixed_effect.size());
        add_block(vp.subpop_curves.squaredNorm(), vp.subpop_curves.size());
    }
    const Eigen::Index free_rows = params.cluster_weights.rows() - 1;
    add_block(params.cluster_weights.bottomRows(free_rows).squaredNorm(),
              free_rows * params.cluster_weights.cols());
    return value;
}

GlobalGrad param_log_prior_grad(const ModelParams& params, double prior_sd) {
    const double var = prior_sd * prior_sd;
    GlobalGrad g = GlobalGrad::zero(params.config, params.basis.dimension());
    for (std::size_t p = 0; p < params.vars.size(); ++p) {
        g.fixed_effect[p] = -params.vars[p].fixed_effect / var;
        g.subpop_curves[p] = -params.vars[p].subpop_curves / var;
    }
    g.cluster_weights = -params.cluster_weights / var;
    g.cluster_weights.row(0).setZero();
    return g;
}

double elbo(const ModelParams& params, const std::vector<PatientRecord>& patients,
            const std::vector<LocalVariational>& locals, bool include_param_prior,
            double prior_sd) {
    if (patients.size() != locals.size())
        throw std::invalid_argument("patients and locals must align");
    double total = include_param_prior ? param_log_prior(params, prior_sd) : 0.0;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        const PatientContext ctx = make_context(params, patients[i]);
        total += eval_patient(params, ctx, locals[i], false, false).elbo;
    }
    return total;
}

ElboGradients elbo_gradients(const ModelParams& params,
                             const std::vector<PatientRecord>& patients,
                             const std::vector<LocalVariational>& locals,
                             bool include_param_prior, double prior_sd) {
    if (patients.size() != locals.size())
        throw std::invalid_argument("patients and locals must align");
    GlobalGrad acc = GlobalGrad::zero(params.config, params.basis.dimension());
    ElboGradients out;
    out.locals.resize(patients.size());
    for (std::size_t i = 0; i < patients.size(); ++i) {
        const PatientContext ctx = make_context(params, patients[i]);
        PatientEval eval = eval_patient(params, ctx, locals[i], true, true);
        out.locals[i] = std::move(eval.local_grad);
        acc.add(eval.global_grad);
    }
    if (include_param_prior) acc.add(param_log_prior_grad(params, prior_sd));
    out.global = acc.pack(params);
    return out;
}

}  // namespace trajmix
