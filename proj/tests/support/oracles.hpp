#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (textbook recursions, dense inverses, brute-force
// enumeration) so they cannot share bugs with the library paths they check.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "trajmix/local_state.hpp"
#include "trajmix/model.hpp"
#include "trajmix/rng.hpp"
#include "trajmix/simulate.hpp"

namespace oracles {

// Textbook Cox-de Boor recursion: N_{i,0}(t) = 1 on [u_i, u_{i+1}), with the
// 0/0 := 0 convention, evaluated for every basis index.
inline double cox_de_boor(const std::vector<double>& knots, std::size_t i, int degree, double t) {
    if (degree == 0) {
        // Close the final interval so t = hi belongs to the last basis.
        const bool last = i + 2 == knots.size() ||
                          (knots[i + 1] == knots.back() && t == knots[i + 1]);
        return (t >= knots[i] && (t < knots[i + 1] || (last && t <= knots[i + 1]))) ? 1.0 : 0.0;
    }
    double left = 0.0, right = 0.0;
    const double den_l = knots[i + static_cast<std::size_t>(degree)] - knots[i];
    if (den_l > 0.0) left = (t - knots[i]) / den_l * cox_de_boor(knots, i, degree - 1, t);
    const double den_r =
        knots[i + static_cast<std::size_t>(degree) + 1] - knots[i + 1];
    if (den_r > 0.0)
        right = (knots[i + static_cast<std::size_t>(degree) + 1] - t) / den_r *
                cox_de_boor(knots, i + 1, degree - 1, t);
    return left + right;
}

inline Eigen::VectorXd naive_bspline_row(const trajmix::SplineBasis& basis, double t) {
    const std::vector<double>& knots = basis.knot_vector();
    Eigen::VectorXd row(basis.dimension());
    for (int i = 0; i < basis.dimension(); ++i)
        row[i] = cox_de_boor(knots, static_cast<std::size_t>(i), basis.degree(), t);
    return row;
}

// Dense-inverse Gaussian log density.
inline double naive_mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                               const Eigen::MatrixXd& cov) {
    const Eigen::Index n = x.size();
    const Eigen::MatrixXd inv = cov.inverse();
    const double det = cov.determinant();
    const Eigen::VectorXd d = x - mean;
    return -0.5 * static_cast<double>(n) * std::log(2.0 * M_PI) - 0.5 * std::log(det) -
           0.5 * d.dot(inv * d);
}

// Joint-Gaussian conditioning on the stacked (observed, target) kernel, then
// marginalizing the observed block over N(f_mean, f_cov).
struct DenseConditional {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

inline DenseConditional dense_gp_conditional(const trajmix::OUKernelParams& kernel,
                                             const Eigen::VectorXd& obs_times,
                                             const Eigen::VectorXd& target_times,
                                             const Eigen::VectorXd& f_mean,
                                             const Eigen::MatrixXd& f_cov) {
    Eigen::VectorXd stacked(obs_times.size() + target_times.size());
    stacked << obs_times, target_times;
    const Eigen::MatrixXd joint = trajmix::ou_regularized(kernel, stacked);
    const Eigen::Index n = obs_times.size(), m = target_times.size();
    const Eigen::MatrixXd k_oo = joint.topLeftCorner(n, n);
    const Eigen::MatrixXd k_to = joint.bottomLeftCorner(m, n);
    const Eigen::MatrixXd k_tt = joint.bottomRightCorner(m, m);
    const Eigen::MatrixXd gain = k_to * k_oo.inverse();
    DenseConditional out;
    out.mean = gain * f_mean;
    // law of total variance over q(f_obs)
    out.cov = k_tt - gain * k_oo * gain.transpose() + gain * f_cov * gain.transpose();
    return out;
}

// Exact joint posterior over (b, f) for a single-variable, single-component
// model: precision = blockdiag(Sigma_b^{-1}, K^{-1}) + H^T H / sigma^2 with
// H = [Phi_l, I].
struct ConjugatePosterior {
    Eigen::VectorXd mean;  // stacked (b, f)
    Eigen::MatrixXd cov;
    Eigen::Index b_dim;
};

inline ConjugatePosterior conjugate_posterior(const trajmix::ModelParams& params,
                                              const trajmix::PatientRecord& patient) {
    const trajmix::VarParams& vp = params.vars.at(0);
    const trajmix::VarSeries& series = patient.labs.at(0);
    const Eigen::Index n = series.size();
    const Eigen::Index b_dim = params.config.rand_eff_dim();

    const Eigen::MatrixXd phi_l = trajmix::linear_design(series.times);
    const Eigen::MatrixXd kernel = trajmix::ou_regularized(vp.kernel, series.times);
    Eigen::MatrixXd h(n, b_dim + n);
    h.setZero();
    h.leftCols(b_dim) = phi_l;
    h.rightCols(n) = Eigen::MatrixXd::Identity(n, n);

    Eigen::MatrixXd prior_prec = Eigen::MatrixXd::Zero(b_dim + n, b_dim + n);
    prior_prec.topLeftCorner(b_dim, b_dim) = params.rand_eff_cov.inverse();
    prior_prec.bottomRightCorner(n, n) = kernel.inverse();

    const double level = vp.fixed_effect.dot(patient.covariates);
    const Eigen::VectorXd curve =
        trajmix::bspline_design(params.basis, series.times) * vp.subpop_curves.row(0).transpose();
    const Eigen::VectorXd resid = series.values - (curve.array() + level).matrix();

    ConjugatePosterior post;
    post.b_dim = b_dim;
    const Eigen::MatrixXd prec = prior_prec + h.transpose() * h / vp.noise_var;
    post.cov = prec.inverse();
    post.mean = post.cov * (h.transpose() * resid / vp.noise_var);
    return post;
}

// Shared tiny-instance builder for gradient / bound tests.
struct TinyInstance {
    trajmix::ModelParams params;
    std::vector<trajmix::PatientRecord> patients;
    std::vector<trajmix::LocalVariational> locals;
};

inline TinyInstance make_tiny_instance(std::uint64_t seed, int p_count, int g_count, int gp,
                                       int n_patients, int max_obs, bool perturb_locals = true) {
    trajmix::ModelConfig config;
    for (int p = 0; p < p_count; ++p)
        config.variables.push_back({"lab" + std::to_string(p), false});
    config.num_clusters = g_count;
    config.subpop_counts.assign(static_cast<std::size_t>(p_count), gp);
    config.covariate_dim = 2;
    config.interior_knot_count = 3;

    const trajmix::RngFactory rng(seed);
    TinyInstance out;
    out.params = trajmix::make_demo_params(config, 0.0, 5.0, 1.0, 2.5, 0.3, rng);

    trajmix::Rng stream = rng.stream("tiny-data");
    for (int i = 0; i < n_patients; ++i) {
        Eigen::VectorXd x(2);
        x << 1.0, stream.normal();
        std::vector<Eigen::VectorXd> times(static_cast<std::size_t>(p_count));
        for (int p = 0; p < p_count; ++p) {
            const int n = 1 + stream.uniform_int(max_obs);
            std::vector<double> draws(static_cast<std::size_t>(n));
            for (double& t : draws) t = 5.0 * stream.uniform();
            std::sort(draws.begin(), draws.end());
            times[static_cast<std::size_t>(p)] = Eigen::Map<Eigen::VectorXd>(draws.data(), n);
        }
        auto [patient, latent] = trajmix::sample_patient(out.params, x, times, stream);
        patient.id = "tiny-" + std::to_string(i);
        out.patients.push_back(patient);

        trajmix::LocalVariational local = trajmix::init_local(out.params, patient);
        if (perturb_locals) {
            const trajmix::LocalPacking packing(out.params, patient);
            Eigen::VectorXd coords = packing.pack(local);
            for (Eigen::Index k = 0; k < coords.size(); ++k) coords[k] += 0.15 * stream.normal();
            local = packing.unpack(coords);
        }
        out.locals.push_back(local);
    }
    return out;
}

}  // namespace oracles
