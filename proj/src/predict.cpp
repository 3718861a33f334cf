#include "trajmix/predict.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "trajmix/stats.hpp"

namespace trajmix {

LocalVariational fit_heldout_local(const ModelParams& params, const PatientRecord& patient,
                                   const HeldoutOptions& options) {
    const PatientContext ctx = make_context(params, patient);
    const LocalVariational start = init_local(params, patient);
    return local_update(params, ctx, start, options.iters, options.local_step).local;
}

GaussianDist extend_f(const ModelParams& params, const LocalVariational& local,
                      const PatientRecord& patient, int var,
                      const Eigen::VectorXd& target_times) {
    if (var < 0 || var >= params.config.num_variables())
        throw std::out_of_range("variable index out of range");
    const VarParams& vp = params.vars[static_cast<std::size_t>(var)];
    const VarSeries& series = patient.labs[static_cast<std::size_t>(var)];
    const double a2 = vp.kernel.amplitude * vp.kernel.amplitude;

    const Eigen::MatrixXd target_cov = ou_regularized(vp.kernel, target_times);
    if (series.size() == 0) {
        return {Eigen::VectorXd::Zero(target_times.size()), chol_with_jitter(target_cov, a2)};
    }

    const Eigen::MatrixXd obs_cov = ou_regularized(vp.kernel, series.times);
    const Eigen::MatrixXd cross = ou_kernel_matrix(vp.kernel, target_times, series.times);
    const Eigen::MatrixXd obs_factor = chol_with_jitter(obs_cov, a2);
    // A = K*o K_oo^{-1}, formed through the factor.
    const Eigen::MatrixXd half =
        obs_factor.triangularView<Eigen::Lower>().solve(cross.transpose());  // L^{-1} K_o*
    const Eigen::MatrixXd gain =
        obs_factor.transpose().triangularView<Eigen::Upper>().solve(half).transpose();

    const Eigen::MatrixXd& f_factor = local.f_cov_factor[static_cast<std::size_t>(var)];
    const Eigen::MatrixXd f_cov = f_factor * f_factor.transpose();
    const Eigen::VectorXd mean = gain * local.f_mean[static_cast<std::size_t>(var)];
    const Eigen::MatrixXd cov = target_cov - gain * (obs_cov - f_cov) * gain.transpose();
    // Symmetrize before factoring; the subtraction can leave 1e-17 skew.
    const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    return {mean, chol_with_jitter(sym, a2)};
}

Forecast predictive_draws(const ModelParams& params, const LocalVariational& local,
                          const PatientRecord& patient, const ForecastRequest& request) {
    const int p_count = params.config.num_variables();
    if (static_cast<int>(request.target_times.size()) != p_count)
        throw std::invalid_argument("need target times for every variable");
    if (request.n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");

    Forecast forecast;
    forecast.vars.resize(static_cast<std::size_t>(p_count));

    GaussianDist b_dist{local.b_mean, local.b_cov_factor};
    std::vector<GaussianDist> f_dists(static_cast<std::size_t>(p_count));
    std::vector<Eigen::MatrixXd> curves(static_cast<std::size_t>(p_count));
    std::vector<Eigen::MatrixXd> linear(static_cast<std::size_t>(p_count));
    for (int p = 0; p < p_count; ++p) {
        const Eigen::VectorXd& times = request.target_times[static_cast<std::size_t>(p)];
        forecast.vars[static_cast<std::size_t>(p)].times = times;
        if (times.size() == 0) continue;
        f_dists[static_cast<std::size_t>(p)] = extend_f(params, local, patient, p, times);
        curves[static_cast<std::size_t>(p)] =
            bspline_design(params.basis, times) *
            params.vars[static_cast<std::size_t>(p)].subpop_curves.transpose();
        linear[static_cast<std::size_t>(p)] = linear_design(times);
    }

    Rng rng(request.seed);
    std::vector<Eigen::MatrixXd> latent_means(static_cast<std::size_t>(p_count));
    for (int p = 0; p < p_count; ++p) {
        const Eigen::Index m = request.target_times[static_cast<std::size_t>(p)].size();
        latent_means[static_cast<std::size_t>(p)] = Eigen::MatrixXd::Zero(request.n_samples, m);
        forecast.vars[static_cast<std::size_t>(p)].samples =
            Eigen::MatrixXd::Zero(request.n_samples, m);
    }

    for (int s = 0; s < request.n_samples; ++s) {
        const Eigen::VectorXd b_draw = mvn_sample(b_dist, rng);
        for (int p = 0; p < p_count; ++p) {
            const Eigen::VectorXd& times = request.target_times[static_cast<std::size_t>(p)];
            if (times.size() == 0) continue;
            const Eigen::VectorXd& nu_z = local.subpop_probs[static_cast<std::size_t>(p)];
            const int z =
                rng.categorical(std::vector<double>(nu_z.data(), nu_z.data() + nu_z.size()));
            const Eigen::VectorXd f_draw = mvn_sample(f_dists[static_cast<std::size_t>(p)], rng);
            const VarParams& vp = params.vars[static_cast<std::size_t>(p)];
            const double level = vp.fixed_effect.dot(patient.covariates);
            const Eigen::VectorXd mean =
                (curves[static_cast<std::size_t>(p)].col(z).array() + level).matrix() +
                linear[static_cast<std::size_t>(p)] * b_draw.segment<2>(2 * p) + f_draw;
            latent_means[static_cast<std::size_t>(p)].row(s) = mean;
            const double noise_sd = std::sqrt(vp.noise_var);
            for (Eigen::Index j = 0; j < times.size(); ++j)
                forecast.vars[static_cast<std::size_t>(p)].samples(s, j) =
                    mean[j] + noise_sd * rng.normal();
        }
    }

    for (int p = 0; p < p_count; ++p) {
        VariableForecast& vf = forecast.vars[static_cast<std::size_t>(p)];
        const Eigen::Index m = vf.times.size();
        vf.mean = Eigen::VectorXd::Zero(m);
        vf.sd = Eigen::VectorXd::Zero(m);
        if (m == 0) continue;
        vf.mean = vf.samples.colwise().mean();
        const Eigen::MatrixXd& lat = latent_means[static_cast<std::size_t>(p)];
        const double sigma2 = params.vars[static_cast<std::size_t>(p)].noise_var;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double lat_mean = lat.col(j).mean();
            const double lat_var = (lat.col(j).array() - lat_mean).square().sum() /
                                   static_cast<double>(std::max(request.n_samples, 1));
            vf.sd[j] = std::sqrt(lat_var + sigma2);
        }
    }
    return forecast;
}

std::vector<Eigen::VectorXd> point_forecast(const Forecast& forecast) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(forecast.vars.size());
    for (const VariableForecast& vf : forecast.vars) out.push_back(vf.mean);
    return out;
}

namespace {
void write_value(std::ostringstream& out, double value) {
    out.precision(17);
    out << value;
}
}  // namespace

std::string forecast_csv_header() { return "patient_id,variable,target_time,pred_mean,pred_sd\n"; }

void append_forecast_csv(std::string& out, const std::string& patient_id,
                         const ModelParams& params, const Forecast& forecast,
                         bool back_transform) {
    std::ostringstream line;
    for (std::size_t p = 0; p < forecast.vars.size(); ++p) {
        const VariableForecast& vf = forecast.vars[p];
        const VariableSpec& spec = params.config.variables[p];
        const bool transform = back_transform && spec.log_scale;
        for (Eigen::Index j = 0; j < vf.times.size(); ++j) {
            double mean = vf.mean[j];
            double sd = vf.sd[j];
            if (transform) {
                // Report moments of the exponentiated samples.
                const Eigen::ArrayXd exp_samples = vf.samples.col(j).array().exp();
                mean = exp_samples.mean();
                sd = std::sqrt((exp_samples - mean).square().sum() /
                               static_cast<double>(exp_samples.size()));
            }
            line.str("");
            line << patient_id << "," << spec.name << ",";
            write_value(line, vf.times[j]);
            line << ",";
            write_value(line, mean);
            line << ",";
            write_value(line, sd);
            line << "\n";
            out += line.str();
        }
    }
}

std::string forecast_samples_csv_header() {
    return "patient_id,variable,target_time,sample_index,value\n";
}

void append_forecast_samples_csv(std::string& out, const std::string& patient_id,
                                 const ModelParams& params, const Forecast& forecast,
                                 bool back_transform) {
    std::ostringstream line;
    for (std::size_t p = 0; p < forecast.vars.size(); ++p) {
        const VariableForecast& vf = forecast.vars[p];
        const VariableSpec& spec = params.config.variables[p];
        const bool transform = back_transform && spec.log_scale;
        for (Eigen::Index j = 0; j < vf.times.size(); ++j) {
            for (Eigen::Index s = 0; s < vf.samples.rows(); ++s) {
                double value = vf.samples(s, j);
                if (transform) value = std::exp(value);
                line.str("");
                line << patient_id << "," << spec.name << ",";
                write_value(line, vf.times[j]);
                line << "," << s << ",";
                write_value(line, value);
                line << "\n";
                out += line.str();
            }
        }
    }
}

}  // namespace trajmix
