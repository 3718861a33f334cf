#include "trajmix/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "trajmix/parallel.hpp"
#include "trajmix/snapshot.hpp"

namespace trajmix {

namespace {

int resolve_workers(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::vector<int> seeded_permutation(int n, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
    return order;
}

// Lloyd's algorithm over row vectors; empty clusters are reseeded. Centroid
// order is fixed by sorting on the mean value so initialization does not
// depend on draw order.
Eigen::MatrixXd kmeans_rows(const Eigen::MatrixXd& points, int k, Rng& rng) {
    const Eigen::Index m = points.rows();
    Eigen::MatrixXd centroids(k, points.cols());
    std::vector<int> picks;
    while (static_cast<int>(picks.size()) < k) {
        const int cand = rng.uniform_int(static_cast<int>(m));
        if (std::find(picks.begin(), picks.end(), cand) == picks.end()) picks.push_back(cand);
    }
    for (int c = 0; c < k; ++c) centroids.row(c) = points.row(picks[static_cast<std::size_t>(c)]);

    std::vector<int> assign(static_cast<std::size_t>(m), 0);
    for (int iter = 0; iter < 30; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < m; ++i) {
            int best = 0;
            double best_d = (points.row(i) - centroids.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (points.row(i) - centroids.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        for (int c = 0; c < k; ++c) {
            Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(points.cols());
            int count = 0;
            for (Eigen::Index i = 0; i < m; ++i) {
                if (assign[static_cast<std::size_t>(i)] == c) {
                    sum += points.row(i);
                    ++count;
                }
            }
            if (count > 0)
                centroids.row(c) = sum / static_cast<double>(count);
            else
                centroids.row(c) = points.row(rng.uniform_int(static_cast<int>(m)));
        }
        if (!changed && iter > 0) break;
    }

    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return centroids.row(a).mean() > centroids.row(b).mean();
    });
    Eigen::MatrixXd sorted(k, points.cols());
    for (int c = 0; c < k; ++c) sorted.row(c) = centroids.row(order[static_cast<std::size_t>(c)]);
    return sorted;
}

}  // namespace

OptimizerState OptimizerState::make(int size, double decay, double step, double epsilon) {
    OptimizerState state;
    state.sq_grad_avg = Eigen::VectorXd::Zero(size);
    state.decay = decay;
    state.step = step;
    state.epsilon = epsilon;
    return state;
}

Eigen::VectorXd OptimizerState::update(const Eigen::VectorXd& grad) {
    if (grad.size() != sq_grad_avg.size())
        throw std::invalid_argument("optimizer state size mismatch");
    sq_grad_avg = decay * sq_grad_avg + (1.0 - decay) * grad.cwiseProduct(grad);
    ++iterations;
    return step * grad.cwiseQuotient(sq_grad_avg.cwiseSqrt() +
                                     Eigen::VectorXd::Constant(grad.size(), epsilon));
}

// Limited-memory quasi-Newton ascent on the per-patient coordinates with an
// Armijo backtracking line search, so every accepted step improves the
// objective. Exact gradients come from eval_patient.
LocalUpdateResult local_update(const ModelParams& params, const PatientContext& ctx,
                               const LocalVariational& local, int iters, double initial_step) {
    LocalUpdateResult result;
    const LocalPacking packing(params, *ctx.record);
    Eigen::VectorXd coords = packing.pack(local);
    const int dim = packing.size();

    auto value_at = [&](const Eigen::VectorXd& u) {
        return eval_patient(params, ctx, packing.unpack(u), false, false).elbo;
    };

    double current = eval_patient(params, ctx, local, false, false).elbo;
    result.elbo_before = current;
    if (iters <= 0) {
        result.local = local;
        result.elbo_after = current;
        return result;
    }

    constexpr int kMemory = 10;
    std::vector<Eigen::VectorXd> mem_s, mem_y;
    std::vector<double> mem_rho;
    Eigen::VectorXd grad = eval_patient(params, ctx, packing.unpack(coords), true, false).local_grad;
    LocalVariational state = packing.unpack(coords);
    result.status = LocalStatus::kMaxIters;

    for (int it = 0; it < iters; ++it) {
        if (grad.cwiseAbs().maxCoeff() < 1e-11 * (1.0 + std::abs(current))) {
            result.status = LocalStatus::kConverged;
            break;
        }

        // Two-loop recursion for the ascent direction H * grad.
        Eigen::VectorXd direction = grad;
        std::vector<double> alpha(mem_s.size());
        for (std::size_t k = mem_s.size(); k-- > 0;) {
            alpha[k] = mem_rho[k] * mem_s[k].dot(direction);
            direction -= alpha[k] * mem_y[k];
        }
        if (!mem_s.empty()) {
            const Eigen::VectorXd& s = mem_s.back();
            const Eigen::VectorXd& y = mem_y.back();
            direction *= s.dot(y) / y.dot(y);
        } else {
            direction *= initial_step / std::max(1.0, grad.cwiseAbs().maxCoeff());
        }
        for (std::size_t k = 0; k < mem_s.size(); ++k) {
            const double beta = mem_rho[k] * mem_y[k].dot(direction);
            direction += (alpha[k] - beta) * mem_s[k];
        }
        double slope = grad.dot(direction);
        if (!(slope > 0.0) || !direction.allFinite()) {  // fall back to steepest ascent
            direction = grad * (initial_step / std::max(1.0, grad.cwiseAbs().maxCoeff()));
            slope = grad.dot(direction);
            mem_s.clear();
            mem_y.clear();
            mem_rho.clear();
        }

        bool accepted = false;
        double gain = 0.0;
        double step = 1.0;
        Eigen::VectorXd next;
        for (int back = 0; back < 50; ++back) {
            next = coords + step * direction;
            const double value = value_at(next);
            if (std::isfinite(value) && value >= current + 1e-4 * step * slope &&
                value >= current) {
                gain = value - current;
                current = value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            result.status = LocalStatus::kStalled;
            break;
        }

        const Eigen::VectorXd new_grad =
            eval_patient(params, ctx, packing.unpack(next), true, false).local_grad;
        const Eigen::VectorXd s = next - coords;
        const Eigen::VectorXd y = grad - new_grad;  // curvature of the negated objective
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            mem_s.push_back(s);
            mem_y.push_back(y);
            mem_rho.push_back(1.0 / sy);
            if (static_cast<int>(mem_s.size()) > kMemory) {
                mem_s.erase(mem_s.begin());
                mem_y.erase(mem_y.begin());
                mem_rho.erase(mem_rho.begin());
            }
        }
        coords = next;
        grad = new_grad;
        state = packing.unpack(coords);
        if (gain < 1e-13 * (1.0 + std::abs(current))) {
            result.status = LocalStatus::kConverged;
            break;
        }
    }

    result.local = std::move(state);
    result.elbo_after = current;
    return result;
}

double global_update(ModelParams& params, const std::vector<const PatientContext*>& batch,
                     const std::vector<const LocalVariational*>& batch_locals,
                     OptimizerState& state, int n_total, double prior_sd, int workers,
                     const std::vector<int>* frozen_coords) {
    if (batch.empty()) throw std::invalid_argument("global update needs a nonempty batch");
    if (batch.size() != batch_locals.size())
        throw std::invalid_argument("batch contexts and locals must align");

    std::vector<PatientEval> evals(batch.size());
    parallel_for(batch.size(), workers, [&](std::size_t k) {
        evals[k] = eval_patient(params, *batch[k], *batch_locals[k], false, true);
    });

    GlobalGrad acc = GlobalGrad::zero(params.config, params.basis.dimension());
    double batch_elbo = 0.0;
    for (const PatientEval& eval : evals) {
        acc.add(eval.global_grad);
        batch_elbo += eval.elbo;
    }
    const double data_scale = static_cast<double>(n_total) / static_cast<double>(batch.size());
    acc.scale(data_scale);
    acc.add(param_log_prior_grad(params, prior_sd));
    const double estimate = batch_elbo * data_scale + param_log_prior(params, prior_sd);

    const GlobalPacking packing(params.config, params.basis.dimension());
    Eigen::VectorXd grad = acc.pack(params);
    if (frozen_coords != nullptr)
        for (const int k : *frozen_coords) grad[k] = 0.0;
    const Eigen::VectorXd coords = packing.pack(params) + state.update(grad);
    packing.unpack_into(coords, params);
    return estimate;
}

ModelParams init_params(const std::vector<PatientRecord>& patients, const ModelConfig& config,
                        const RngFactory& rng) {
    config.validate();
    if (patients.empty()) throw std::invalid_argument("cannot initialize from an empty cohort");

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const PatientRecord& patient : patients) {
        for (const VarSeries& series : patient.labs) {
            if (series.size() == 0) continue;
            lo = std::min(lo, series.times.minCoeff());
            hi = std::max(hi, series.times.maxCoeff());
        }
    }
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-6) {
        lo -= 0.5;
        hi += 0.5;
    }

    ModelParams params;
    params.config = config;
    params.train_lo = lo;
    params.train_hi = hi;
    params.basis = SplineBasis(config.spline_degree,
                               evenly_spaced_interior(lo, hi, config.interior_knot_count), lo, hi);
    const int basis_dim = params.basis.dimension();
    const int p_count = config.num_variables();

    params.cluster_weights = Eigen::MatrixXd::Zero(config.num_clusters, config.covariate_dim);
    params.rand_eff_cov =
        0.1 * Eigen::MatrixXd::Identity(config.rand_eff_dim(), config.rand_eff_dim());

    const int grid_size = 32;
    Eigen::VectorXd grid(grid_size);
    for (int i = 0; i < grid_size; ++i)
        grid[i] = lo + (hi - lo) * static_cast<double>(i) / (grid_size - 1);
    const Eigen::MatrixXd grid_design = bspline_design(params.basis, grid);

    params.vars.resize(static_cast<std::size_t>(p_count));
    for (int p = 0; p < p_count; ++p) {
        VarParams& vp = params.vars[static_cast<std::size_t>(p)];
        const int gp = config.subpop_counts[static_cast<std::size_t>(p)];

        double sum = 0.0, sum_sq = 0.0;
        Eigen::Index count = 0;
        for (const PatientRecord& patient : patients) {
            const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
            sum += series.values.sum();
            sum_sq += series.values.squaredNorm();
            count += series.size();
        }
        double variance = 1.0;
        if (count >= 2) {
            const double mean = sum / static_cast<double>(count);
            variance = std::max(sum_sq / static_cast<double>(count) - mean * mean, 1e-6);
        }
        vp.kernel.lengthscale = 1.0;
        vp.fixed_effect = Eigen::VectorXd::Zero(config.covariate_dim);
        vp.subpop_mix = Eigen::MatrixXd::Constant(gp, config.num_clusters, 1.0 / gp);

        // Smooth each patient's series onto the basis, then cluster the curves.
        std::vector<Eigen::RowVectorXd> curves;
        for (const PatientRecord& patient : patients) {
            const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
            if (series.size() < 2) continue;
            const Eigen::MatrixXd design = bspline_design(params.basis, series.times);
            Eigen::MatrixXd gram = design.transpose() * design;
            const double ridge = 1e-3 * gram.trace() / basis_dim + 1e-8;
            gram += ridge * Eigen::MatrixXd::Identity(basis_dim, basis_dim);
            const Eigen::VectorXd coef = gram.ldlt().solve(design.transpose() * series.values);
            curves.push_back((grid_design * coef).transpose());
        }

        Rng stream = rng.stream("init-curves", static_cast<std::uint64_t>(p));
        if (static_cast<int>(curves.size()) < std::max(gp, 2)) {
            const double spread = std::sqrt(variance);
            vp.subpop_curves = Eigen::MatrixXd::Zero(gp, basis_dim);
            for (int h = 0; h < gp; ++h)
                for (int j = 0; j < basis_dim; ++j)
                    vp.subpop_curves(h, j) = 0.1 * spread * stream.normal();
        } else {
            Eigen::MatrixXd points(static_cast<Eigen::Index>(curves.size()), grid_size);
            for (Eigen::Index i = 0; i < points.rows(); ++i)
                points.row(i) = curves[static_cast<std::size_t>(i)];
            const Eigen::MatrixXd centroids = kmeans_rows(points, gp, stream);

            // Coefficients from pooled least squares over the raw points of
            // each cluster: individually smoothed curves extrapolate badly at
            // the span edges, pooled raw data does not.
            std::vector<Eigen::MatrixXd> grams(static_cast<std::size_t>(gp));
            std::vector<Eigen::VectorXd> rhs(static_cast<std::size_t>(gp));
            for (int h = 0; h < gp; ++h) {
                grams[static_cast<std::size_t>(h)] = Eigen::MatrixXd::Zero(basis_dim, basis_dim);
                rhs[static_cast<std::size_t>(h)] = Eigen::VectorXd::Zero(basis_dim);
            }
            std::size_t curve_idx = 0;
            for (const PatientRecord& patient : patients) {
                const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
                if (series.size() < 2) continue;
                int best = 0;
                double best_d =
                    (points.row(static_cast<Eigen::Index>(curve_idx)) - centroids.row(0))
                        .squaredNorm();
                for (int h = 1; h < gp; ++h) {
                    const double d =
                        (points.row(static_cast<Eigen::Index>(curve_idx)) - centroids.row(h))
                            .squaredNorm();
                    if (d < best_d) {
                        best_d = d;
                        best = h;
                    }
                }
                const Eigen::MatrixXd design = bspline_design(params.basis, series.times);
                grams[static_cast<std::size_t>(best)] += design.transpose() * design;
                rhs[static_cast<std::size_t>(best)] += design.transpose() * series.values;
                ++curve_idx;
            }
            Eigen::MatrixXd grid_gram = grid_design.transpose() * grid_design;
            grid_gram += 1e-8 * Eigen::MatrixXd::Identity(basis_dim, basis_dim);
            const Eigen::LDLT<Eigen::MatrixXd> grid_solver(grid_gram);
            vp.subpop_curves.resize(gp, basis_dim);
            for (int h = 0; h < gp; ++h) {
                Eigen::MatrixXd& gram = grams[static_cast<std::size_t>(h)];
                if (gram.trace() > 0.0) {
                    const double ridge = 1e-6 * gram.trace() / basis_dim + 1e-10;
                    gram += ridge * Eigen::MatrixXd::Identity(basis_dim, basis_dim);
                    vp.subpop_curves.row(h) =
                        gram.ldlt().solve(rhs[static_cast<std::size_t>(h)]);
                } else {
                    vp.subpop_curves.row(h) = grid_solver.solve(
                        grid_design.transpose() * centroids.row(h).transpose());
                }
            }
        }

        // Split variance into noise and kernel halves on the residual scale:
        // deviations around the best-matching centroid curve, so the kernel
        // starts near the within-subpopulation variability rather than
        // absorbing the separation between curves.
        double resid_variance = variance;
        {
            double resid_sq = 0.0;
            Eigen::Index resid_count = 0;
            for (const PatientRecord& patient : patients) {
                const VarSeries& series = patient.labs[static_cast<std::size_t>(p)];
                if (series.size() == 0) continue;
                const Eigen::MatrixXd design = bspline_design(params.basis, series.times);
                double best = std::numeric_limits<double>::infinity();
                for (int h = 0; h < gp; ++h) {
                    const Eigen::VectorXd fitted =
                        design * vp.subpop_curves.row(h).transpose();
                    best = std::min(best, (series.values - fitted).squaredNorm());
                }
                resid_sq += best;
                resid_count += series.size();
            }
            if (resid_count >= 2)
                resid_variance =
                    std::max(resid_sq / static_cast<double>(resid_count), 1e-6);
        }
        vp.noise_var = resid_variance / 2.0;
        vp.kernel.amplitude = std::sqrt(resid_variance / 2.0);
    }
    params.validate();
    return params;
}

FitResult fit(const std::vector<PatientRecord>& patients, const ModelConfig& config,
              const FitOptions& options, const RngFactory& rng,
              const std::optional<ModelParams>& initial,
              const std::vector<LocalVariational>* initial_locals) {
    if (patients.empty()) throw std::invalid_argument("fit needs a nonempty dataset");
    if (initial_locals != nullptr && initial_locals->size() != patients.size())
        throw std::invalid_argument("initial locals must align with the dataset");
    const int n_total = static_cast<int>(patients.size());
    const int workers = resolve_workers(options.workers);

    FitResult result;
    result.params = initial ? *initial : init_params(patients, config, rng);
    result.params.validate();

    std::vector<PatientContext> contexts(patients.size());
    parallel_for(patients.size(), workers,
                 [&](std::size_t i) { contexts[i] = make_context(result.params, patients[i]); });
    result.locals.resize(patients.size());
    if (initial_locals != nullptr) {
        result.locals = *initial_locals;
    } else {
        parallel_for(patients.size(), workers, [&](std::size_t i) {
            result.locals[i] = init_local(result.params, patients[i]);
        });
    }

    const GlobalPacking packing(config, result.params.basis.dimension());
    const std::vector<int> scale_coords = packing.scale_coordinate_indices();
    OptimizerState opt =
        OptimizerState::make(packing.size(), options.decay, options.step, options.epsilon);

    // Fixed evaluation subsample for the convergence ELBO.
    std::vector<int> eval_idx;
    if (options.eval_subsample > 0 && n_total > options.eval_subsample) {
        Rng stream = rng.stream("eval-subsample");
        std::vector<int> order = seeded_permutation(n_total, stream);
        eval_idx.assign(order.begin(), order.begin() + options.eval_subsample);
        std::sort(eval_idx.begin(), eval_idx.end());
    } else {
        eval_idx.resize(patients.size());
        std::iota(eval_idx.begin(), eval_idx.end(), 0);
    }

    auto eval_elbo = [&]() {
        std::vector<double> values(eval_idx.size());
        parallel_for(eval_idx.size(), workers, [&](std::size_t k) {
            const int i = eval_idx[k];
            values[k] = eval_patient(result.params, contexts[static_cast<std::size_t>(i)],
                                     result.locals[static_cast<std::size_t>(i)], false, false)
                            .elbo;
        });
        double total = 0.0;
        for (const double v : values) total += v;
        total *= static_cast<double>(n_total) / static_cast<double>(eval_idx.size());
        return total + param_log_prior(result.params, options.prior_sd);
    };

    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };

    std::vector<double> epoch_elbos;
    const int batch_size = std::max(1, std::min(options.batch_size, n_total));
    int steps_done = 0;

    for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
        Rng shuffle_stream = rng.stream("shuffle", static_cast<std::uint64_t>(epoch));
        const std::vector<int> order = seeded_permutation(n_total, shuffle_stream);

        int within_epoch_step = 0;
        for (int begin = 0; begin < n_total; begin += batch_size) {
            const int end = std::min(begin + batch_size, n_total);
            std::vector<int> batch_idx(order.begin() + begin, order.begin() + end);

            parallel_for(batch_idx.size(), workers, [&](std::size_t k) {
                const std::size_t i = static_cast<std::size_t>(batch_idx[k]);
                result.locals[i] = local_update(result.params, contexts[i], result.locals[i],
                                                options.local_iters, options.local_step)
                                       .local;
            });

            std::vector<const PatientContext*> batch_ctx;
            std::vector<const LocalVariational*> batch_locals;
            batch_ctx.reserve(batch_idx.size());
            batch_locals.reserve(batch_idx.size());
            for (const int i : batch_idx) {
                batch_ctx.push_back(&contexts[static_cast<std::size_t>(i)]);
                batch_locals.push_back(&result.locals[static_cast<std::size_t>(i)]);
            }
            const std::vector<int>* frozen =
                epoch <= options.freeze_scale_epochs ? &scale_coords : nullptr;
            const double estimate = global_update(result.params, batch_ctx, batch_locals, opt,
                                                  n_total, options.prior_sd, workers, frozen);
            ++steps_done;
            ++within_epoch_step;
            result.trace.push_back({epoch, within_epoch_step, estimate, elapsed()});
        }

        result.epochs_run = epoch;
        const double full = eval_elbo();
        epoch_elbos.push_back(full);
        result.trace.push_back({epoch, 0, full, elapsed()});

        if (options.checkpoint_every > 0 && !options.checkpoint_dir.empty() &&
            epoch % options.checkpoint_every == 0) {
            std::filesystem::create_directories(options.checkpoint_dir);
            save_snapshot(result.params, options.checkpoint_dir + "/snapshot_epoch_" +
                                             std::to_string(epoch) + ".json");
        }

        const int window = std::max(1, options.convergence_window);
        if (static_cast<int>(epoch_elbos.size()) > window) {
            const double prev = epoch_elbos[epoch_elbos.size() - 1 - window];
            const double rel = std::abs(full - prev) / (std::abs(prev) + 1e-12);
            if (rel < options.tol) {
                result.converged = true;
                break;
            }
        }
    }

    // Leave the locals consistent with the final parameters.
    parallel_for(patients.size(), workers, [&](std::size_t i) {
        result.locals[i] = local_update(result.params, contexts[i], result.locals[i],
                                        options.local_iters, options.local_step)
                               .local;
    });
    return result;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open trace file for writing: " + path);
    out << "epoch,step,elbo_estimate,wall_time_seconds\n";
    out.precision(17);
    for (const TraceRow& row : trace)
        out << row.epoch << "," << row.step << "," << row.elbo_estimate << ","
            << row.wall_time_seconds << "\n";
}

}  // namespace trajmix
