#pragma once

#include <vector>

#include "trajmix/model.hpp"
#include "trajmix/pipeline.hpp"
#include "trajmix/rng.hpp"

namespace trajmix {

struct CovariateGen {
    enum class Kind { kNormal, kBernoulli };
    Kind kind = Kind::kNormal;
    double mean = 0.0;  // normal mean / bernoulli probability
    double sd = 1.0;
};

struct VarMissingness {
    double p_unobserved = 0.0;  // chance the variable is entirely absent
    int min_count = 4;          // otherwise uniform count in [min, max]
    int max_count = 12;
    double t_lo = 0.0;  // observation times uniform over [t_lo, t_hi], sorted
    double t_hi = 8.0;
};

struct SimulateSpec {
    std::vector<CovariateGen> covariates;    // entries beyond the intercept
    std::vector<VarMissingness> missingness;  // one per variable
};

/// Samples a cohort from the generative model, returning ground-truth latents
/// alongside. Per-patient streams keep the output independent of scheduling.
CohortDataset simulate_cohort(const ModelParams& params, int n, const SimulateSpec& spec,
                              const RngFactory& rng, std::vector<LatentState>* truth_out);

/// A fully specified parameter set for benchmarks: subpopulation curves
/// separated by `separation_sds` noise standard deviations, equicorrelated
/// random-effect intercepts with correlation `rand_eff_corr`, and mixing
/// matrices concentrated on a cluster-linked subpopulation.
ModelParams make_demo_params(const ModelConfig& config, double t_lo, double t_hi,
                             double noise_sd, double separation_sds, double rand_eff_corr,
                             const RngFactory& rng);

}  // namespace trajmix
