#pragma once

#include "driftlab/model.hpp"
#include "driftlab/types.hpp"
#include "driftlab/world.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace driftlab::direction {

struct DirectionStudyConfig {
    int k = 1000;
    std::vector<model::SubsetSpec> subsets;
    int n_samples = 500;
    Scalar high_quantile = 0.2; // HIGH = top 20% by gradient norm
    Scalar mod_band = 0.2;      // MOD = middle 20%
    int n_permutations = 10000;
    std::uint64_t seed = 0;
};

void validate(const DirectionStudyConfig& cfg);

struct DirectionRow {
    std::string subset;
    Scalar mean_high = 0.0; // mean TopK-Cosine over the HIGH band
    Scalar mean_mod = 0.0;  // mean TopK-Cosine over the MOD band
    Scalar r = 0.0;
    Scalar p = 0.0;
};

// r = theta_pretrain - theta_aligned in canonical flattening order.
Vec reversion_direction(const model::ModelParams& pre, const model::ModelParams& aligned);

// Cosine between g and r restricted to the min(k, |subset|) subset
// coordinates with largest |r_j| (ties to lower coordinate); 0 when either
// restricted vector vanishes.
Scalar topk_cosine(const Vec& g, const Vec& r, const std::vector<Index>& subset_coords, int k);

// Pearson r with a two-sided seeded permutation p-value:
// p = (1 + #{|r_perm| >= |r_obs|}) / (1 + n_permutations).
std::pair<Scalar, Scalar> pearson_r_p(const std::vector<Scalar>& x, const std::vector<Scalar>& y,
                                      int n_permutations, std::uint64_t seed);

// Core analysis on precomputed per-sample records: gradient norms plus the
// per-sample gradient restricted to whatever the caller wants to study.
struct GradientSample {
    Scalar grad_norm = 0.0;
    Vec grad; // full-length gradient vector
};

std::vector<DirectionRow> direction_study_from_gradients(
    const std::vector<GradientSample>& samples, const Vec& reversion,
    const std::vector<std::pair<std::string, std::vector<Index>>>& subsets,
    const DirectionStudyConfig& cfg);

std::vector<DirectionRow> direction_study(const model::ModelParams& aligned,
                                          const model::ModelParams& pre,
                                          const world::Dataset& dataset,
                                          const DirectionStudyConfig& cfg);

std::string serialize_direction_csv(const std::vector<DirectionRow>& rows);

} // namespace driftlab::direction
