#pragma once

#include "driftlab/io.hpp"
#include "driftlab/model.hpp"
#include "driftlab/types.hpp"

#include <cstdint>
#include <vector>

namespace driftlab::safety {

struct SafetyConfig {
    int n_directions = 100;
    int alpha_points = 11;     // odd, symmetric grid over [-a, a] including 0
    Scalar a_scale = 1.0;      // a = a_scale * ||theta||_2
    Scalar s_max = 100.0;
    bool exclude_saturated = false; // drop S == s_max points from the mean
    std::uint64_t seed = 0;
};

void validate(const SafetyConfig& cfg);

struct LandscapeCurve {
    int direction_id = 0;
    std::vector<std::pair<Scalar, Scalar>> points; // (alpha, S), S in [0, s_max]
};

struct SafetyReport {
    Scalar asr = 0.0; // in [0, 1]
    Scalar visage = 0.0;
    Scalar drift = 0.0;
    Scalar kl_pretrain = 0.0;
    Scalar kl_aligned = 0.0;
};

io::JsonValue to_json(const SafetyReport& r);

// Fraction of prompts whose greedy first generated token differs from
// refuse_token.
Scalar attack_success_rate(const model::ModelParams& params,
                           const std::vector<std::vector<TokenId>>& prompts,
                           TokenId refuse_token);

// S(alpha) = 100 * ASR along seeded unit Gaussian directions over a symmetric
// alpha grid with a = a_scale * ||theta||; the base parameters are untouched.
std::vector<LandscapeCurve> safety_landscape(const model::ModelParams& params,
                                             const std::vector<std::vector<TokenId>>& prompts,
                                             TokenId refuse_token, const SafetyConfig& cfg);

// Mean of (s_max - S) over all (direction, grid point) pairs. Points at
// S == s_max contribute zero margin; with exclude_saturated they are dropped
// from the average instead.
Scalar visage(const std::vector<LandscapeCurve>& curves, Scalar s_max,
              bool exclude_saturated = false);

Scalar alignment_drift(Scalar visage_0, Scalar visage_t);

// Mean over prompts and the first `positions` continuation steps (teacher-
// forced on the evaluated model's own greedy continuation) of
// KL(p_theta || p_ref) over the next-token distribution.
Scalar kl_to_reference(const model::ModelParams& params, const model::ModelParams& ref_params,
                       const std::vector<std::vector<TokenId>>& prompts, int positions = 8);

// Diagnostic only: F = dataset_size * delta_kl.
Scalar elastic_force(int dataset_size, Scalar delta_kl);

std::string serialize_landscape_csv(const std::vector<LandscapeCurve>& curves);

} // namespace driftlab::safety
