#pragma once

#include "driftlab/io.hpp"
#include "driftlab/model.hpp"
#include "driftlab/types.hpp"
#include "driftlab/world.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace driftlab::selection {

struct GradientRecord {
    int sample_index = 0;
    Scalar loss = 0.0;      // L_i
    Scalar grad_norm = 0.0; // G_i
};

enum class Strategy { moderate, high, low, random, all };

Strategy strategy_from_string(const std::string& s);
std::string to_string(Strategy s);

// scope::batch re-ranks at current parameters inside every batch; scope
// ::dataset ranks once at stage-initial parameters over the whole set.
enum class Scope { batch, dataset };

struct SelectionConfig {
    Strategy strategy = Strategy::all;
    Scalar rho = 0.2;
    Scope scope = Scope::batch;
    std::uint64_t seed = 0;
};

void validate(const SelectionConfig& cfg);

struct GroupStats {
    int count = 0;
    Scalar mean_loss = 0.0;
    Scalar mean_grad_norm = 0.0;
};

struct SelectionReport {
    int candidate_count = 0;
    std::vector<int> selected_indices;
    Scalar mu_loss = 0.0;
    Scalar sigma_loss = 0.0;
    Scalar mu_grad = 0.0; // median gradient norm of the candidates
    GroupStats selected;
    GroupStats unselected;
};

io::JsonValue to_json(const SelectionReport& r);

// Keep records with L_i in [mu_L - sigma_L, mu_L + sigma_L] (population
// sigma, boundary kept). sigma == 0 keeps everything. Returns sample indices.
std::vector<int> loss_prefilter(const std::vector<GradientRecord>& records);

// The k = floor(rho*batch_size) candidates closest to the median gradient
// norm, distance ties broken by lower sample index.
std::vector<int> moderate_select(const std::vector<GradientRecord>& candidates, Scalar rho,
                                 int batch_size);

std::vector<int> strategy_select(const SelectionConfig& cfg,
                                 const std::vector<GradientRecord>& records, int batch_size);

// Same as strategy_select, also filling a per-batch report.
std::vector<int> strategy_select(const SelectionConfig& cfg,
                                 const std::vector<GradientRecord>& records, int batch_size,
                                 SelectionReport& report);

struct TercileRow {
    std::string group; // "low", "moderate", "high"
    int count = 0;
    Scalar mean_grad_norm = 0.0;
    Scalar mean_loss = 0.0;
    Scalar mean_target_tokens = 0.0;
};

// Partition a dataset into gradient-norm terciles at the given parameters and
// report per-group means. Group sizes differ by at most one (extras go to the
// earlier groups).
std::vector<TercileRow> audit_by_gradient_tercile(const world::Dataset& dataset,
                                                  const model::ModelParams& params);

std::vector<TercileRow> audit_terciles_from_records(const std::vector<GradientRecord>& records,
                                                    const std::vector<int>& target_lens);

} // namespace driftlab::selection
