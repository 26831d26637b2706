#pragma once

#include "driftlab/model.hpp"
#include "driftlab/selection.hpp"
#include "driftlab/types.hpp"
#include "driftlab/world.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace driftlab::training {

enum class RegKind { none, ewc, kl };

RegKind reg_kind_from_string(const std::string& s);

struct RegularizerSpec {
    RegKind kind = RegKind::none;
    Scalar lambda = 0.0;
    std::shared_ptr<const model::ModelParams> anchor; // ewc and kl
    std::optional<Vec> fisher;                        // ewc only
};

void validate(const RegularizerSpec& spec);

struct TrainConfig {
    Scalar lr = 3e-3;
    std::pair<Scalar, Scalar> betas = {0.9, 0.999};
    Scalar eps = 1e-8;
    Scalar weight_decay = 0.0;
    int batch_size = 32;
    int epochs = 2;
    std::optional<Scalar> clip;
    selection::SelectionConfig selection;
    RegularizerSpec regularizer;
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

struct AdamWState {
    Vec m;
    Vec v;
    long step = 0;
};

AdamWState make_adamw_state(Index n);

// Standard AdamW: bias-corrected moments, decoupled weight decay.
std::pair<AdamWState, Vec> optimizer_step(AdamWState state, Vec params, const Vec& grad,
                                          const TrainConfig& cfg);

// Rescale to L2 norm c when above it; unchanged otherwise.
Vec clip_gradient(Vec grad, Scalar c);

// Empirical diagonal Fisher: mean of elementwise squared per-sample gradients
// over a seeded draw of n_samples from the dataset.
Vec fisher_diagonal(const model::ModelParams& params, const world::Dataset& dataset,
                    int n_samples, std::uint64_t seed);

// penalty = (lambda/2) * sum_j F_j (theta_j - anchor_j)^2, grad = lambda*F.(theta-anchor)
std::pair<Scalar, Vec> ewc_penalty_and_grad(const Vec& theta, const Vec& anchor, const Vec& fisher,
                                            Scalar lambda);

// penalty = beta * mean over batch target positions of KL(p_theta || p_ref);
// gradient through the autodiff graph with the reference as constant.
std::pair<Scalar, Vec> kl_penalty_and_grad(const model::ModelParams& params,
                                           const model::ModelParams& ref_params,
                                           const std::vector<world::Sample>& batch, Scalar beta);

struct BatchLog {
    int epoch = 0;
    int batch = 0;
    Scalar mean_loss = 0.0; // over all records of the batch
    selection::SelectionReport report;
};

struct CheckpointLog {
    int stage_index = 0;
    std::string snapshot_id;
    std::vector<Scalar> epoch_mean_loss;
    std::vector<BatchLog> batches;
};

std::pair<model::ModelParams, CheckpointLog> train_task(model::ModelParams params,
                                                        const world::Dataset& train,
                                                        const TrainConfig& cfg);

struct Stage {
    std::string name;
    world::Dataset train;
    TrainConfig cfg;
};

// Invoked after each stage with (stage index, params); stage index 0 is the
// initial model before any stage runs.
using StageHook = std::function<void(int, const model::ModelParams&)>;

struct ContinualResult {
    std::vector<model::ModelParams> checkpoints; // [0]=initial, then one per stage
    std::vector<CheckpointLog> logs;
};

ContinualResult run_continual(const model::ModelParams& init, const std::vector<Stage>& stages,
                              const StageHook& hook = {});

} // namespace driftlab::training
