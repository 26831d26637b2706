#pragma once

#include "driftlab/autodiff.hpp"
#include "driftlab/params.hpp"
#include "driftlab/types.hpp"
#include "driftlab/world.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace driftlab::model {

struct ModelConfig {
    int vocab_size = 64;
    int context_len = 32;
    int d_model = 32;
    int n_heads = 4;
    int n_blocks = 3;
    int mlp_hidden = 64;
    std::uint64_t seed = 0;
};

void validate(const ModelConfig& cfg);
bool operator==(const ModelConfig& a, const ModelConfig& b);

// Trainable arrays in canonical order: embed, block_<i>.{Q,K,V,O,MLP_in,
// MLP_out} for i in 0..n_blocks-1, head. Positional information comes from a
// fixed sinusoidal table, which carries no parameters.
struct ModelParams {
    ModelConfig config;
    ParamSet params;
};

ModelParams init_model(const ModelConfig& cfg);

Index total_param_count(const ModelConfig& cfg);

// Subset names: the canonical array names, the per-block alias
// "block_<i>.MLP" (both MLP arrays), "embed", "head", and the macros
// ALL / MIDDLE / LAST_V / LAST_O / LAST_MLP / LAST_QKVO / LAST_ALL.
struct SubsetSpec {
    std::vector<std::string> entries;
};

// Resolves to canonical array names, deduplicated, in canonical order.
std::vector<std::string> resolve_subset(const ModelConfig& cfg, const SubsetSpec& spec);

struct VectorView {
    Vec values;
    std::vector<Index> index_map; // strictly increasing global coordinates
};

VectorView param_vector_view(const ModelParams& params, const SubsetSpec& spec);

// Full-sequence logits (one row per position) without taping; shares its
// numeric kernels with the graph path.
Mat forward_logits(const ModelParams& params, const std::vector<TokenId>& tokens);

// Mean next-token NLL over the target span only.
Scalar forward_nll(const ModelParams& params, const world::Sample& sample);

// Per-position -log p(correct) over the target span (index 0 = first target
// position). Sum/len of this vector equals forward_nll.
Vec target_logprob_losses(const ModelParams& params, const world::Sample& sample);

// Graph producing the same loss, for gradient work. Token indices are baked
// into the graph, so it is reusable across parameter sets of this config.
autodiff::Graph build_nll_graph(const ModelConfig& cfg, const world::Sample& sample);

// Appends the full forward pass (one logits row per position) to `g` and
// returns the logits node. Shared by the NLL and KL-penalty graphs.
int build_logits_graph(autodiff::Graph& g, const ModelConfig& cfg,
                       const std::vector<TokenId>& tokens);

struct SampleGradient {
    int sample_index = 0;
    Scalar loss = 0.0;
    ParamSet grads;
    Scalar grad_norm = 0.0; // L2 over all trainable parameters
};

SampleGradient sample_gradient(const ModelParams& params, const world::Sample& sample);

std::vector<TokenId> greedy_decode(const ModelParams& params, const std::vector<TokenId>& prompt,
                                   int max_new);

// params + alpha * direction; direction must be unit-norm over the full
// parameter vector.
ModelParams perturb(const ModelParams& params, const Vec& direction, Scalar alpha);

// Binary snapshot: magic, version, config as little-endian integers, then
// 64-bit little-endian reals in canonical array order.
std::string serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::string& bytes);
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

} // namespace driftlab::model
