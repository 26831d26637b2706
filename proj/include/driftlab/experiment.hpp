#pragma once

#include "driftlab/direction_analysis.hpp"
#include "driftlab/model.hpp"
#include "driftlab/safety_metrics.hpp"
#include "driftlab/selection.hpp"
#include "driftlab/training.hpp"
#include "driftlab/types.hpp"
#include "driftlab/world.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace driftlab::experiment {

// Invalid configs carry the offending keys; the CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// A method is a row of the study grid: a selection strategy plus optional
// clipping or regularization. Labels like "moderate", "moderate:0.1",
// "clip:0.5", "ewc:10", "kl:1".
struct MethodSpec {
    std::string label;
    selection::Strategy strategy = selection::Strategy::all;
    std::optional<Scalar> rho_override;
    std::optional<Scalar> clip;
    training::RegKind reg = training::RegKind::none;
    Scalar reg_strength = 0.0;
};

MethodSpec parse_method(const std::string& text);

struct PhaseConfig {
    Scalar lr = 3e-3;
    int batch_size = 32;
    int epochs = 2;
};

struct ExperimentConfig {
    model::ModelConfig model; // seed field unused; derived per run seed

    int pretrain_n = 20000;
    Scalar harmful_rate = 0.25;
    int align_n = 400;
    int attack_n = 200;

    std::vector<world::TaskSpec> tasks;

    PhaseConfig pretrain{3e-3, 32, 2};
    PhaseConfig align{3e-3, 32, 2};
    PhaseConfig finetune{3e-3, 32, 3};
    Scalar rho = 0.2;

    bool study_enabled = true;
    std::vector<std::string> study_tasks;
    std::vector<MethodSpec> study_methods;

    bool continual_enabled = true;
    std::vector<std::string> continual_stages;
    std::vector<MethodSpec> continual_methods;
    int continual_epochs = 2;

    safety::SafetyConfig safety;
    int landscape_prompts = 64; // attack-prompt subset used inside landscapes
    int kl_prompts = 48;
    int kl_positions = 8;
    int fisher_samples = 200;

    bool direction_enabled = true;
    direction::DirectionStudyConfig direction;
    std::vector<std::string> direction_subsets = {"LAST_V", "LAST_O", "LAST_MLP", "LAST_QKVO",
                                                  "MIDDLE"};

    std::vector<std::uint64_t> seeds = {1, 2, 3};
};

ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical flat rendering; its hash identifies the configuration.
std::string canonical_config_text(const ExperimentConfig& cfg);

struct RunManifest {
    std::string config_hash;
    std::vector<std::uint64_t> seeds;
    bool complete = false;
    std::string failure; // last good stage note when incomplete
    std::vector<std::pair<std::string, std::string>> files; // path (relative), fnv-1a hex
};

// Full study: per seed, pretrain -> align -> study methods -> continual
// methods -> direction study, then report emission and a manifest. Output
// tree bytes depend only on (config, seeds).
RunManifest run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, int jobs = 1);

// Aggregates logged per-seed JSON/CSV into report/*.csv (mean +/- std across
// seeds). Requires an existing manifest in out_dir.
void emit_report(const std::string& out_dir);

// Hash of every manifest-listed file, for determinism comparisons.
std::string output_tree_hash(const std::string& out_dir);

} // namespace driftlab::experiment
