#include "driftlab/continual_metrics.hpp"
#include "driftlab/direction_analysis.hpp"
#include "driftlab/experiment.hpp"
#include "driftlab/io.hpp"
#include "driftlab/model.hpp"
#include "driftlab/reproduce.hpp"
#include "driftlab/safety_metrics.hpp"
#include "driftlab/training.hpp"
#include "driftlab/world.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace driftlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::optional<std::uint64_t> seed;
    int jobs = 1;
};

experiment::ExperimentConfig load_config(const CommonArgs& args) {
    experiment::ExperimentConfig cfg = args.config_path.empty()
                                           ? reproduce::reproduce_config()
                                           : experiment::load_experiment_config(args.config_path);
    if (args.seed) {
        cfg.seeds = {*args.seed};
    }
    return cfg;
}

std::uint64_t first_seed(const experiment::ExperimentConfig& cfg) { return cfg.seeds.front(); }

training::TrainConfig phase_config(const experiment::PhaseConfig& p, std::uint64_t seed) {
    training::TrainConfig tc;
    tc.lr = p.lr;
    tc.batch_size = p.batch_size;
    tc.epochs = p.epochs;
    tc.seed = seed;
    return tc;
}

world::World make_world(const experiment::ExperimentConfig& cfg, std::uint64_t seed) {
    return world::World(cfg.model.vocab_size, cfg.model.context_len, seed);
}

int cmd_world(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const std::uint64_t seed = first_seed(cfg);
    const auto w = make_world(cfg, seed);
    fs::create_directories(args.out_dir);

    const auto pre = w.gen_pretrain(cfg.pretrain_n, cfg.harmful_rate, derive_seed(seed, 1));
    io::write_text_file(args.out_dir + "/pretrain.tsv", world::serialize_dataset(pre));
    const auto align = w.gen_alignment(cfg.align_n, derive_seed(seed, 2));
    io::write_text_file(args.out_dir + "/alignment.tsv", world::serialize_dataset(align));

    std::string attack_text;
    for (const auto& p : w.gen_attack_set(cfg.attack_n, derive_seed(seed, 3))) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (i > 0) {
                attack_text += ' ';
            }
            attack_text += std::to_string(p[i]);
        }
        attack_text += '\n';
    }
    io::write_text_file(args.out_dir + "/attack.txt", attack_text);

    for (const auto& t : cfg.tasks) {
        const auto [train, eval] = w.gen_task(t, derive_seed(seed, io::fnv1a_bytes(t.name)));
        io::write_text_file(args.out_dir + "/task_" + t.name + "_train.tsv",
                            world::serialize_dataset(train));
        io::write_text_file(args.out_dir + "/task_" + t.name + "_eval.tsv",
                            world::serialize_dataset(eval));
    }
    std::cout << "world written to " << args.out_dir << "\n";
    return kExitOk;
}

int cmd_pretrain(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const std::uint64_t seed = first_seed(cfg);
    const auto w = make_world(cfg, seed);
    fs::create_directories(args.out_dir);

    model::ModelConfig mcfg = cfg.model;
    mcfg.seed = derive_seed(seed, 0);
    auto params = model::init_model(mcfg);
    const auto data = w.gen_pretrain(cfg.pretrain_n, cfg.harmful_rate, derive_seed(seed, 1));
    auto [trained, log] = training::train_task(std::move(params), data,
                                               phase_config(cfg.pretrain, derive_seed(seed, 10)));
    model::save_params(trained, args.out_dir + "/pretrain.params");
    std::cout << "pretrained: final epoch mean loss " << log.epoch_mean_loss.back() << "\n";
    return kExitOk;
}

int cmd_align(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const std::uint64_t seed = first_seed(cfg);
    const auto w = make_world(cfg, seed);

    auto params = model::load_params(args.out_dir + "/pretrain.params");
    const auto data = w.gen_alignment(cfg.align_n, derive_seed(seed, 2));
    auto [aligned, log] = training::train_task(std::move(params), data,
                                               phase_config(cfg.align, derive_seed(seed, 11)));
    model::save_params(aligned, args.out_dir + "/aligned.params");
    std::cout << "aligned: final epoch mean loss " << log.epoch_mean_loss.back() << "\n";
    return kExitOk;
}

int cmd_finetune(const CommonArgs& args, const std::string& method_label) {
    const auto cfg = load_config(args);
    const std::uint64_t seed = first_seed(cfg);
    const auto w = make_world(cfg, seed);

    const auto method = experiment::parse_method(method_label);
    auto aligned = model::load_params(args.out_dir + "/aligned.params");

    world::Dataset mixed;
    int next = 0;
    for (const auto& name : cfg.study_tasks) {
        for (const auto& t : cfg.tasks) {
            if (t.name == name) {
                auto [train, eval] = w.gen_task(t, derive_seed(seed, io::fnv1a_bytes(t.name)));
                (void)eval;
                for (auto& s : train.samples) {
                    s.index = next++;
                    mixed.samples.push_back(std::move(s));
                }
            }
        }
    }

    training::TrainConfig tc = phase_config(cfg.finetune, derive_seed(seed, 30));
    tc.selection.strategy = method.strategy;
    tc.selection.rho = method.rho_override.value_or(cfg.rho);
    tc.selection.scope = selection::Scope::dataset;
    tc.selection.seed = derive_seed(seed, 31);
    tc.clip = method.clip;
    if (method.reg == training::RegKind::ewc) {
        const auto align_ds = w.gen_alignment(cfg.align_n, derive_seed(seed, 2));
        tc.regularizer.kind = training::RegKind::ewc;
        tc.regularizer.lambda = method.reg_strength;
        tc.regularizer.anchor = std::make_shared<model::ModelParams>(aligned);
        tc.regularizer.fisher = training::fisher_diagonal(aligned, align_ds, cfg.fisher_samples,
                                                          derive_seed(seed, 40));
    } else if (method.reg == training::RegKind::kl) {
        tc.regularizer.kind = training::RegKind::kl;
        tc.regularizer.lambda = method.reg_strength;
        tc.regularizer.anchor = std::make_shared<model::ModelParams>(aligned);
    }

    auto [tuned, log] = training::train_task(aligned, mixed, tc);
    const std::string path = args.out_dir + "/finetuned_" + method.label + ".params";
    model::save_params(tuned, path);
    std::cout << "finetuned with " << method.label << " -> " << path << "\n";
    return kExitOk;
}

int cmd_evaluate(const CommonArgs& args, const std::string& params_path,
                 const std::string& pretrain_path, const std::string& aligned_path) {
    const auto cfg = load_config(args);
    const std::uint64_t seed = first_seed(cfg);
    const auto w = make_world(cfg, seed);

    const auto params = model::load_params(params_path);
    const auto attack = w.gen_attack_set(cfg.attack_n, derive_seed(seed, 3));

    safety::SafetyReport rep;
    rep.asr = safety::attack_success_rate(params, attack, world::Vocab::REFUSE);

    safety::SafetyConfig scfg = cfg.safety;
    scfg.seed = derive_seed(seed, 20);
    const std::vector<std::vector<TokenId>> sub(
        attack.begin(),
        attack.begin() +
            std::min<std::size_t>(attack.size(), static_cast<std::size_t>(cfg.landscape_prompts)));
    const auto curves = safety::safety_landscape(params, sub, world::Vocab::REFUSE, scfg);
    rep.visage = safety::visage(curves, scfg.s_max, scfg.exclude_saturated);

    std::vector<std::vector<TokenId>> kl_prompts;
    for (const auto& t : cfg.tasks) {
        const auto [train, eval] = w.gen_task(t, derive_seed(seed, io::fnv1a_bytes(t.name)));
        (void)train;
        for (const auto& s : eval.samples) {
            if (static_cast<int>(kl_prompts.size()) < cfg.kl_prompts) {
                kl_prompts.push_back(s.prompt());
            }
        }
    }
    if (!pretrain_path.empty()) {
        rep.kl_pretrain = safety::kl_to_reference(params, model::load_params(pretrain_path),
                                                  kl_prompts, cfg.kl_positions);
    }
    if (!aligned_path.empty()) {
        const auto aligned = model::load_params(aligned_path);
        rep.kl_aligned = safety::kl_to_reference(params, aligned, kl_prompts, cfg.kl_positions);
        const auto aligned_curves = safety::safety_landscape(aligned, sub, world::Vocab::REFUSE, scfg);
        rep.drift = safety::alignment_drift(
            safety::visage(aligned_curves, scfg.s_max, scfg.exclude_saturated), rep.visage);
    }

    auto j = safety::to_json(rep);
    std::string acc_csv = "task,accuracy\n";
    for (const auto& t : cfg.tasks) {
        const auto [train, eval] = w.gen_task(t, derive_seed(seed, io::fnv1a_bytes(t.name)));
        (void)train;
        acc_csv += t.name + "," +
                   io::format_report(continual::exact_match_accuracy(params, eval)) + "\n";
    }
    fs::create_directories(args.out_dir);
    io::write_text_file(args.out_dir + "/safety_report.json", j.dump() + "\n");
    io::write_text_file(args.out_dir + "/task_accuracy.csv", acc_csv);
    std::cout << j.dump() << "\n";
    return kExitOk;
}

int cmd_landscape(const CommonArgs& args, const std::string& params_path) {
    const auto cfg = load_config(args);
    const std::uint64_t seed = first_seed(cfg);
    const auto w = make_world(cfg, seed);
    const auto params = model::load_params(params_path);
    const auto attack = w.gen_attack_set(cfg.attack_n, derive_seed(seed, 3));
    const std::vector<std::vector<TokenId>> sub(
        attack.begin(),
        attack.begin() +
            std::min<std::size_t>(attack.size(), static_cast<std::size_t>(cfg.landscape_prompts)));
    safety::SafetyConfig scfg = cfg.safety;
    scfg.seed = derive_seed(seed, 20);
    const auto curves = safety::safety_landscape(params, sub, world::Vocab::REFUSE, scfg);
    fs::create_directories(args.out_dir);
    const std::string path = args.out_dir + "/landscape.csv";
    io::write_text_file(path, safety::serialize_landscape_csv(curves));
    std::cout << "VISAGE " << safety::visage(curves, scfg.s_max, scfg.exclude_saturated) << " -> "
              << path << "\n";
    return kExitOk;
}

int cmd_direction_study(const CommonArgs& args, const std::string& aligned_path,
                        const std::string& pretrain_path) {
    const auto cfg = load_config(args);
    const std::uint64_t seed = first_seed(cfg);
    const auto w = make_world(cfg, seed);

    const auto aligned = model::load_params(aligned_path);
    const auto pre = model::load_params(pretrain_path);

    world::Dataset mixed;
    int next = 0;
    for (const auto& t : cfg.tasks) {
        auto [train, eval] = w.gen_task(t, derive_seed(seed, io::fnv1a_bytes(t.name)));
        (void)eval;
        for (auto& s : train.samples) {
            s.index = next++;
            mixed.samples.push_back(std::move(s));
        }
    }

    direction::DirectionStudyConfig dcfg = cfg.direction;
    dcfg.seed = derive_seed(seed, 70);
    for (const auto& name : cfg.direction_subsets) {
        dcfg.subsets.push_back(model::SubsetSpec{{name}});
    }
    if (static_cast<int>(mixed.samples.size()) < dcfg.n_samples) {
        dcfg.n_samples = static_cast<int>(mixed.samples.size());
    }
    const auto rows = direction::direction_study(aligned, pre, mixed, dcfg);
    fs::create_directories(args.out_dir);
    const std::string path = args.out_dir + "/direction.csv";
    io::write_text_file(path, direction::serialize_direction_csv(rows));
    std::cout << "direction study -> " << path << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale continual safety alignment laboratory"};
    app.require_subcommand(1);

    CommonArgs args;
    app.add_option("--config", args.config_path, "flat key=value config file");
    app.add_option("--seed", args.seed, "override run.seeds with a single seed");
    app.add_option("--out", args.out_dir, "output directory");
    app.add_option("--jobs", args.jobs, "parallel seed workers")->check(CLI::PositiveNumber);

    auto* world_cmd = app.add_subcommand("world", "generate and write the synthetic datasets");
    auto* pretrain_cmd = app.add_subcommand("pretrain", "pretrain a fresh model");
    auto* align_cmd = app.add_subcommand("align", "alignment fine-tune out/pretrain.params");
    auto* finetune_cmd =
        app.add_subcommand("finetune", "one fine-tuning stage on the mixed task set");
    std::string method = "moderate";
    finetune_cmd->add_option("--method", method,
                             "selection strategy or baseline (e.g. moderate, clip:0.5, ewc:10)");
    auto* evaluate_cmd = app.add_subcommand("evaluate", "safety report and task accuracy");
    std::string params_path, pretrain_ref, aligned_ref;
    evaluate_cmd->add_option("--params", params_path, "checkpoint to evaluate")->required();
    evaluate_cmd->add_option("--ref-pretrain", pretrain_ref, "pretrained reference checkpoint");
    evaluate_cmd->add_option("--ref-aligned", aligned_ref, "aligned reference checkpoint");
    auto* landscape_cmd = app.add_subcommand("landscape", "safety landscape for a checkpoint");
    std::string landscape_params;
    landscape_cmd->add_option("--params", landscape_params, "checkpoint")->required();
    auto* direction_cmd = app.add_subcommand("direction-study", "TopK-Cosine reversion analysis");
    std::string dir_aligned, dir_pretrain;
    direction_cmd->add_option("--aligned", dir_aligned, "aligned checkpoint")->required();
    direction_cmd->add_option("--pretrain", dir_pretrain, "pretrained checkpoint")->required();
    auto* run_cmd = app.add_subcommand("run", "run the configured experiment grid");
    auto* report_cmd = app.add_subcommand("report", "aggregate logged outputs into report CSVs");
    auto* reproduce_cmd =
        app.add_subcommand("reproduce", "run the full acceptance pipeline and print gate results");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (world_cmd->parsed()) {
            return cmd_world(args);
        }
        if (pretrain_cmd->parsed()) {
            return cmd_pretrain(args);
        }
        if (align_cmd->parsed()) {
            return cmd_align(args);
        }
        if (finetune_cmd->parsed()) {
            return cmd_finetune(args, method);
        }
        if (evaluate_cmd->parsed()) {
            return cmd_evaluate(args, params_path, pretrain_ref, aligned_ref);
        }
        if (landscape_cmd->parsed()) {
            return cmd_landscape(args, landscape_params);
        }
        if (direction_cmd->parsed()) {
            return cmd_direction_study(args, dir_aligned, dir_pretrain);
        }
        if (run_cmd->parsed()) {
            const auto cfg = load_config(args);
            const auto manifest = experiment::run_experiment(cfg, args.out_dir, args.jobs);
            std::cout << "run complete: " << manifest.files.size() << " files, config hash "
                      << manifest.config_hash << "\n";
            return kExitOk;
        }
        if (report_cmd->parsed()) {
            experiment::emit_report(args.out_dir);
            std::cout << "report written under " << args.out_dir << "/report\n";
            return kExitOk;
        }
        if (reproduce_cmd->parsed()) {
            const auto results =
                reproduce::run_reproduce_pipeline(args.out_dir, args.jobs, std::cout);
            return reproduce::all_hard_passed(results) ? kExitOk : kExitRuntime;
        }
    } catch (const experiment::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
