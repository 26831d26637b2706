#include "driftlab/experiment.hpp"

#include "driftlab/continual_metrics.hpp"
#include "driftlab/io.hpp"
#include "driftlab/kernels.hpp"
#include "driftlab/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <thread>

namespace driftlab::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

MethodSpec parse_method(const std::string& text) {
    MethodSpec m;
    m.label = text;
    std::string name = text;
    std::string arg;
    const auto colon = text.find(':');
    if (colon != std::string::npos) {
        name = text.substr(0, colon);
        arg = text.substr(colon + 1);
    }

    if (name == "clip") {
        if (arg.empty()) {
            throw ConfigError("method 'clip' needs a value, e.g. clip:0.5");
        }
        m.strategy = selection::Strategy::all;
        m.clip = std::stod(arg);
    } else if (name == "ewc" || name == "kl") {
        if (arg.empty()) {
            throw ConfigError("method '" + name + "' needs a strength, e.g. " + name + ":10");
        }
        m.strategy = selection::Strategy::all;
        m.reg = training::reg_kind_from_string(name);
        m.reg_strength = std::stod(arg);
    } else {
        m.strategy = selection::strategy_from_string(name); // throws on unknown
        if (!arg.empty()) {
            m.rho_override = std::stod(arg);
        }
    }
    return m;
}

namespace {

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: " + v);
    }
}

Scalar to_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const Scalar x = std::stod(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: " + v);
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': not a boolean: " + v);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : v) {
        if (c == ',') {
            if (!cur.empty()) {
                out.push_back(cur);
            }
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    if (!cur.empty()) {
        out.push_back(cur);
    }
    return out;
}

} // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
    const auto kv = io::parse_flat_config(text);
    ExperimentConfig cfg;

    std::set<std::string> unknown;
    std::map<std::string, std::map<std::string, std::string>> task_fields;

    auto get = [&](std::map<std::string, std::string>& store, const std::string& key) {
        return store.count(key) ? std::optional<std::string>(store.at(key)) : std::nullopt;
    };
    (void)get;

    std::map<std::string, std::string> rest;
    for (const auto& [key, value] : kv) {
        if (key.rfind("task.", 0) == 0) {
            const auto second = key.find('.', 5);
            if (second == std::string::npos) {
                unknown.insert(key);
                continue;
            }
            const std::string name = key.substr(5, second - 5);
            const std::string field = key.substr(second + 1);
            if (field != "kind" && field != "n_train" && field != "n_eval" &&
                field != "answer_len") {
                unknown.insert(key);
                continue;
            }
            task_fields[name][field] = value;
        } else {
            rest[key] = value;
        }
    }

    auto take = [&](const std::string& key) -> std::optional<std::string> {
        auto it = rest.find(key);
        if (it == rest.end()) {
            return std::nullopt;
        }
        std::string v = it->second;
        rest.erase(it);
        return v;
    };

    if (auto v = take("model.vocab_size")) cfg.model.vocab_size = to_int("model.vocab_size", *v);
    if (auto v = take("model.context_len")) cfg.model.context_len = to_int("model.context_len", *v);
    if (auto v = take("model.d_model")) cfg.model.d_model = to_int("model.d_model", *v);
    if (auto v = take("model.n_heads")) cfg.model.n_heads = to_int("model.n_heads", *v);
    if (auto v = take("model.n_blocks")) cfg.model.n_blocks = to_int("model.n_blocks", *v);
    if (auto v = take("model.mlp_hidden")) cfg.model.mlp_hidden = to_int("model.mlp_hidden", *v);

    if (auto v = take("world.pretrain_n")) cfg.pretrain_n = to_int("world.pretrain_n", *v);
    if (auto v = take("world.harmful_rate")) cfg.harmful_rate = to_real("world.harmful_rate", *v);
    if (auto v = take("world.align_n")) cfg.align_n = to_int("world.align_n", *v);
    if (auto v = take("world.attack_n")) cfg.attack_n = to_int("world.attack_n", *v);

    auto phase = [&](const std::string& prefix, PhaseConfig& p) {
        if (auto v = take(prefix + ".lr")) p.lr = to_real(prefix + ".lr", *v);
        if (auto v = take(prefix + ".batch_size")) p.batch_size = to_int(prefix + ".batch_size", *v);
        if (auto v = take(prefix + ".epochs")) p.epochs = to_int(prefix + ".epochs", *v);
    };
    phase("pretrain", cfg.pretrain);
    phase("align", cfg.align);
    phase("finetune", cfg.finetune);
    if (auto v = take("finetune.rho")) cfg.rho = to_real("finetune.rho", *v);
    if (auto v = take("finetune.fisher_samples"))
        cfg.fisher_samples = to_int("finetune.fisher_samples", *v);

    if (auto v = take("study.enabled")) cfg.study_enabled = to_bool("study.enabled", *v);
    if (auto v = take("study.tasks")) cfg.study_tasks = split_list(*v);
    if (auto v = take("study.methods")) {
        cfg.study_methods.clear();
        for (const auto& m : split_list(*v)) {
            cfg.study_methods.push_back(parse_method(m));
        }
    }

    if (auto v = take("continual.enabled")) cfg.continual_enabled = to_bool("continual.enabled", *v);
    if (auto v = take("continual.stages")) cfg.continual_stages = split_list(*v);
    if (auto v = take("continual.methods")) {
        cfg.continual_methods.clear();
        for (const auto& m : split_list(*v)) {
            cfg.continual_methods.push_back(parse_method(m));
        }
    }
    if (auto v = take("continual.epochs")) cfg.continual_epochs = to_int("continual.epochs", *v);

    if (auto v = take("safety.n_directions"))
        cfg.safety.n_directions = to_int("safety.n_directions", *v);
    if (auto v = take("safety.alpha_points"))
        cfg.safety.alpha_points = to_int("safety.alpha_points", *v);
    if (auto v = take("safety.a_scale")) cfg.safety.a_scale = to_real("safety.a_scale", *v);
    if (auto v = take("safety.s_max")) cfg.safety.s_max = to_real("safety.s_max", *v);
    if (auto v = take("safety.exclude_saturated"))
        cfg.safety.exclude_saturated = to_bool("safety.exclude_saturated", *v);
    if (auto v = take("safety.landscape_prompts"))
        cfg.landscape_prompts = to_int("safety.landscape_prompts", *v);
    if (auto v = take("safety.kl_prompts")) cfg.kl_prompts = to_int("safety.kl_prompts", *v);
    if (auto v = take("safety.kl_positions")) cfg.kl_positions = to_int("safety.kl_positions", *v);

    if (auto v = take("direction.enabled")) cfg.direction_enabled = to_bool("direction.enabled", *v);
    if (auto v = take("direction.k")) cfg.direction.k = to_int("direction.k", *v);
    if (auto v = take("direction.n_samples"))
        cfg.direction.n_samples = to_int("direction.n_samples", *v);
    if (auto v = take("direction.n_permutations"))
        cfg.direction.n_permutations = to_int("direction.n_permutations", *v);
    if (auto v = take("direction.subsets")) cfg.direction_subsets = split_list(*v);

    if (auto v = take("run.seeds")) {
        cfg.seeds.clear();
        for (const auto& s : split_list(*v)) {
            cfg.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
        }
    }

    for (const auto& [key, value] : rest) {
        (void)value;
        unknown.insert(key);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) {
            msg += " " + k;
        }
        throw ConfigError(msg);
    }

    for (const auto& [name, fields] : task_fields) {
        world::TaskSpec spec;
        spec.name = name;
        if (!fields.count("kind")) {
            throw ConfigError("task." + name + ": missing kind");
        }
        spec.kind = world::task_kind_from_string(fields.at("kind"));
        spec.answer_len = (spec.kind == world::TaskKind::copy_long) ? 8 : 1;
        if (fields.count("answer_len")) {
            spec.answer_len = to_int("task." + name + ".answer_len", fields.at("answer_len"));
        }
        spec.n_train = fields.count("n_train")
                           ? to_int("task." + name + ".n_train", fields.at("n_train"))
                           : 512;
        spec.n_eval =
            fields.count("n_eval") ? to_int("task." + name + ".n_eval", fields.at("n_eval")) : 128;
        cfg.tasks.push_back(std::move(spec));
    }
    std::sort(cfg.tasks.begin(), cfg.tasks.end(),
              [](const world::TaskSpec& a, const world::TaskSpec& b) { return a.name < b.name; });

    // validate
    try {
        model::validate(cfg.model);
        for (const auto& t : cfg.tasks) {
            world::validate(t);
        }
        safety::validate(cfg.safety);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (cfg.seeds.empty()) {
        throw ConfigError("run.seeds must be nonempty");
    }
    if (!(cfg.rho > 0.0 && cfg.rho <= 1.0)) {
        throw ConfigError("finetune.rho must be in (0,1]");
    }
    auto check_tasks_exist = [&](const std::vector<std::string>& names, const char* where) {
        for (const auto& n : names) {
            const bool found = std::any_of(cfg.tasks.begin(), cfg.tasks.end(),
                                           [&](const world::TaskSpec& t) { return t.name == n; });
            if (!found) {
                throw ConfigError(std::string(where) + " references unknown task: " + n);
            }
        }
    };
    if (cfg.study_enabled) {
        if (cfg.study_tasks.empty() || cfg.study_methods.empty()) {
            throw ConfigError("study enabled but study.tasks or study.methods empty");
        }
        check_tasks_exist(cfg.study_tasks, "study.tasks");
    }
    if (cfg.continual_enabled) {
        if (cfg.continual_stages.empty() || cfg.continual_methods.empty()) {
            throw ConfigError("continual enabled but continual.stages or continual.methods empty");
        }
        check_tasks_exist(cfg.continual_stages, "continual.stages");
    }
    if (cfg.direction_enabled && cfg.tasks.empty()) {
        throw ConfigError("direction study needs at least one task");
    }

    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    return parse_experiment_config(io::read_text_file(path));
}

std::string canonical_config_text(const ExperimentConfig& cfg) {
    std::string out;
    auto put = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
    auto num = [](Scalar x) { return io::format_full(x); };

    put("model.vocab_size", std::to_string(cfg.model.vocab_size));
    put("model.context_len", std::to_string(cfg.model.context_len));
    put("model.d_model", std::to_string(cfg.model.d_model));
    put("model.n_heads", std::to_string(cfg.model.n_heads));
    put("model.n_blocks", std::to_string(cfg.model.n_blocks));
    put("model.mlp_hidden", std::to_string(cfg.model.mlp_hidden));
    put("world.pretrain_n", std::to_string(cfg.pretrain_n));
    put("world.harmful_rate", num(cfg.harmful_rate));
    put("world.align_n", std::to_string(cfg.align_n));
    put("world.attack_n", std::to_string(cfg.attack_n));
    for (const auto& t : cfg.tasks) {
        put("task." + t.name + ".kind", world::to_string(t.kind));
        put("task." + t.name + ".n_train", std::to_string(t.n_train));
        put("task." + t.name + ".n_eval", std::to_string(t.n_eval));
        put("task." + t.name + ".answer_len", std::to_string(t.answer_len));
    }
    auto phase = [&](const std::string& p, const PhaseConfig& c) {
        put(p + ".lr", num(c.lr));
        put(p + ".batch_size", std::to_string(c.batch_size));
        put(p + ".epochs", std::to_string(c.epochs));
    };
    phase("pretrain", cfg.pretrain);
    phase("align", cfg.align);
    phase("finetune", cfg.finetune);
    put("finetune.rho", num(cfg.rho));
    put("finetune.fisher_samples", std::to_string(cfg.fisher_samples));
    auto list = [](const std::vector<std::string>& v) {
        std::string s;
        for (const auto& e : v) {
            if (!s.empty()) s += ",";
            s += e;
        }
        return s;
    };
    put("study.enabled", cfg.study_enabled ? "true" : "false");
    put("study.tasks", list(cfg.study_tasks));
    {
        std::vector<std::string> labels;
        for (const auto& m : cfg.study_methods) labels.push_back(m.label);
        put("study.methods", list(labels));
    }
    put("continual.enabled", cfg.continual_enabled ? "true" : "false");
    put("continual.stages", list(cfg.continual_stages));
    {
        std::vector<std::string> labels;
        for (const auto& m : cfg.continual_methods) labels.push_back(m.label);
        put("continual.methods", list(labels));
    }
    put("continual.epochs", std::to_string(cfg.continual_epochs));
    put("safety.n_directions", std::to_string(cfg.safety.n_directions));
    put("safety.alpha_points", std::to_string(cfg.safety.alpha_points));
    put("safety.a_scale", num(cfg.safety.a_scale));
    put("safety.s_max", num(cfg.safety.s_max));
    put("safety.exclude_saturated", cfg.safety.exclude_saturated ? "true" : "false");
    put("safety.landscape_prompts", std::to_string(cfg.landscape_prompts));
    put("safety.kl_prompts", std::to_string(cfg.kl_prompts));
    put("safety.kl_positions", std::to_string(cfg.kl_positions));
    put("direction.enabled", cfg.direction_enabled ? "true" : "false");
    put("direction.k", std::to_string(cfg.direction.k));
    put("direction.n_samples", std::to_string(cfg.direction.n_samples));
    put("direction.n_permutations", std::to_string(cfg.direction.n_permutations));
    put("direction.subsets", list(cfg.direction_subsets));
    {
        std::string s;
        for (const auto& x : cfg.seeds) {
            if (!s.empty()) s += ",";
            s += std::to_string(x);
        }
        put("run.seeds", s);
    }
    return out;
}

namespace {

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Relative paths of files that belong to the deterministic output tree.
struct FileRegistry {
    std::string root;
    std::vector<std::string> paths;

    void write(const std::string& rel, const std::string& contents) {
        const fs::path full = fs::path(root) / rel;
        fs::create_directories(full.parent_path());
        io::write_text_file(full.string(), contents);
        paths.push_back(rel);
    }
};

struct SeedArtifacts {
    model::ModelParams pretrain;
    model::ModelParams aligned;
    Scalar visage_aligned = 0.0;
};

struct MixedSet {
    world::Dataset data;
    std::vector<std::pair<std::string, world::Dataset>> evals; // task name -> eval split
};

MixedSet build_task_mix(const world::World& w, const std::vector<world::TaskSpec>& tasks,
                        const std::vector<std::string>& names, std::uint64_t seed) {
    MixedSet mix;
    mix.data.seed = seed;
    int next = 0;
    for (const auto& name : names) {
        const auto it = std::find_if(tasks.begin(), tasks.end(),
                                     [&](const world::TaskSpec& t) { return t.name == name; });
        auto [train, eval] = w.gen_task(*it, derive_seed(seed, io::fnv1a_bytes(name)));
        for (auto& s : train.samples) {
            s.index = next++;
            mix.data.samples.push_back(std::move(s));
        }
        mix.evals.emplace_back(name, std::move(eval));
    }
    return mix;
}

std::vector<std::vector<TokenId>> kl_prompt_set(const MixedSet& mix, int want) {
    std::vector<std::vector<TokenId>> prompts;
    std::size_t at = 0;
    while (static_cast<int>(prompts.size()) < want) {
        bool advanced = false;
        for (const auto& [name, eval] : mix.evals) {
            (void)name;
            if (at < eval.samples.size()) {
                prompts.push_back(eval.samples[at].prompt());
                advanced = true;
                if (static_cast<int>(prompts.size()) == want) {
                    break;
                }
            }
        }
        if (!advanced) {
            break;
        }
        ++at;
    }
    return prompts;
}

struct EvalContext {
    const ExperimentConfig* cfg = nullptr;
    const model::ModelParams* pretrain = nullptr;
    const model::ModelParams* aligned = nullptr;
    Scalar visage_aligned = 0.0;
    std::vector<std::vector<TokenId>> attack;            // full set, for ASR
    std::vector<std::vector<TokenId>> landscape_prompts; // subset, for curves
    std::vector<std::vector<TokenId>> kl_prompts;
    std::uint64_t landscape_seed = 0;
};

struct EvalOutput {
    safety::SafetyReport report;
    std::vector<safety::LandscapeCurve> curves;
};

EvalOutput evaluate_checkpoint(const EvalContext& ctx, const model::ModelParams& params) {
    EvalOutput out;
    out.report.asr = safety::attack_success_rate(params, ctx.attack, world::Vocab::REFUSE);
    safety::SafetyConfig scfg = ctx.cfg->safety;
    scfg.seed = ctx.landscape_seed;
    out.curves =
        safety::safety_landscape(params, ctx.landscape_prompts, world::Vocab::REFUSE, scfg);
    out.report.visage = safety::visage(out.curves, scfg.s_max, scfg.exclude_saturated);
    out.report.drift = safety::alignment_drift(ctx.visage_aligned, out.report.visage);
    out.report.kl_pretrain =
        safety::kl_to_reference(params, *ctx.pretrain, ctx.kl_prompts, ctx.cfg->kl_positions);
    out.report.kl_aligned =
        safety::kl_to_reference(params, *ctx.aligned, ctx.kl_prompts, ctx.cfg->kl_positions);
    return out;
}

io::JsonValue accuracy_json(const model::ModelParams& params, const MixedSet& mix,
                            Scalar* mean_out) {
    auto acc = io::JsonValue::object();
    Scalar sum = 0.0;
    for (const auto& [name, eval] : mix.evals) {
        const Scalar a = continual::exact_match_accuracy(params, eval);
        acc.set(name, io::JsonValue::number(a));
        sum += a;
    }
    if (mean_out) {
        *mean_out = mix.evals.empty() ? 0.0 : sum / static_cast<Scalar>(mix.evals.size());
    }
    return acc;
}

std::string selection_ndjson(const training::CheckpointLog& log) {
    std::string out;
    for (const auto& b : log.batches) {
        auto line = io::JsonValue::object()
                        .set("epoch", io::JsonValue::integer(b.epoch))
                        .set("batch", io::JsonValue::integer(b.batch))
                        .set("mean_loss", io::JsonValue::number(b.mean_loss))
                        .set("report", selection::to_json(b.report));
        out += line.dump();
        out += '\n';
    }
    return out;
}

std::string epoch_loss_json(const training::CheckpointLog& log) {
    auto arr = io::JsonValue::array();
    for (const auto e : log.epoch_mean_loss) {
        arr.push(io::JsonValue::number(e));
    }
    return io::JsonValue::object()
        .set("stage_index", io::JsonValue::integer(log.stage_index))
        .set("snapshot_id", io::JsonValue::string(log.snapshot_id))
        .set("epoch_mean_loss", std::move(arr))
        .dump();
}

training::TrainConfig make_train_config(const ExperimentConfig& cfg, const PhaseConfig& phase,
                                        const MethodSpec& method, selection::Scope scope,
                                        std::uint64_t seed) {
    training::TrainConfig tc;
    tc.lr = phase.lr;
    tc.batch_size = phase.batch_size;
    tc.epochs = phase.epochs;
    tc.seed = seed;
    tc.selection.strategy = method.strategy;
    tc.selection.rho = method.rho_override.value_or(cfg.rho);
    tc.selection.scope = scope;
    tc.selection.seed = derive_seed(seed, 0x5e1);
    tc.clip = method.clip;
    return tc;
}

std::string audit_csv(const std::vector<selection::TercileRow>& rows) {
    std::string out = "group,count,mean_grad_norm,mean_loss,mean_target_tokens\n";
    for (const auto& r : rows) {
        out += r.group + "," + std::to_string(r.count) + "," + io::format_full(r.mean_grad_norm) +
               "," + io::format_full(r.mean_loss) + "," + io::format_full(r.mean_target_tokens) +
               "\n";
    }
    return out;
}

void run_seed(const ExperimentConfig& cfg, std::uint64_t seed, FileRegistry& reg) {
    const std::string sd = "seed_" + std::to_string(seed);

    const world::World w(cfg.model.vocab_size, cfg.model.context_len, seed);

    model::ModelConfig mcfg = cfg.model;
    mcfg.seed = derive_seed(seed, 0);
    model::ModelParams theta0 = model::init_model(mcfg);

    // pretrain
    const auto pretrain_ds = w.gen_pretrain(cfg.pretrain_n, cfg.harmful_rate, derive_seed(seed, 1));
    MethodSpec plain;
    plain.label = "all";
    auto ptc = make_train_config(cfg, cfg.pretrain, plain, selection::Scope::batch,
                                 derive_seed(seed, 10));
    auto [theta_pre, pre_log] = training::train_task(std::move(theta0), pretrain_ds, ptc);
    pre_log.stage_index = 0;
    pre_log.snapshot_id = "pretrain.params";
    reg.write(sd + "/pretrain.params", model::serialize_params(theta_pre));
    reg.write(sd + "/log/pretrain.json", epoch_loss_json(pre_log) + "\n");

    // align
    const auto align_ds = w.gen_alignment(cfg.align_n, derive_seed(seed, 2));
    auto atc = make_train_config(cfg, cfg.align, plain, selection::Scope::batch,
                                 derive_seed(seed, 11));
    auto [theta_align, align_log] = training::train_task(theta_pre, align_ds, atc);
    align_log.stage_index = 0;
    align_log.snapshot_id = "aligned.params";
    reg.write(sd + "/aligned.params", model::serialize_params(theta_align));
    reg.write(sd + "/log/align.json", epoch_loss_json(align_log) + "\n");

    // shared evaluation context
    EvalContext ctx;
    ctx.cfg = &cfg;
    ctx.pretrain = &theta_pre;
    ctx.aligned = &theta_align;
    ctx.attack = w.gen_attack_set(cfg.attack_n, derive_seed(seed, 3));
    ctx.landscape_prompts.assign(
        ctx.attack.begin(),
        ctx.attack.begin() + std::min<std::size_t>(ctx.attack.size(),
                                                   static_cast<std::size_t>(cfg.landscape_prompts)));
    ctx.landscape_seed = derive_seed(seed, 20);

    std::vector<std::string> mix_names = cfg.study_tasks;
    if (mix_names.empty()) {
        for (const auto& t : cfg.tasks) {
            mix_names.push_back(t.name);
        }
    }
    const auto mix = build_task_mix(w, cfg.tasks, mix_names, derive_seed(seed, 4));
    ctx.kl_prompts = kl_prompt_set(mix, cfg.kl_prompts);

    // aligned first: its VISAGE anchors every drift value
    {
        safety::SafetyConfig scfg = cfg.safety;
        scfg.seed = ctx.landscape_seed;
        const auto aligned_curves = safety::safety_landscape(theta_align, ctx.landscape_prompts,
                                                             world::Vocab::REFUSE, scfg);
        ctx.visage_aligned = safety::visage(aligned_curves, scfg.s_max, scfg.exclude_saturated);

        safety::SafetyReport rep;
        rep.asr = safety::attack_success_rate(theta_align, ctx.attack, world::Vocab::REFUSE);
        rep.visage = ctx.visage_aligned;
        rep.drift = 0.0;
        rep.kl_pretrain =
            safety::kl_to_reference(theta_align, theta_pre, ctx.kl_prompts, cfg.kl_positions);
        rep.kl_aligned = 0.0;
        Scalar mean_acc = 0.0;
        auto acc = accuracy_json(theta_align, mix, &mean_acc);
        auto j = io::JsonValue::object()
                     .set("checkpoint", io::JsonValue::string("aligned"))
                     .set("asr", io::JsonValue::number(rep.asr))
                     .set("visage", io::JsonValue::number(rep.visage))
                     .set("drift", io::JsonValue::number(rep.drift))
                     .set("kl_pretrain", io::JsonValue::number(rep.kl_pretrain))
                     .set("kl_aligned", io::JsonValue::number(rep.kl_aligned))
                     .set("accuracy", std::move(acc))
                     .set("mean_accuracy", io::JsonValue::number(mean_acc));
        reg.write(sd + "/eval/aligned.json", j.dump() + "\n");
        reg.write(sd + "/eval/aligned_landscape.csv", safety::serialize_landscape_csv(aligned_curves));
    }
    {
        const auto out = evaluate_checkpoint(ctx, theta_pre);
        Scalar mean_acc = 0.0;
        auto acc = accuracy_json(theta_pre, mix, &mean_acc);
        auto j = io::JsonValue::object()
                     .set("checkpoint", io::JsonValue::string("pretrain"))
                     .set("asr", io::JsonValue::number(out.report.asr))
                     .set("visage", io::JsonValue::number(out.report.visage))
                     .set("drift", io::JsonValue::number(out.report.drift))
                     .set("kl_pretrain", io::JsonValue::number(0.0))
                     .set("kl_aligned", io::JsonValue::number(out.report.kl_aligned))
                     .set("accuracy", std::move(acc))
                     .set("mean_accuracy", io::JsonValue::number(mean_acc));
        reg.write(sd + "/eval/pretrain.json", j.dump() + "\n");
        reg.write(sd + "/eval/pretrain_landscape.csv", safety::serialize_landscape_csv(out.curves));
    }

    // sample audit at the aligned checkpoint
    if (cfg.study_enabled) {
        const auto audit = selection::audit_by_gradient_tercile(mix.data, theta_align);
        reg.write(sd + "/study/audit.csv", audit_csv(audit));
    }

    // one-stage study on the mixed task set
    if (cfg.study_enabled) {
        std::optional<Vec> fisher;
        for (std::size_t mi = 0; mi < cfg.study_methods.size(); ++mi) {
            const auto& method = cfg.study_methods[mi];
            auto tc = make_train_config(cfg, cfg.finetune, method, selection::Scope::dataset,
                                        derive_seed(seed, 30 + mi));
            if (method.reg == training::RegKind::ewc) {
                if (!fisher) {
                    fisher = training::fisher_diagonal(theta_align, align_ds, cfg.fisher_samples,
                                                       derive_seed(seed, 40));
                }
                tc.regularizer.kind = training::RegKind::ewc;
                tc.regularizer.lambda = method.reg_strength;
                tc.regularizer.anchor = std::make_shared<model::ModelParams>(theta_align);
                tc.regularizer.fisher = fisher;
            } else if (method.reg == training::RegKind::kl) {
                tc.regularizer.kind = training::RegKind::kl;
                tc.regularizer.lambda = method.reg_strength;
                tc.regularizer.anchor = std::make_shared<model::ModelParams>(theta_align);
            }

            auto [theta_m, log] = training::train_task(theta_align, mix.data, tc);
            log.stage_index = 1;
            log.snapshot_id = "checkpoint.params";
            const std::string md = sd + "/study/" + method.label;
            reg.write(md + "/checkpoint.params", model::serialize_params(theta_m));
            reg.write(md + "/selection.ndjson", selection_ndjson(log));
            reg.write(md + "/train.json", epoch_loss_json(log) + "\n");

            const auto out = evaluate_checkpoint(ctx, theta_m);
            const Scalar force = safety::elastic_force(
                static_cast<int>(mix.data.samples.size()), std::abs(out.report.kl_aligned));
            Scalar mean_acc = 0.0;
            auto acc = accuracy_json(theta_m, mix, &mean_acc);
            auto j = io::JsonValue::object()
                         .set("method", io::JsonValue::string(method.label))
                         .set("asr", io::JsonValue::number(out.report.asr))
                         .set("visage", io::JsonValue::number(out.report.visage))
                         .set("drift", io::JsonValue::number(out.report.drift))
                         .set("kl_pretrain", io::JsonValue::number(out.report.kl_pretrain))
                         .set("kl_aligned", io::JsonValue::number(out.report.kl_aligned))
                         .set("elastic_force", io::JsonValue::number(force))
                         .set("accuracy", std::move(acc))
                         .set("mean_accuracy", io::JsonValue::number(mean_acc));
            reg.write(md + "/eval.json", j.dump() + "\n");
            reg.write(md + "/landscape.csv", safety::serialize_landscape_csv(out.curves));
        }
    }

    // continual pipeline
    if (cfg.continual_enabled) {
        MixedSet stage_mix = build_task_mix(w, cfg.tasks, cfg.continual_stages,
                                            derive_seed(seed, 5));
        // per-stage training sets in stage order
        std::vector<world::Dataset> stage_train;
        {
            std::size_t cursor = 0;
            for (const auto& name : cfg.continual_stages) {
                const auto it = std::find_if(
                    cfg.tasks.begin(), cfg.tasks.end(),
                    [&](const world::TaskSpec& t) { return t.name == name; });
                world::Dataset ds;
                ds.seed = stage_mix.data.seed;
                for (int i = 0; i < it->n_train; ++i) {
                    ds.samples.push_back(stage_mix.data.samples[cursor + i]);
                }
                for (auto& s : ds.samples) {
                    s.index -= static_cast<int>(cursor);
                }
                cursor += static_cast<std::size_t>(it->n_train);
                stage_train.push_back(std::move(ds));
            }
        }

        PhaseConfig stage_phase = cfg.finetune;
        stage_phase.epochs = cfg.continual_epochs;

        for (std::size_t mi = 0; mi < cfg.continual_methods.size(); ++mi) {
            const auto& method = cfg.continual_methods[mi];
            const std::string md = sd + "/continual/" + method.label;

            std::vector<model::ModelParams> checkpoints;
            checkpoints.push_back(theta_align);
            model::ModelParams current = theta_align;
            world::Dataset prev_data = align_ds;

            for (std::size_t t = 0; t < stage_train.size(); ++t) {
                auto tc = make_train_config(cfg, stage_phase, method, selection::Scope::batch,
                                            derive_seed(seed, 50 + 16 * mi + t));
                if (method.reg == training::RegKind::ewc) {
                    tc.regularizer.kind = training::RegKind::ewc;
                    tc.regularizer.lambda = method.reg_strength;
                    tc.regularizer.anchor = std::make_shared<model::ModelParams>(current);
                    tc.regularizer.fisher = training::fisher_diagonal(
                        current, prev_data, cfg.fisher_samples, derive_seed(seed, 60 + t));
                } else if (method.reg == training::RegKind::kl) {
                    tc.regularizer.kind = training::RegKind::kl;
                    tc.regularizer.lambda = method.reg_strength;
                    tc.regularizer.anchor = std::make_shared<model::ModelParams>(theta_align);
                }

                auto [next, log] = training::train_task(std::move(current), stage_train[t], tc);
                log.stage_index = static_cast<int>(t) + 1;
                log.snapshot_id = "stage_" + std::to_string(t + 1) + ".params";
                reg.write(md + "/stage_" + std::to_string(t + 1) + ".params",
                          model::serialize_params(next));
                reg.write(md + "/selection_stage" + std::to_string(t + 1) + ".ndjson",
                          selection_ndjson(log));
                reg.write(md + "/train_stage" + std::to_string(t + 1) + ".json",
                          epoch_loss_json(log) + "\n");

                const auto out = evaluate_checkpoint(ctx, next);
                Scalar mean_acc = 0.0;
                auto acc = accuracy_json(next, stage_mix, &mean_acc);
                auto j = io::JsonValue::object()
                             .set("method", io::JsonValue::string(method.label))
                             .set("stage", io::JsonValue::integer(static_cast<int>(t) + 1))
                             .set("asr", io::JsonValue::number(out.report.asr))
                             .set("visage", io::JsonValue::number(out.report.visage))
                             .set("drift", io::JsonValue::number(out.report.drift))
                             .set("kl_pretrain", io::JsonValue::number(out.report.kl_pretrain))
                             .set("kl_aligned", io::JsonValue::number(out.report.kl_aligned))
                             .set("accuracy", std::move(acc))
                             .set("mean_accuracy", io::JsonValue::number(mean_acc));
                reg.write(md + "/eval_stage" + std::to_string(t + 1) + ".json", j.dump() + "\n");

                checkpoints.push_back(next);
                current = std::move(next);
                prev_data = stage_train[t];
            }

            // post-stage checkpoints only
            std::vector<model::ModelParams> post(checkpoints.begin() + 1, checkpoints.end());
            std::vector<continual::EvalTask> eval_tasks;
            for (const auto& [name, eval] : stage_mix.evals) {
                eval_tasks.push_back({name, eval});
            }
            const auto R = continual::accuracy_matrix(post, eval_tasks);
            std::vector<int> diag;
            for (int i = 0; i < R.n_tasks(); ++i) {
                diag.push_back(i + 1);
            }
            const auto summary = continual::continual_summary(R, diag);
            const auto interf = continual::interference_matrix(R, diag);
            reg.write(md + "/accuracy.csv", continual::serialize_accuracy_csv(R));
            reg.write(md + "/interference.csv", continual::serialize_interference_csv(interf));
            auto sj = io::JsonValue::object()
                          .set("method", io::JsonValue::string(method.label))
                          .set("avg_perf", io::JsonValue::number(summary.avg_perf))
                          .set("bwt", io::JsonValue::number(summary.bwt))
                          .set("fm", io::JsonValue::number(summary.fm))
                          .set("max_drop", io::JsonValue::number(summary.max_drop))
                          .set("max_drop_observed",
                               io::JsonValue::boolean(summary.max_drop_observed))
                          .set("total_interference", io::JsonValue::number(interf.total));
            reg.write(md + "/summary.json", sj.dump() + "\n");
        }
    }

    // direction study at the aligned checkpoint
    if (cfg.direction_enabled) {
        direction::DirectionStudyConfig dcfg = cfg.direction;
        dcfg.seed = derive_seed(seed, 70);
        dcfg.subsets.clear();
        for (const auto& name : cfg.direction_subsets) {
            dcfg.subsets.push_back(model::SubsetSpec{{name}});
        }
        if (static_cast<int>(mix.data.samples.size()) < dcfg.n_samples) {
            dcfg.n_samples = static_cast<int>(mix.data.samples.size());
        }
        const auto rows = direction::direction_study(theta_align, theta_pre, mix.data, dcfg);
        reg.write(sd + "/direction/direction.csv", direction::serialize_direction_csv(rows));

        // TopK vs full-cosine consistency check on the first subset
        if (!dcfg.subsets.empty()) {
            direction::DirectionStudyConfig full = dcfg;
            full.subsets = {dcfg.subsets.front()};
            full.k = static_cast<int>(model::total_param_count(cfg.model));
            const auto full_rows = direction::direction_study(theta_align, theta_pre, mix.data, full);
            std::string out = "metric,subset,HIGH,MOD,r,p\n";
            const auto& topk = rows.front();
            out += "topk_cosine," + topk.subset + "," + io::format_full(topk.mean_high) + "," +
                   io::format_full(topk.mean_mod) + "," + io::format_full(topk.r) + "," +
                   io::format_full(topk.p) + "\n";
            const auto& fr = full_rows.front();
            out += "full_cosine," + fr.subset + "," + io::format_full(fr.mean_high) + "," +
                   io::format_full(fr.mean_mod) + "," + io::format_full(fr.r) + "," +
                   io::format_full(fr.p) + "\n";
            reg.write(sd + "/direction/metric_comparison.csv", out);
        }
    }
}

} // namespace

RunManifest run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, int jobs) {
    if (jobs < 1) {
        throw ConfigError("jobs must be >= 1");
    }
    fs::create_directories(out_dir);

    RunManifest manifest;
    manifest.config_hash = hex64(io::fnv1a_bytes(canonical_config_text(cfg)));
    manifest.seeds = cfg.seeds;

    std::vector<FileRegistry> regs(cfg.seeds.size());
    for (auto& r : regs) {
        r.root = out_dir;
    }

    std::string failure;
    if (jobs == 1 || cfg.seeds.size() == 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
            try {
                run_seed(cfg, cfg.seeds[i], regs[i]);
            } catch (const std::exception& e) {
                failure = "seed " + std::to_string(cfg.seeds[i]) + ": " + e.what();
                break;
            }
        }
    } else {
        // seed-level parallelism; each worker owns its output subtree
        std::vector<std::thread> pool;
        std::vector<std::string> errors(cfg.seeds.size());
        std::size_t next = 0;
        while (next < cfg.seeds.size()) {
            const std::size_t batch =
                std::min<std::size_t>(static_cast<std::size_t>(jobs), cfg.seeds.size() - next);
            for (std::size_t j = 0; j < batch; ++j) {
                const std::size_t idx = next + j;
                pool.emplace_back([&, idx] {
                    try {
                        run_seed(cfg, cfg.seeds[idx], regs[idx]);
                    } catch (const std::exception& e) {
                        errors[idx] = e.what();
                    }
                });
            }
            for (auto& t : pool) {
                t.join();
            }
            pool.clear();
            next += batch;
        }
        for (std::size_t i = 0; i < errors.size(); ++i) {
            if (!errors[i].empty()) {
                failure = "seed " + std::to_string(cfg.seeds[i]) + ": " + errors[i];
                break;
            }
        }
    }

    // merge file registries in seed order
    FileRegistry merged;
    merged.root = out_dir;
    for (const auto& r : regs) {
        merged.paths.insert(merged.paths.end(), r.paths.begin(), r.paths.end());
    }

    manifest.complete = failure.empty();
    manifest.failure = failure;

    // reports are part of the deterministic tree
    if (manifest.complete) {
        // write a provisional manifest so emit_report can find the seeds
        io::write_text_file((fs::path(out_dir) / "manifest.json").string(),
                            io::JsonValue::object()
                                .set("config_hash", io::JsonValue::string(manifest.config_hash))
                                .set("complete", io::JsonValue::boolean(true))
                                .set("seeds",
                                     [&] {
                                         auto a = io::JsonValue::array();
                                         for (const auto s : manifest.seeds) {
                                             a.push(io::JsonValue::integer(
                                                 static_cast<std::int64_t>(s)));
                                         }
                                         return a;
                                     }())
                                .dump() +
                                "\n");
        emit_report(out_dir);
        for (const auto& entry : fs::recursive_directory_iterator(fs::path(out_dir) / "report")) {
            if (entry.is_regular_file()) {
                merged.paths.push_back(
                    fs::relative(entry.path(), fs::path(out_dir)).generic_string());
            }
        }
        std::sort(merged.paths.begin(), merged.paths.end());
    }

    for (const auto& rel : merged.paths) {
        const auto h = io::fnv1a_file((fs::path(out_dir) / rel).string());
        manifest.files.emplace_back(rel, hex64(h));
    }

    auto files = io::JsonValue::array();
    for (const auto& [rel, hash] : manifest.files) {
        files.push(io::JsonValue::object()
                       .set("path", io::JsonValue::string(rel))
                       .set("fnv1a", io::JsonValue::string(hash)));
    }
    auto seeds = io::JsonValue::array();
    for (const auto s : manifest.seeds) {
        seeds.push(io::JsonValue::integer(static_cast<std::int64_t>(s)));
    }
    auto j = io::JsonValue::object()
                 .set("config_hash", io::JsonValue::string(manifest.config_hash))
                 .set("complete", io::JsonValue::boolean(manifest.complete))
                 .set("failure", io::JsonValue::string(manifest.failure))
                 .set("seeds", std::move(seeds))
                 .set("files", std::move(files));
    io::write_text_file((fs::path(out_dir) / "manifest.json").string(), j.dump() + "\n");

    if (!manifest.complete) {
        throw std::runtime_error("run_experiment failed: " + manifest.failure);
    }
    return manifest;
}

namespace {

struct Agg {
    std::vector<Scalar> values;
    void add(Scalar v) { values.push_back(v); }
    Scalar mean() const {
        Scalar s = 0.0;
        for (const auto v : values) {
            s += v;
        }
        return values.empty() ? 0.0 : s / static_cast<Scalar>(values.size());
    }
    Scalar stddev() const { // population
        if (values.empty()) {
            return 0.0;
        }
        const Scalar m = mean();
        Scalar s = 0.0;
        for (const auto v : values) {
            s += (v - m) * (v - m);
        }
        return std::sqrt(s / static_cast<Scalar>(values.size()));
    }
};

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::string cur;
        for (const char c : line) {
            if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        cells.push_back(cur);
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace

void emit_report(const std::string& out_dir) {
    const fs::path root(out_dir);
    const fs::path manifest_path = root / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw std::runtime_error("emit_report: missing manifest at " + manifest_path.string());
    }
    const json manifest = json::parse(io::read_text_file(manifest_path.string()));
    std::vector<std::uint64_t> seeds;
    for (const auto& s : manifest.at("seeds")) {
        seeds.push_back(s.get<std::uint64_t>());
    }
    if (seeds.empty()) {
        throw std::runtime_error("emit_report: manifest lists no seeds");
    }

    auto seed_dir = [&](std::uint64_t s) { return root / ("seed_" + std::to_string(s)); };
    fs::create_directories(root / "report" / "landscape");

    // ---- alignment.csv + study_accuracy.csv --------------------------------
    {
        std::vector<std::string> row_order;
        std::map<std::string, std::map<std::string, Agg>> rows; // label -> field -> agg
        std::map<std::string, std::map<std::string, Agg>> accs; // label -> task -> agg

        auto ingest = [&](const std::string& label, const json& j) {
            if (!rows.count(label)) {
                row_order.push_back(label);
            }
            auto& r = rows[label];
            for (const char* f : {"asr", "visage", "drift", "kl_pretrain", "kl_aligned"}) {
                if (j.contains(f)) {
                    r[f].add(j.at(f).get<Scalar>());
                }
            }
            if (j.contains("accuracy")) {
                for (const auto& [task, acc] : j.at("accuracy").items()) {
                    accs[label][task].add(acc.get<Scalar>());
                }
                accs[label]["mean"].add(j.at("mean_accuracy").get<Scalar>());
            }
        };

        for (const auto s : seeds) {
            for (const char* base : {"aligned", "pretrain"}) {
                const fs::path p = seed_dir(s) / "eval" / (std::string(base) + ".json");
                if (fs::exists(p)) {
                    ingest(base, json::parse(io::read_text_file(p.string())));
                }
            }
            const fs::path study = seed_dir(s) / "study";
            if (fs::exists(study)) {
                std::vector<std::string> methods;
                for (const auto& entry : fs::directory_iterator(study)) {
                    if (entry.is_directory()) {
                        methods.push_back(entry.path().filename().string());
                    }
                }
                std::sort(methods.begin(), methods.end());
                for (const auto& m : methods) {
                    const fs::path p = study / m / "eval.json";
                    if (fs::exists(p)) {
                        ingest(m, json::parse(io::read_text_file(p.string())));
                    }
                }
            }
        }

        std::string out = "method,asr_mean,asr_std,visage_mean,visage_std,drift_mean,drift_std,"
                          "kl_pretrain_mean,kl_pretrain_std,kl_aligned_mean,kl_aligned_std\n";
        for (const auto& label : row_order) {
            auto& r = rows[label];
            out += label;
            for (const char* f : {"asr", "visage", "drift", "kl_pretrain", "kl_aligned"}) {
                out += "," + io::format_report(r[f].mean()) + "," + io::format_report(r[f].stddev());
            }
            out += "\n";
        }
        io::write_text_file((root / "report" / "alignment.csv").string(), out);

        std::string acc_out = "method,task,accuracy_mean,accuracy_std\n";
        for (const auto& label : row_order) {
            if (!accs.count(label)) {
                continue;
            }
            for (auto& [task, agg] : accs[label]) {
                acc_out += label + "," + task + "," + io::format_report(agg.mean()) + "," +
                           io::format_report(agg.stddev()) + "\n";
            }
        }
        io::write_text_file((root / "report" / "study_accuracy.csv").string(), acc_out);
    }

    // ---- continual.csv -----------------------------------------------------
    {
        std::vector<std::string> row_order;
        std::map<std::string, std::map<std::string, Agg>> rows;
        for (const auto s : seeds) {
            const fs::path cont = seed_dir(s) / "continual";
            if (!fs::exists(cont)) {
                continue;
            }
            std::vector<std::string> methods;
            for (const auto& entry : fs::directory_iterator(cont)) {
                if (entry.is_directory()) {
                    methods.push_back(entry.path().filename().string());
                }
            }
            std::sort(methods.begin(), methods.end());
            for (const auto& m : methods) {
                const fs::path p = cont / m / "summary.json";
                if (!fs::exists(p)) {
                    continue;
                }
                const json j = json::parse(io::read_text_file(p.string()));
                if (!rows.count(m)) {
                    row_order.push_back(m);
                }
                for (const char* f : {"avg_perf", "bwt", "fm", "max_drop", "total_interference"}) {
                    rows[m][f].add(j.at(f).get<Scalar>());
                }
            }
        }
        std::string out = "method,avg_perf_mean,avg_perf_std,bwt_mean,bwt_std,fm_mean,fm_std,"
                          "max_drop_mean,max_drop_std,total_interference_mean,"
                          "total_interference_std\n";
        for (const auto& label : row_order) {
            auto& r = rows[label];
            out += label;
            for (const char* f : {"avg_perf", "bwt", "fm", "max_drop", "total_interference"}) {
                out += "," + io::format_report(r[f].mean()) + "," + io::format_report(r[f].stddev());
            }
            out += "\n";
        }
        io::write_text_file((root / "report" / "continual.csv").string(), out);
    }

    // ---- direction.csv -----------------------------------------------------
    {
        std::vector<std::string> row_order;
        std::map<std::string, std::map<std::string, Agg>> rows;
        for (const auto s : seeds) {
            const fs::path p = seed_dir(s) / "direction" / "direction.csv";
            if (!fs::exists(p)) {
                continue;
            }
            const auto csv = parse_csv(io::read_text_file(p.string()));
            for (std::size_t i = 1; i < csv.size(); ++i) {
                const auto& cells = csv[i];
                const std::string& subset = cells[0];
                if (!rows.count(subset)) {
                    row_order.push_back(subset);
                }
                rows[subset]["HIGH"].add(std::stod(cells[1]));
                rows[subset]["MOD"].add(std::stod(cells[2]));
                rows[subset]["r"].add(std::stod(cells[3]));
                rows[subset]["p"].add(std::stod(cells[4]));
            }
        }
        std::string out =
            "subset,HIGH_mean,HIGH_std,MOD_mean,MOD_std,r_mean,r_std,p_mean,p_std\n";
        for (const auto& label : row_order) {
            auto& r = rows[label];
            out += label;
            for (const char* f : {"HIGH", "MOD", "r", "p"}) {
                out += "," + io::format_report(r[f].mean()) + "," + io::format_report(r[f].stddev());
            }
            out += "\n";
        }
        io::write_text_file((root / "report" / "direction.csv").string(), out);
    }

    // ---- landscape/<label>.csv (long format) -------------------------------
    {
        auto aggregate_curves = [&](const std::string& label,
                                    const std::function<fs::path(std::uint64_t)>& src) {
            std::vector<std::pair<int, Scalar>> keys; // (direction, alpha) in file order
            std::map<std::string, Agg> cells;
            bool any = false;
            for (const auto s : seeds) {
                const fs::path p = src(s);
                if (!fs::exists(p)) {
                    continue;
                }
                any = true;
                const auto csv = parse_csv(io::read_text_file(p.string()));
                for (std::size_t i = 1; i < csv.size(); ++i) {
                    const int dir = std::stoi(csv[i][0]);
                    const Scalar alpha = std::stod(csv[i][1]);
                    const Scalar sval = std::stod(csv[i][2]);
                    const std::string key = csv[i][0] + "," + csv[i][1];
                    if (!cells.count(key)) {
                        keys.emplace_back(dir, alpha);
                    }
                    cells[key].add(sval);
                }
            }
            if (!any) {
                return;
            }
            std::string out = "direction,alpha,S_mean,S_std\n";
            for (const auto& [dir, alpha] : keys) {
                const std::string key =
                    std::to_string(dir) + "," + io::format_full(alpha);
                auto& agg = cells[key];
                out += std::to_string(dir) + "," + io::format_report(alpha) + "," +
                       io::format_report(agg.mean()) + "," + io::format_report(agg.stddev()) + "\n";
            }
            io::write_text_file((root / "report" / "landscape" / (label + ".csv")).string(), out);
        };

        aggregate_curves("aligned", [&](std::uint64_t s) {
            return seed_dir(s) / "eval" / "aligned_landscape.csv";
        });
        aggregate_curves("pretrain", [&](std::uint64_t s) {
            return seed_dir(s) / "eval" / "pretrain_landscape.csv";
        });
        std::set<std::string> methods;
        for (const auto s : seeds) {
            const fs::path study = seed_dir(s) / "study";
            if (!fs::exists(study)) {
                continue;
            }
            for (const auto& entry : fs::directory_iterator(study)) {
                if (entry.is_directory()) {
                    methods.insert(entry.path().filename().string());
                }
            }
        }
        for (const auto& m : methods) {
            aggregate_curves(m, [&](std::uint64_t s) {
                return seed_dir(s) / "study" / m / "landscape.csv";
            });
        }
    }
}

std::string output_tree_hash(const std::string& out_dir) {
    const json manifest =
        json::parse(io::read_text_file((fs::path(out_dir) / "manifest.json").string()));
    std::string combined;
    for (const auto& f : manifest.at("files")) {
        combined += f.at("path").get<std::string>();
        combined += ":";
        combined += f.at("fnv1a").get<std::string>();
        combined += "\n";
    }
    return hex64(io::fnv1a_bytes(combined));
}

} // namespace driftlab::experiment
