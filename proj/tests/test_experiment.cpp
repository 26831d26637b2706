#include <doctest.h>

#include "driftlab/experiment.hpp"
#include "driftlab/io.hpp"

#include <cmath>
#include <filesystem>

using namespace driftlab;
namespace fs = std::filesystem;

namespace {

// Small but complete configuration: every pipeline feature enabled at toy
// sizes so a full run finishes in seconds.
std::string mini_config_text() {
    return R"(
model.vocab_size = 64
model.context_len = 32
model.d_model = 16
model.n_heads = 4
model.n_blocks = 3
model.mlp_hidden = 32

world.pretrain_n = 200
world.harmful_rate = 0.3
world.align_n = 60
world.attack_n = 24

task.copy.kind = copy-long
task.copy.n_train = 48
task.copy.n_eval = 12
task.copy.answer_len = 8
task.cls.kind = classify-short
task.cls.n_train = 32
task.cls.n_eval = 12
task.cls.answer_len = 1

pretrain.lr = 3e-3
pretrain.batch_size = 16
pretrain.epochs = 1
align.lr = 3e-3
align.batch_size = 16
align.epochs = 1
finetune.lr = 3e-3
finetune.batch_size = 16
finetune.epochs = 1
finetune.rho = 0.25
finetune.fisher_samples = 8

study.enabled = true
study.tasks = copy,cls
study.methods = all,moderate
continual.enabled = true
continual.stages = copy,cls
continual.methods = all,moderate
continual.epochs = 1

safety.n_directions = 4
safety.alpha_points = 5
safety.a_scale = 1.0
safety.s_max = 100.0
safety.landscape_prompts = 8
safety.kl_prompts = 6
safety.kl_positions = 4

direction.enabled = true
direction.k = 200
direction.n_samples = 40
direction.n_permutations = 200
direction.subsets = LAST_V,MIDDLE

run.seeds = 3
)";
}

std::string temp_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("driftlab_test_" + tag);
    fs::remove_all(p);
    return p.string();
}

} // namespace

TEST_CASE("config parsing") {
    SUBCASE("a full config round-trips through the canonical text") {
        const auto cfg = experiment::parse_experiment_config(mini_config_text());
        CHECK(cfg.model.d_model == 16);
        CHECK(cfg.pretrain_n == 200);
        CHECK(cfg.tasks.size() == 2);
        CHECK(cfg.study_methods.size() == 2);
        const auto again = experiment::parse_experiment_config(
            experiment::canonical_config_text(cfg));
        CHECK(experiment::canonical_config_text(again) ==
              experiment::canonical_config_text(cfg));
    }
    SUBCASE("unknown keys are rejected with the offending names") {
        CHECK_THROWS_WITH_AS(
            experiment::parse_experiment_config("model.d_model = 16\nmodel.dmodel = 8\n"),
            doctest::Contains("model.dmodel"), experiment::ConfigError);
    }
    SUBCASE("unknown strategy names are a validation error") {
        std::string bad = mini_config_text();
        const auto at = bad.find("study.methods = all,moderate");
        bad.replace(at, std::string("study.methods = all,moderate").size(),
                    "study.methods = all,extreme");
        CHECK_THROWS_AS(experiment::parse_experiment_config(bad), std::invalid_argument);
    }
    SUBCASE("method grammar") {
        const auto m1 = experiment::parse_method("moderate:0.1");
        CHECK(m1.strategy == selection::Strategy::moderate);
        CHECK(m1.rho_override == doctest::Approx(0.1));
        const auto m2 = experiment::parse_method("clip:0.5");
        CHECK(m2.strategy == selection::Strategy::all);
        CHECK(m2.clip == doctest::Approx(0.5));
        const auto m3 = experiment::parse_method("ewc:10");
        CHECK(m3.reg == training::RegKind::ewc);
        CHECK(m3.reg_strength == doctest::Approx(10.0));
        CHECK_THROWS_AS(experiment::parse_method("clip"), experiment::ConfigError);
    }
    SUBCASE("study referencing a missing task is rejected") {
        std::string bad = mini_config_text();
        const auto at = bad.find("study.tasks = copy,cls");
        bad.replace(at, std::string("study.tasks = copy,cls").size(),
                    "study.tasks = copy,ghost");
        CHECK_THROWS_WITH_AS(experiment::parse_experiment_config(bad), doctest::Contains("ghost"),
                             experiment::ConfigError);
    }
    SUBCASE("duplicate keys are rejected") {
        CHECK_THROWS_AS(
            experiment::parse_experiment_config("model.d_model = 16\nmodel.d_model = 8\n"),
            std::invalid_argument);
    }
}

TEST_CASE("minimal run completes, writes a manifest, and reports aggregate") {
    auto cfg = experiment::parse_experiment_config(mini_config_text());
    // single seed, single method keeps this fast
    cfg.study_methods = {experiment::parse_method("all")};
    cfg.continual_enabled = false;
    cfg.direction_enabled = false;
    const std::string out = temp_dir("minimal");

    const auto manifest = experiment::run_experiment(cfg, out, 1);
    CHECK(manifest.complete);
    CHECK(!manifest.files.empty());
    CHECK(fs::exists(fs::path(out) / "manifest.json"));
    CHECK(fs::exists(fs::path(out) / "seed_3" / "aligned.params"));
    CHECK(fs::exists(fs::path(out) / "seed_3" / "study" / "all" / "eval.json"));
    CHECK(fs::exists(fs::path(out) / "report" / "alignment.csv"));

    // every manifest-listed file exists
    for (const auto& [rel, hash] : manifest.files) {
        (void)hash;
        CHECK(fs::exists(fs::path(out) / rel));
    }

    SUBCASE("emit_report is idempotent on a finished run") {
        const auto before = io::read_text_file((fs::path(out) / "report" / "alignment.csv").string());
        experiment::emit_report(out);
        const auto after = io::read_text_file((fs::path(out) / "report" / "alignment.csv").string());
        CHECK(before == after);
    }
    SUBCASE("single-seed reports have zero std columns") {
        const auto csv = io::read_text_file((fs::path(out) / "report" / "alignment.csv").string());
        // every row after the header: std fields all 0.0000
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line); // header
        while (std::getline(in, line)) {
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
            for (std::size_t i = 2; i < cells.size(); i += 2) {
                CHECK(cells[i] == "0.0000");
            }
        }
    }
}

TEST_CASE("emit_report without a manifest is an error") {
    const std::string out = temp_dir("nomanifest");
    fs::create_directories(out);
    CHECK_THROWS_AS(experiment::emit_report(out), std::runtime_error);
}

TEST_CASE("rho sweep produces one study row per method label") {
    auto cfg = experiment::parse_experiment_config(mini_config_text());
    cfg.continual_enabled = false;
    cfg.direction_enabled = false;
    cfg.study_methods.clear();
    for (const char* m : {"moderate:0.1", "moderate:0.2", "moderate:0.4", "moderate:0.6"}) {
        cfg.study_methods.push_back(experiment::parse_method(m));
    }
    const std::string out = temp_dir("rho_sweep");
    experiment::run_experiment(cfg, out, 1);

    const auto csv = io::read_text_file((fs::path(out) / "report" / "alignment.csv").string());
    for (const char* label : {"moderate:0.1", "moderate:0.2", "moderate:0.4", "moderate:0.6"}) {
        CHECK(csv.find(label) != std::string::npos);
    }
}

TEST_CASE("report aggregation equals hand mean/std on a three-run fixture") {
    // hand-written seed outputs, then emit_report over them
    const std::string out = temp_dir("agg");
    fs::create_directories(fs::path(out) / "seed_1" / "study" / "m");
    fs::create_directories(fs::path(out) / "seed_2" / "study" / "m");
    fs::create_directories(fs::path(out) / "seed_3" / "study" / "m");

    auto eval_json = [&](double asr) {
        return "{\"method\":\"m\",\"asr\":" + io::format_full(asr) +
               ",\"visage\":50,\"drift\":1,\"kl_pretrain\":0.5,\"kl_aligned\":0.25,"
               "\"elastic_force\":1,\"accuracy\":{\"t\":10},\"mean_accuracy\":10}\n";
    };
    io::write_text_file((fs::path(out) / "seed_1" / "study" / "m" / "eval.json").string(),
                        eval_json(0.2));
    io::write_text_file((fs::path(out) / "seed_2" / "study" / "m" / "eval.json").string(),
                        eval_json(0.5));
    io::write_text_file((fs::path(out) / "seed_3" / "study" / "m" / "eval.json").string(),
                        eval_json(0.8));
    io::write_text_file((fs::path(out) / "manifest.json").string(),
                        "{\"config_hash\":\"x\",\"complete\":true,\"seeds\":[1,2,3],\"files\":[]}\n");

    experiment::emit_report(out);
    const auto csv = io::read_text_file((fs::path(out) / "report" / "alignment.csv").string());
    // mean 0.5, population std = sqrt((0.09+0+0.09)/3) = 0.2449
    CHECK(csv.find("m,0.5000,0.2449") != std::string::npos);
}

TEST_CASE("two identical mini runs produce byte-identical trees") {
    auto cfg = experiment::parse_experiment_config(mini_config_text());
    cfg.study_methods = {experiment::parse_method("moderate")};
    cfg.continual_enabled = false;
    cfg.direction_enabled = false;
    cfg.safety.n_directions = 2;

    const std::string a = temp_dir("det_a");
    const std::string b = temp_dir("det_b");
    experiment::run_experiment(cfg, a, 1);
    experiment::run_experiment(cfg, b, 1);
    CHECK(experiment::output_tree_hash(a) == experiment::output_tree_hash(b));
}
