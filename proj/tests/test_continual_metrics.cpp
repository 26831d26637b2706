#include <doctest.h>

#include "driftlab/continual_metrics.hpp"
#include "driftlab/model.hpp"
#include "driftlab/world.hpp"

using namespace driftlab;
using continual::AccuracyMatrix;

namespace {

AccuracyMatrix matrix_of(std::vector<std::vector<Scalar>> values) {
    AccuracyMatrix R;
    R.values = std::move(values);
    for (std::size_t t = 0; t < R.values.size(); ++t) {
        R.stage_labels.push_back("stage_" + std::to_string(t + 1));
    }
    for (std::size_t i = 0; i < R.values[0].size(); ++i) {
        R.task_labels.push_back("task_" + std::to_string(i + 1));
    }
    return R;
}

model::ModelConfig tiny_config(std::uint64_t seed) {
    model::ModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.context_len = 32;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.n_blocks = 3;
    cfg.mlp_hidden = 32;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("continual_summary hand matrix [[100,0],[90,100]]") {
    const auto R = matrix_of({{100, 0}, {90, 100}});
    const auto s = continual::continual_summary(R, {1, 2});
    CHECK(s.bwt == doctest::Approx(-10.0));
    CHECK(s.fm == doctest::Approx(10.0));
    CHECK(s.max_drop == doctest::Approx(10.0));
    CHECK(s.avg_perf == doctest::Approx(72.5));
    CHECK(s.max_drop_observed);
}

TEST_CASE("continual_summary constant matrix") {
    const auto R = matrix_of({{50, 50}, {50, 50}});
    const auto s = continual::continual_summary(R, {1, 2});
    CHECK(s.bwt == 0.0);
    CHECK(s.fm == 0.0);
    CHECK(s.max_drop == 0.0);
    CHECK_FALSE(s.max_drop_observed);
}

TEST_CASE("FM equals -BWT when every task peaks at its own stage") {
    const auto R = matrix_of({{80, 10, 5}, {75, 90, 20}, {70, 85, 95}});
    const auto s = continual::continual_summary(R, {1, 2, 3});
    CHECK(s.fm == doctest::Approx(-s.bwt));
}

TEST_CASE("FM >= -BWT always; shifting every entry moves only avg_perf") {
    const auto R = matrix_of({{60, 30}, {50, 80}});
    const auto s = continual::continual_summary(R, {1, 2});
    CHECK(s.fm >= -s.bwt - 1e-12);

    auto shifted_values = R.values;
    for (auto& row : shifted_values) {
        for (auto& v : row) {
            v += 7.0;
        }
    }
    const auto s2 = continual::continual_summary(matrix_of(shifted_values), {1, 2});
    CHECK(s2.bwt == doctest::Approx(s.bwt));
    CHECK(s2.fm == doctest::Approx(s.fm));
    CHECK(s2.max_drop == doctest::Approx(s.max_drop));
    CHECK(s2.avg_perf == doctest::Approx(s.avg_perf + 7.0));
}

TEST_CASE("continual_summary rejects degenerate shapes") {
    const auto R = matrix_of({{10, 20}});
    CHECK_THROWS_AS(continual::continual_summary(R, {1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(continual::continual_summary(R, {1}), std::invalid_argument);
    const auto single = matrix_of({{10}});
    CHECK_THROWS_AS(continual::continual_summary(single, {1}), std::runtime_error);
}

TEST_CASE("interference_matrix") {
    SUBCASE("constant matrix gives all zeros") {
        const auto R = matrix_of({{40, 40}, {40, 40}});
        const auto I = continual::interference_matrix(R, {1, 2});
        for (const auto& row : I.values) {
            for (const Scalar v : row) {
                CHECK(v == 0.0);
            }
        }
        CHECK(I.total == 0.0);
    }
    SUBCASE("hand case: the -10 drop appears for task 1 at stage 2") {
        const auto R = matrix_of({{100, 0}, {90, 100}});
        const auto I = continual::interference_matrix(R, {1, 2});
        REQUIRE(I.values.size() == 1);
        CHECK(I.values[0][0] == doctest::Approx(-10.0));
        CHECK(I.self_mask[0][1]); // task 2 trains at stage 2
        CHECK(I.total == doctest::Approx(-10.0));
    }
    SUBCASE("column sums telescope to last-minus-first") {
        const auto R = matrix_of({{10, 20, 5}, {30, 25, 10}, {15, 40, 60}});
        const auto I = continual::interference_matrix(R, {1, 2, 3});
        for (std::size_t i = 0; i < 3; ++i) {
            Scalar col = 0.0;
            for (std::size_t t = 0; t < I.values.size(); ++t) {
                col += I.values[t][i];
            }
            CHECK(col == doctest::Approx(R.values[2][i] - R.values[0][i]));
        }
    }
    SUBCASE("totals equal the per-cell oracle") {
        const auto R = matrix_of({{10, 20}, {5, 40}});
        const auto I = continual::interference_matrix(R, {1, 2});
        Scalar total = 0.0;
        for (std::size_t t = 0; t < I.values.size(); ++t) {
            for (std::size_t i = 0; i < I.values[t].size(); ++i) {
                if (!I.self_mask[t][i]) {
                    total += I.values[t][i];
                }
            }
        }
        CHECK(I.total == doctest::Approx(total));
    }
    SUBCASE("fewer than two stages is rejected") {
        const auto R = matrix_of({{10}});
        CHECK_THROWS_AS(continual::interference_matrix(R, {1}), std::invalid_argument);
    }
}

TEST_CASE("exact_match_accuracy and accuracy_matrix") {
    const auto mp = model::init_model(tiny_config(50));
    const auto w = world::World(64, 32, 51);
    world::TaskSpec spec{"cls", world::TaskKind::classify_short, 20, 10, 1};
    const auto [train, eval] = w.gen_task(spec, 52);
    (void)train;

    SUBCASE("single checkpoint, single task gives a 1x1 matrix") {
        const auto R = continual::accuracy_matrix({mp}, {{"cls", eval}});
        CHECK(R.n_stages() == 1);
        CHECK(R.n_tasks() == 1);
        CHECK(R.values[0][0] >= 0.0);
        CHECK(R.values[0][0] <= 100.0);
    }
    SUBCASE("a crafted half-correct fixture scores 50") {
        // evaluation set built from the model's own greedy outputs: half the
        // samples keep the decoded target (correct), half get it flipped
        world::Dataset fixture;
        fixture.seed = 0;
        for (int i = 0; i < 10; ++i) {
            world::Sample s = eval.samples[static_cast<std::size_t>(i)];
            const auto decoded = model::greedy_decode(mp, s.prompt(), s.target_len());
            std::copy(decoded.begin(), decoded.end(), s.tokens.begin() + s.prompt_len);
            if (i % 2 == 1) {
                // flip the first target token to a different id
                auto& t = s.tokens[static_cast<std::size_t>(s.prompt_len)];
                t = t == 0 ? 1 : 0;
            }
            fixture.samples.push_back(std::move(s));
        }
        CHECK(continual::exact_match_accuracy(mp, fixture) == doctest::Approx(50.0));
    }
    SUBCASE("perfect model scores 100") {
        world::Dataset fixture;
        for (int i = 0; i < 6; ++i) {
            world::Sample s = eval.samples[static_cast<std::size_t>(i)];
            const auto decoded = model::greedy_decode(mp, s.prompt(), s.target_len());
            std::copy(decoded.begin(), decoded.end(), s.tokens.begin() + s.prompt_len);
            fixture.samples.push_back(std::move(s));
        }
        CHECK(continual::exact_match_accuracy(mp, fixture) == doctest::Approx(100.0));
    }
    SUBCASE("empty eval split is rejected") {
        CHECK_THROWS_AS(continual::exact_match_accuracy(mp, world::Dataset{}),
                        std::invalid_argument);
        CHECK_THROWS_AS(continual::accuracy_matrix({}, {{"cls", eval}}), std::invalid_argument);
    }
}

TEST_CASE("accuracy and interference CSV serialization") {
    const auto R = matrix_of({{100, 0}, {90, 100}});
    const std::string csv = continual::serialize_accuracy_csv(R);
    CHECK(csv.find("stage,task_1,task_2\n") == 0);
    const auto I = continual::interference_matrix(R, {1, 2});
    const std::string icsv = continual::serialize_interference_csv(I);
    CHECK(icsv.find("self") != std::string::npos);
    CHECK(icsv.find("total") != std::string::npos);
}
