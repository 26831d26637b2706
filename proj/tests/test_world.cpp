#include <doctest.h>

#include "driftlab/world.hpp"

#include <cmath>
#include <set>

using namespace driftlab;
using world::Vocab;

namespace {

world::World make_world(std::uint64_t seed = 5) { return world::World(64, 32, seed); }

bool contains_trigger(const world::World& w, const std::vector<TokenId>& tokens) {
    for (const TokenId t : tokens) {
        if (w.vocab().is_trigger(t)) {
            return true;
        }
    }
    return false;
}

} // namespace

TEST_CASE("pretrain generation") {
    const auto w = make_world();

    SUBCASE("harmful_rate 0 produces no trigger prompts at all") {
        const auto ds = w.gen_pretrain(500, 0.0, 11);
        for (const auto& s : ds.samples) {
            CHECK(!contains_trigger(w, s.tokens));
        }
    }
    SUBCASE("trigger-sample count lands in the binomial 99% interval") {
        const auto ds = w.gen_pretrain(1000, 0.3, 12);
        int harmful = 0;
        for (const auto& s : ds.samples) {
            if (contains_trigger(w, s.prompt())) {
                ++harmful;
            }
        }
        // n=1000, p=0.3: 300 +/- 2.576*sqrt(210) ~ [263, 337]
        CHECK(harmful >= 263);
        CHECK(harmful <= 337);
    }
    SUBCASE("same seed gives an identical dataset") {
        const auto a = w.gen_pretrain(200, 0.25, 13);
        const auto b = w.gen_pretrain(200, 0.25, 13);
        REQUIRE(a.samples.size() == b.samples.size());
        for (std::size_t i = 0; i < a.samples.size(); ++i) {
            CHECK(a.samples[i].tokens == b.samples[i].tokens);
            CHECK(a.samples[i].prompt_len == b.samples[i].prompt_len);
        }
    }
    SUBCASE("harmful continuations never contain REFUSE") {
        const auto ds = w.gen_pretrain(500, 1.0, 14);
        for (const auto& s : ds.samples) {
            for (const TokenId t : s.tokens) {
                CHECK(t != Vocab::REFUSE);
            }
        }
    }
    SUBCASE("sample invariants hold and indices are contiguous") {
        const auto ds = w.gen_pretrain(300, 0.3, 15);
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            CHECK(ds.samples[i].index == static_cast<int>(i));
            CHECK_NOTHROW(world::validate(ds.samples[i], 32));
        }
    }
    SUBCASE("bad arguments are rejected") {
        CHECK_THROWS_AS(w.gen_pretrain(0, 0.5, 1), std::invalid_argument);
        CHECK_THROWS_AS(w.gen_pretrain(10, 1.5, 1), std::invalid_argument);
    }
}

TEST_CASE("alignment generation") {
    const auto w = make_world();
    const auto ds = w.gen_alignment(200, 21);

    SUBCASE("every target begins with REFUSE and every prompt has a trigger") {
        for (const auto& s : ds.samples) {
            CHECK(s.target()[0] == Vocab::REFUSE);
            CHECK(contains_trigger(w, s.prompt()));
        }
    }
    SUBCASE("prompts are disjoint from the attack set") {
        const auto attack = w.gen_attack_set(200, 22);
        std::set<std::vector<TokenId>> attack_set(attack.begin(), attack.end());
        for (const auto& s : ds.samples) {
            CHECK(attack_set.count(s.prompt()) == 0);
        }
    }
    SUBCASE("n must be positive") {
        CHECK_THROWS_AS(w.gen_alignment(0, 1), std::invalid_argument);
    }
}

TEST_CASE("attack set generation") {
    const auto w = make_world();
    const auto prompts = w.gen_attack_set(200, 23);
    CHECK(prompts.size() == 200);
    for (const auto& p : prompts) {
        CHECK(contains_trigger(w, p));
    }
    CHECK_THROWS_AS(w.gen_attack_set(0, 1), std::invalid_argument);
}

TEST_CASE("task generation") {
    const auto w = make_world();

    SUBCASE("classify-short targets have length <= 2") {
        world::TaskSpec spec{"cls", world::TaskKind::classify_short, 100, 50, 1};
        const auto [train, eval] = w.gen_task(spec, 31);
        for (const auto& s : train.samples) {
            CHECK(s.target_len() <= 2);
        }
        CHECK(train.samples.size() == 100);
        CHECK(eval.samples.size() == 50);
    }
    SUBCASE("arith-mod answers are recomputable from the prompt") {
        world::TaskSpec spec{"arith", world::TaskKind::arith_mod, 120, 20, 1};
        const auto [train, eval] = w.gen_task(spec, 32);
        const auto& v = w.vocab();
        for (const auto& ds : {train, eval}) {
            for (const auto& s : ds.samples) {
                const int a = s.tokens[2] - v.answer(0);
                const int b = s.tokens[3] - v.answer(0);
                CHECK(s.target()[0] == v.answer((a + b) % v.n_answers));
            }
        }
    }
    SUBCASE("train and eval are disjoint under token-sequence equality") {
        for (const char* kind : {"copy-long", "classify-short", "qa-short", "arith-mod"}) {
            world::TaskSpec spec{"t", world::task_kind_from_string(kind), 150, 40,
                                 world::task_kind_from_string(kind) == world::TaskKind::copy_long
                                     ? 8
                                     : 1};
            const auto [train, eval] = w.gen_task(spec, 33);
            std::set<std::vector<TokenId>> train_set;
            for (const auto& s : train.samples) {
                train_set.insert(s.tokens);
            }
            for (const auto& s : eval.samples) {
                CHECK(train_set.count(s.tokens) == 0);
            }
        }
    }
    SUBCASE("copy-long repeats the prompt content in order") {
        world::TaskSpec spec{"copy", world::TaskKind::copy_long, 50, 10, 8};
        const auto [train, eval] = w.gen_task(spec, 34);
        (void)eval;
        for (const auto& s : train.samples) {
            const auto target = s.target();
            REQUIRE(static_cast<int>(target.size()) == 8);
            for (std::size_t i = 0; i < target.size(); ++i) {
                CHECK(target[i] == s.tokens[2 + i]); // after [BOS, marker]
            }
        }
    }
    SUBCASE("generation is pure: same seed, same datasets") {
        world::TaskSpec spec{"qa", world::TaskKind::qa_short, 60, 30, 1};
        const auto [t1, e1] = w.gen_task(spec, 35);
        const auto [t2, e2] = w.gen_task(spec, 35);
        REQUIRE(t1.samples.size() == t2.samples.size());
        for (std::size_t i = 0; i < t1.samples.size(); ++i) {
            CHECK(t1.samples[i].tokens == t2.samples[i].tokens);
        }
        REQUIRE(e1.samples.size() == e2.samples.size());
        for (std::size_t i = 0; i < e1.samples.size(); ++i) {
            CHECK(e1.samples[i].tokens == e2.samples[i].tokens);
        }
    }
    SUBCASE("invariant violations are rejected") {
        world::TaskSpec bad{"x", world::TaskKind::copy_long, 10, 10, 4}; // answer_len < 8
        CHECK_THROWS_AS(w.gen_task(bad, 1), std::invalid_argument);
        world::TaskSpec bad2{"y", world::TaskKind::classify_short, 10, 10, 3}; // answer_len > 2
        CHECK_THROWS_AS(w.gen_task(bad2, 1), std::invalid_argument);
        world::TaskSpec bad3{"z", world::TaskKind::qa_short, 0, 10, 1};
        CHECK_THROWS_AS(w.gen_task(bad3, 1), std::invalid_argument);
    }
}

TEST_CASE("dataset serialization round-trips") {
    const auto w = make_world();
    const auto ds = w.gen_pretrain(50, 0.4, 41);
    const std::string text = world::serialize_dataset(ds);
    const auto back = world::deserialize_dataset(text);
    REQUIRE(back.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].tokens == ds.samples[i].tokens);
        CHECK(back.samples[i].prompt_len == ds.samples[i].prompt_len);
        CHECK(back.samples[i].task == ds.samples[i].task);
        CHECK(back.samples[i].index == ds.samples[i].index);
    }
}

TEST_CASE("unknown task kind is rejected") {
    CHECK_THROWS_AS(world::task_kind_from_string("translation"), std::invalid_argument);
}
