#include <doctest.h>

#include "driftlab/rng.hpp"
#include "driftlab/selection.hpp"
#include "driftlab/training.hpp"

#include <algorithm>
#include <cmath>

using namespace driftlab;
using selection::GradientRecord;
using selection::SelectionConfig;
using selection::Strategy;

namespace {

std::vector<GradientRecord> records_from(std::initializer_list<Scalar> losses,
                                         std::initializer_list<Scalar> norms) {
    std::vector<GradientRecord> out;
    auto l = losses.begin();
    auto g = norms.begin();
    int i = 0;
    for (; l != losses.end(); ++l, ++g, ++i) {
        out.push_back({i, *l, *g});
    }
    return out;
}

// brute-force oracle: sort by (|G - median|, index), take k
std::vector<int> moderate_oracle(const std::vector<GradientRecord>& rs, int k) {
    std::vector<Scalar> g;
    for (const auto& r : rs) {
        g.push_back(r.grad_norm);
    }
    std::sort(g.begin(), g.end());
    const Scalar med = g.size() % 2 == 1 ? g[g.size() / 2]
                                         : 0.5 * (g[g.size() / 2 - 1] + g[g.size() / 2]);
    std::vector<GradientRecord> sorted = rs;
    std::stable_sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
        const Scalar da = std::abs(a.grad_norm - med), db = std::abs(b.grad_norm - med);
        if (da != db) {
            return da < db;
        }
        return a.sample_index < b.sample_index;
    });
    std::vector<int> out;
    for (int i = 0; i < k && i < static_cast<int>(sorted.size()); ++i) {
        out.push_back(sorted[static_cast<std::size_t>(i)].sample_index);
    }
    return out;
}

} // namespace

TEST_CASE("loss_prefilter hand case: [1,1,1,10]") {
    const auto rs = records_from({1, 1, 1, 10}, {1, 1, 1, 1});
    const auto kept = selection::loss_prefilter(rs);
    CHECK(kept == std::vector<int>{0, 1, 2}); // the 10 falls outside [mu-sigma, mu+sigma]
}

TEST_CASE("loss_prefilter keeps everything when sigma is zero") {
    const auto rs = records_from({2, 2, 2, 2}, {1, 2, 3, 4});
    CHECK(selection::loss_prefilter(rs).size() == 4);
}

TEST_CASE("loss_prefilter keeps boundary losses") {
    // losses {0, 2}: mu=1, sigma=1, band [0, 2] -> both kept
    const auto rs = records_from({0, 2}, {1, 1});
    CHECK(selection::loss_prefilter(rs).size() == 2);
}

TEST_CASE("loss_prefilter retains ~68.3% of iid Gaussian losses") {
    Rng rng(2024);
    std::vector<GradientRecord> rs;
    for (int i = 0; i < 10000; ++i) {
        rs.push_back({i, std::abs(5.0 + rng.gaussian()), 1.0});
    }
    // keep losses strictly positive but Gaussian-shaped around 5
    const auto kept = selection::loss_prefilter(rs);
    const double fraction = static_cast<double>(kept.size()) / 10000.0;
    CHECK(fraction == doctest::Approx(0.683).epsilon(0.03));
}

TEST_CASE("loss_prefilter rejects empty input and non-finite records") {
    CHECK_THROWS_AS(selection::loss_prefilter({}), std::invalid_argument);
    std::vector<GradientRecord> bad{{0, std::nan(""), 1.0}};
    CHECK_THROWS_AS(selection::loss_prefilter(bad), std::invalid_argument);
}

TEST_CASE("moderate_select hand case: norms [1..5], rho=0.4") {
    const auto rs = records_from({1, 1, 1, 1, 1}, {1, 2, 3, 4, 5});
    const auto sel = selection::moderate_select(rs, 0.4, 5);
    // median 3; distance ties between norms 2 and 4 break to the lower index
    CHECK(sel == std::vector<int>{2, 1});
}

TEST_CASE("moderate_select trivial cases") {
    const auto rs = records_from({1, 1, 1}, {5, 6, 7});
    SUBCASE("rho = 1 selects all") {
        CHECK(selection::moderate_select(rs, 1.0, 3).size() == 3);
    }
    SUBCASE("single candidate selects itself") {
        const auto one = records_from({1}, {5});
        CHECK(selection::moderate_select(one, 1.0, 1) == std::vector<int>{0});
    }
    SUBCASE("k larger than candidate count selects all candidates") {
        CHECK(selection::moderate_select(rs, 1.0, 10).size() == 3);
    }
    SUBCASE("floor(rho*batch)=0 is an error") {
        CHECK_THROWS_AS(selection::moderate_select(rs, 0.1, 3), std::invalid_argument);
    }
}

TEST_CASE("moderate_select equals the brute-force oracle on 1000 random batches") {
    Rng rng(555);
    for (int it = 0; it < 1000; ++it) {
        const int n = 2 + static_cast<int>(rng.below(40));
        std::vector<GradientRecord> rs;
        for (int i = 0; i < n; ++i) {
            // duplicate norms appear regularly to exercise tie-breaking
            const Scalar g = std::floor(rng.uniform() * 12.0) / 3.0;
            rs.push_back({i, rng.uniform() * 5.0, g});
        }
        const Scalar rho = 0.1 + 0.9 * rng.uniform();
        const int k = static_cast<int>(std::floor(rho * n));
        if (k < 1) {
            continue;
        }
        const auto got = selection::moderate_select(rs, rho, n);
        const auto want = moderate_oracle(rs, k);
        CHECK(got == want);
    }
}

TEST_CASE("strategy_select: high and low rank purely by gradient norm") {
    const auto rs = records_from({1, 9, 1, 9, 1}, {1, 2, 3, 4, 5});
    SelectionConfig cfg;
    cfg.rho = 0.2;

    cfg.strategy = Strategy::high;
    CHECK(selection::strategy_select(cfg, rs, 5) == std::vector<int>{4});
    cfg.strategy = Strategy::low;
    CHECK(selection::strategy_select(cfg, rs, 5) == std::vector<int>{0});
}

TEST_CASE("strategy_select: random is seeded and reproducible") {
    const auto rs = records_from({1, 1, 1, 1, 1, 1, 1, 1, 1, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    SelectionConfig cfg;
    cfg.strategy = Strategy::random;
    cfg.rho = 0.3;
    cfg.seed = 99;
    const auto a = selection::strategy_select(cfg, rs, 10);
    const auto b = selection::strategy_select(cfg, rs, 10);
    CHECK(a == b);
    CHECK(a.size() == 3);
    cfg.seed = 100;
    // a different seed is allowed to coincide, but not for every draw; just
    // check the selection is still valid
    const auto c = selection::strategy_select(cfg, rs, 10);
    CHECK(c.size() == 3);
}

TEST_CASE("strategy_select: all returns everything; moderate composes filter+select") {
    const auto rs = records_from({1, 1, 1, 10, 1}, {1, 2, 3, 100, 5});
    SelectionConfig cfg;

    cfg.strategy = Strategy::all;
    CHECK(selection::strategy_select(cfg, rs, 5).size() == 5);

    cfg.strategy = Strategy::moderate;
    cfg.rho = 0.2;
    selection::SelectionReport report;
    const auto sel = selection::strategy_select(cfg, rs, 5, report);
    // the loss outlier (index 3) is pre-filtered; median of {1,2,3,5} = 2.5,
    // closest is 2 (index 1) before 3 (index 2)
    CHECK(report.candidate_count == 4);
    CHECK(sel == std::vector<int>{1});
    CHECK(report.selected.count == 1);
    CHECK(report.unselected.count == 4);
}

TEST_CASE("selection is permutation invariant") {
    Rng rng(777);
    std::vector<GradientRecord> rs;
    for (int i = 0; i < 24; ++i) {
        rs.push_back({i, rng.uniform() * 4.0, rng.uniform() * 9.0});
    }
    SelectionConfig cfg;
    cfg.rho = 0.25;
    for (const Strategy st :
         {Strategy::moderate, Strategy::high, Strategy::low, Strategy::random}) {
        cfg.strategy = st;
        cfg.seed = 3;
        auto base = selection::strategy_select(cfg, rs, 24);
        std::sort(base.begin(), base.end());
        auto shuffled = rs;
        rng.shuffle(shuffled);
        auto perm = selection::strategy_select(cfg, shuffled, 24);
        std::sort(perm.begin(), perm.end());
        CHECK(base == perm);
    }
}

TEST_CASE("selection is invariant to positive rescaling of gradient norms") {
    // power-of-two factors keep the rescaling exact in floating point, so
    // rank and distance-rank invariance can be asserted literally
    Rng rng(778);
    for (const Scalar factor : {0.25, 4.0, 1024.0}) {
        std::vector<GradientRecord> rs, scaled;
        for (int i = 0; i < 21; ++i) {
            const Scalar g = rng.uniform() * 7.0;
            rs.push_back({i, 1.0, g});
            scaled.push_back({i, 1.0, factor * g});
        }
        SelectionConfig cfg;
        cfg.rho = 0.3;
        for (const Strategy st : {Strategy::moderate, Strategy::high, Strategy::low}) {
            cfg.strategy = st;
            CHECK(selection::strategy_select(cfg, rs, 21) ==
                  selection::strategy_select(cfg, scaled, 21));
        }
    }
}

TEST_CASE("dataset-scope moderate selection equals the explicit two-step protocol") {
    Rng rng(779);
    std::vector<GradientRecord> rs;
    for (int i = 0; i < 200; ++i) {
        rs.push_back({i, rng.uniform() * 4.0, rng.uniform() * 11.0});
    }
    SelectionConfig cfg;
    cfg.strategy = Strategy::moderate;
    cfg.rho = 0.2;
    const auto via_strategy = selection::strategy_select(cfg, rs, 200);

    const auto kept = selection::loss_prefilter(rs);
    std::vector<GradientRecord> candidates;
    for (const auto& r : rs) {
        if (std::find(kept.begin(), kept.end(), r.sample_index) != kept.end()) {
            candidates.push_back(r);
        }
    }
    CHECK(via_strategy == selection::moderate_select(candidates, 0.2, 200));
    CHECK(via_strategy.size() == 40); // floor(0.2 * 200)
}

TEST_CASE("tercile audit") {
    SUBCASE("sizes for n=10 are {4,3,3}") {
        std::vector<GradientRecord> rs;
        std::vector<int> lens;
        for (int i = 0; i < 10; ++i) {
            rs.push_back({i, 1.0, static_cast<Scalar>(i)});
            lens.push_back(5);
        }
        const auto rows = selection::audit_terciles_from_records(rs, lens);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].count == 4);
        CHECK(rows[1].count == 3);
        CHECK(rows[2].count == 3);
        CHECK(rows[0].group == "low");
        CHECK(rows[2].group == "high");
    }
    SUBCASE("identical samples give equal group means") {
        std::vector<GradientRecord> rs;
        std::vector<int> lens;
        for (int i = 0; i < 9; ++i) {
            rs.push_back({i, 2.0, 3.0});
            lens.push_back(7);
        }
        const auto rows = selection::audit_terciles_from_records(rs, lens);
        for (const auto& row : rows) {
            CHECK(row.mean_grad_norm == doctest::Approx(3.0));
            CHECK(row.mean_loss == doctest::Approx(2.0));
            CHECK(row.mean_target_tokens == doctest::Approx(7.0));
        }
    }
    SUBCASE("short-target samples with high G land in the high tercile") {
        // synthetic mix mirroring the audit's expected direction: high-G
        // records carry short targets, low-G records long ones
        std::vector<GradientRecord> rs;
        std::vector<int> lens;
        Rng rng(991);
        for (int i = 0; i < 30; ++i) {
            const bool shorty = i % 2 == 0;
            rs.push_back({i, shorty ? 8.0 : 1.5, shorty ? 20.0 + rng.uniform() : 1.0 + rng.uniform()});
            lens.push_back(shorty ? 1 : 12);
        }
        const auto rows = selection::audit_terciles_from_records(rs, lens);
        CHECK(rows[2].mean_target_tokens < rows[0].mean_target_tokens);
        CHECK(rows[2].mean_grad_norm > rows[0].mean_grad_norm);
    }
    SUBCASE("fewer than 3 samples is an error") {
        std::vector<GradientRecord> rs{{0, 1.0, 1.0}, {1, 1.0, 2.0}};
        CHECK_THROWS_AS(selection::audit_terciles_from_records(rs, {1, 1}),
                        std::invalid_argument);
    }
}

TEST_CASE("selection report serializes with the typed field names") {
    const auto rs = records_from({1, 2, 3, 4}, {1, 2, 3, 4});
    SelectionConfig cfg;
    cfg.strategy = Strategy::moderate;
    cfg.rho = 0.5;
    selection::SelectionReport report;
    selection::strategy_select(cfg, rs, 4, report);
    const std::string json = selection::to_json(report).dump();
    for (const char* key : {"candidate_count", "selected_indices", "mu_L", "sigma_L", "mu_G",
                            "group_stats", "selected", "unselected"}) {
        CHECK(json.find(key) != std::string::npos);
    }
}
