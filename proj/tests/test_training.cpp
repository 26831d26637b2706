#include <doctest.h>

#include "driftlab/model.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/training.hpp"
#include "driftlab/world.hpp"

#include <cmath>
#include <memory>

using namespace driftlab;
using training::TrainConfig;

namespace {

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

TEST_CASE("optimizer_step") {
    TrainConfig cfg;
    cfg.lr = 0.05;

    SUBCASE("zero grad with zero weight decay leaves params unchanged") {
        Vec params = Vec::LinSpaced(6, -1.0, 1.0);
        auto state = training::make_adamw_state(6);
        const auto [s2, p2] = training::optimizer_step(state, params, Vec::Zero(6), cfg);
        CHECK(p2 == params);
    }
    SUBCASE("first step with constant grad moves each coordinate by ~lr") {
        Vec params = Vec::Zero(4);
        Vec grad(4);
        grad << 1.0, -2.0, 0.5, -0.25; // |g| >> eps
        auto state = training::make_adamw_state(4);
        const auto [s2, p2] = training::optimizer_step(state, params, grad, cfg);
        for (Index i = 0; i < 4; ++i) {
            CHECK(std::abs(p2[i]) == doctest::Approx(cfg.lr).epsilon(1e-6));
            CHECK((p2[i] < 0) == (grad[i] > 0));
        }
    }
    SUBCASE("weight decay is decoupled") {
        Vec params = Vec::Constant(3, 2.0);
        cfg.weight_decay = 0.1;
        auto state = training::make_adamw_state(3);
        const auto [s2, p2] = training::optimizer_step(state, params, Vec::Zero(3), cfg);
        CHECK(p2[0] == doctest::Approx(2.0 * (1.0 - cfg.lr * 0.1)));
    }
    SUBCASE("non-finite grads raise a numeric error") {
        Vec params = Vec::Zero(2);
        Vec grad(2);
        grad << 1.0, std::nan("");
        auto state = training::make_adamw_state(2);
        CHECK_THROWS_AS(training::optimizer_step(state, params, grad, cfg), std::runtime_error);
    }
}

TEST_CASE("clip_gradient") {
    Vec g(2);
    g << 0.18, 0.24; // norm 0.3
    CHECK(training::clip_gradient(g, 0.5) == g);
    Vec big = g * 100.0; // norm 30
    const Vec clipped = training::clip_gradient(big, 0.5);
    CHECK(clipped.norm() == doctest::Approx(0.5).epsilon(1e-12));
    // direction preserved
    CHECK(clipped[0] / clipped[1] == doctest::Approx(big[0] / big[1]));
    CHECK_THROWS_AS(training::clip_gradient(g, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(training::clip_gradient(g, -1.0), std::invalid_argument);
}

TEST_CASE("fisher_diagonal") {
    const auto w = world::World(64, 32, 61);
    const auto mp = model::init_model(tiny_config(61));
    const auto ds = w.gen_pretrain(80, 0.3, 62);

    SUBCASE("entries are non-negative and match a re-accumulation oracle") {
        const Vec fisher = training::fisher_diagonal(mp, ds, 50, 63);
        CHECK(fisher.minCoeff() >= 0.0);

        // oracle: same seeded draw, accumulated independently
        Rng rng(derive_seed(63, 0xf15e));
        const auto picks = rng.sample_without_replacement(ds.samples.size(), 50);
        Vec acc = Vec::Zero(mp.params.total_size());
        for (const auto p : picks) {
            const auto sg = model::sample_gradient(mp, ds.samples[p]);
            acc.array() += flatten(sg.grads).array().square();
        }
        acc /= 50.0;
        CHECK(acc == fisher); // bit-exact under the fixed order
    }
    SUBCASE("single sample gives exactly grad squared") {
        const Vec fisher = training::fisher_diagonal(mp, ds, 1, 64);
        Rng rng(derive_seed(64, 0xf15e));
        const auto picks = rng.sample_without_replacement(ds.samples.size(), 1);
        const auto sg = model::sample_gradient(mp, ds.samples[picks[0]]);
        const Vec expected = flatten(sg.grads).array().square();
        CHECK(fisher == expected);
    }
    SUBCASE("bad arguments") {
        CHECK_THROWS_AS(training::fisher_diagonal(mp, world::Dataset{}, 5, 1),
                        std::invalid_argument);
        CHECK_THROWS_AS(training::fisher_diagonal(mp, ds, 0, 1), std::invalid_argument);
    }
}

TEST_CASE("ewc_penalty_and_grad") {
    SUBCASE("zero at the anchor, zero at lambda=0") {
        Vec theta(3), anchor(3), fisher(3);
        theta << 1, 2, 3;
        anchor = theta;
        fisher << 1, 1, 1;
        const auto [pen, grad] = training::ewc_penalty_and_grad(theta, anchor, fisher, 2.0);
        CHECK(pen == 0.0);
        CHECK(grad.norm() == 0.0);
        const auto [pen0, grad0] =
            training::ewc_penalty_and_grad(theta, Vec::Zero(3), fisher, 0.0);
        CHECK(pen0 == 0.0);
        CHECK(grad0.norm() == 0.0);
    }
    SUBCASE("scalar hand case: lambda=1, F=2, diff=3 -> penalty 9, grad 6") {
        Vec theta(1), anchor(1), fisher(1);
        theta << 4;
        anchor << 1;
        fisher << 2;
        const auto [pen, grad] = training::ewc_penalty_and_grad(theta, anchor, fisher, 1.0);
        CHECK(pen == doctest::Approx(9.0));
        CHECK(grad[0] == doctest::Approx(6.0));
    }
    SUBCASE("gradient matches finite differences of the penalty") {
        Rng rng(71);
        const Index n = 40;
        const Vec theta = rng.gaussian_vec(n);
        const Vec anchor = rng.gaussian_vec(n);
        Vec fisher = rng.gaussian_vec(n).array().square();
        const Scalar lambda = 1.7;
        const auto [pen, grad] = training::ewc_penalty_and_grad(theta, anchor, fisher, lambda);
        (void)pen;
        const Scalar h = 1e-6;
        for (Index i = 0; i < 8; ++i) {
            Vec up = theta, down = theta;
            up[i] += h;
            down[i] -= h;
            const Scalar fd = (training::ewc_penalty_and_grad(up, anchor, fisher, lambda).first -
                               training::ewc_penalty_and_grad(down, anchor, fisher, lambda).first) /
                              (2 * h);
            CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(training::ewc_penalty_and_grad(Vec::Zero(3), Vec::Zero(2), Vec::Zero(3), 1.0),
                        std::invalid_argument);
    }
}

TEST_CASE("kl_penalty_and_grad") {
    const auto w = world::World(64, 32, 81);
    const auto mp = model::init_model(tiny_config(81));
    const auto ds = w.gen_pretrain(6, 0.5, 82);
    const std::vector<world::Sample> batch(ds.samples.begin(), ds.samples.begin() + 4);

    SUBCASE("identical params give zero penalty") {
        const auto [pen, grad] = training::kl_penalty_and_grad(mp, mp, batch, 1.0);
        CHECK(pen == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("beta=0 gives zero penalty and gradient") {
        const auto other = model::init_model(tiny_config(83));
        const auto [pen, grad] = training::kl_penalty_and_grad(mp, other, batch, 0.0);
        CHECK(pen == 0.0);
        CHECK(grad.norm() == 0.0);
    }
    SUBCASE("penalty is non-negative across random model pairs (Gibbs)") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const auto a = model::init_model(tiny_config(100 + s));
            const auto b = model::init_model(tiny_config(200 + s));
            const auto [pen, grad] = training::kl_penalty_and_grad(a, b, batch, 1.0);
            (void)grad;
            CHECK(pen >= 0.0);
        }
    }
    SUBCASE("gradient matches finite differences of the penalty") {
        const auto ref = model::init_model(tiny_config(84));
        const auto [pen, grad] = training::kl_penalty_and_grad(mp, ref, batch, 0.7);
        (void)pen;
        Rng rng(85);
        const Vec theta = flatten(mp.params);
        const Scalar h = 1e-5;
        for (int probe = 0; probe < 6; ++probe) {
            const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(theta.size())));
            Vec up = theta, down = theta;
            up[i] += h;
            down[i] -= h;
            auto mup = mp, mdown = mp;
            mup.params = unflatten(mp.params, up);
            mdown.params = unflatten(mp.params, down);
            const Scalar fd = (training::kl_penalty_and_grad(mup, ref, batch, 0.7).first -
                               training::kl_penalty_and_grad(mdown, ref, batch, 0.7).first) /
                              (2 * h);
            CHECK(grad[i] == doctest::Approx(fd).epsilon(5e-4));
        }
    }
    SUBCASE("empty batch is rejected") {
        CHECK_THROWS_AS(training::kl_penalty_and_grad(mp, mp, {}, 1.0), std::invalid_argument);
    }
}

TEST_CASE("train_task") {
    const auto w = world::World(64, 32, 91);
    const auto mp = model::init_model(tiny_config(91));
    const auto ds = w.gen_pretrain(96, 0.3, 92);

    SUBCASE("epochs=0 returns params unchanged") {
        TrainConfig cfg;
        cfg.epochs = 0;
        const auto [out, log] = training::train_task(mp, ds, cfg);
        CHECK(flatten(out.params) == flatten(mp.params));
        CHECK(log.batches.empty());
    }
    SUBCASE("plain strategy=all run equals an independent AdamW loop bit-exactly") {
        TrainConfig cfg;
        cfg.lr = 1e-3;
        cfg.batch_size = 16;
        cfg.epochs = 1;
        cfg.seed = 93;
        const auto [out, log] = training::train_task(mp, ds, cfg);
        (void)log;

        // oracle: replicate shuffling, batching, mean gradient and AdamW
        Rng shuffle_rng(derive_seed(93, 0x0bacce5));
        std::vector<std::size_t> order(ds.samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        shuffle_rng.shuffle(order);

        Vec theta = flatten(mp.params);
        Vec m = Vec::Zero(theta.size()), v = Vec::Zero(theta.size());
        long t = 0;
        auto params = mp;
        for (std::size_t at = 0; at < order.size(); at += 16) {
            const std::size_t end = std::min(order.size(), at + 16);
            params.params = unflatten(mp.params, theta);
            ParamSet acc = mp.params.zeros_like();
            std::vector<std::pair<int, ParamSet>> grads;
            for (std::size_t i = at; i < end; ++i) {
                auto sg = model::sample_gradient(params, ds.samples[order[i]]);
                grads.emplace_back(sg.sample_index, std::move(sg.grads));
            }
            std::sort(grads.begin(), grads.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            for (const auto& [idx, g] : grads) {
                axpy_into(acc, g, 1.0);
            }
            Vec grad = flatten(acc) / static_cast<Scalar>(end - at);
            t += 1;
            const Scalar b1 = 0.9, b2 = 0.999;
            m = b1 * m + (1.0 - b1) * grad;
            v = b2 * v.array() + (1.0 - b2) * grad.array().square();
            const Scalar bc1 = 1.0 - std::pow(b1, static_cast<Scalar>(t));
            const Scalar bc2 = 1.0 - std::pow(b2, static_cast<Scalar>(t));
            theta.array() -= 1e-3 * (m.array() / bc1) / ((v.array() / bc2).sqrt() + 1e-8);
        }
        CHECK(flatten(out.params) == theta);
    }
    SUBCASE("training reduces loss with strategy=all on most seeds") {
        int improved = 0;
        for (std::uint64_t s = 0; s < 5; ++s) {
            auto init = model::init_model(tiny_config(300 + s));
            TrainConfig cfg;
            cfg.lr = 2e-3;
            cfg.batch_size = 16;
            cfg.epochs = 2;
            cfg.seed = 400 + s;
            const auto [out, log] = training::train_task(init, ds, cfg);
            (void)out;
            if (log.epoch_mean_loss.back() <= log.epoch_mean_loss.front()) {
                ++improved;
            }
        }
        CHECK(improved >= 4);
    }
    SUBCASE("moderate strategy logs floor(rho*batch) selections in full batches") {
        TrainConfig cfg;
        cfg.batch_size = 16;
        cfg.epochs = 1;
        cfg.seed = 94;
        cfg.selection.strategy = selection::Strategy::moderate;
        cfg.selection.rho = 0.25;
        const auto [out, log] = training::train_task(mp, ds, cfg);
        (void)out;
        REQUIRE(!log.batches.empty());
        for (const auto& b : log.batches) {
            CHECK(b.report.selected_indices.size() == 4); // floor(0.25*16)
        }
    }
    SUBCASE("clipped runs never step with norms above c") {
        // indirect check: train with an aggressive clip and confirm the
        // trajectory stays finite and differs from the unclipped one
        TrainConfig cfg;
        cfg.batch_size = 32;
        cfg.epochs = 1;
        cfg.seed = 95;
        cfg.clip = 1e-3;
        const auto [clipped, la] = training::train_task(mp, ds, cfg);
        cfg.clip.reset();
        const auto [plain, lb] = training::train_task(mp, ds, cfg);
        (void)la;
        (void)lb;
        CHECK(flatten(clipped.params).allFinite());
        CHECK(flatten(clipped.params) != flatten(plain.params));
    }
    SUBCASE("two identical runs produce identical trajectories") {
        TrainConfig cfg;
        cfg.batch_size = 16;
        cfg.epochs = 1;
        cfg.seed = 96;
        const auto [a, la] = training::train_task(mp, ds, cfg);
        const auto [b, lb] = training::train_task(mp, ds, cfg);
        (void)la;
        (void)lb;
        CHECK(flatten(a.params) == flatten(b.params));
    }
    SUBCASE("dataset-scope selection trains on the fixed subset") {
        TrainConfig cfg;
        cfg.batch_size = 16;
        cfg.epochs = 1;
        cfg.seed = 97;
        cfg.selection.strategy = selection::Strategy::high;
        cfg.selection.rho = 0.25;
        cfg.selection.scope = selection::Scope::dataset;
        const auto [out, log] = training::train_task(mp, ds, cfg);
        (void)out;
        REQUIRE(!log.batches.empty());
        CHECK(log.batches.front().epoch == -1); // the dataset-scope selection entry
        CHECK(log.batches.front().report.selected_indices.size() == 24); // floor(0.25*96)
    }
    SUBCASE("empty selection in a batch is a run error naming the batch") {
        TrainConfig cfg;
        cfg.batch_size = 16;
        cfg.epochs = 1;
        cfg.selection.strategy = selection::Strategy::moderate;
        cfg.selection.rho = 0.05; // floor(0.05*16) = 0
        CHECK_THROWS_WITH_AS(training::train_task(mp, ds, cfg), doctest::Contains("batch"),
                             std::exception);
    }
}

TEST_CASE("ewc regularization pulls training toward the anchor") {
    const auto w = world::World(64, 32, 120);
    const auto mp = model::init_model(tiny_config(120));
    const auto ds = w.gen_pretrain(64, 0.3, 121);

    TrainConfig base;
    base.batch_size = 16;
    base.epochs = 1;
    base.seed = 122;

    const auto [plain, l1] = training::train_task(mp, ds, base);
    (void)l1;

    TrainConfig reg = base;
    reg.regularizer.kind = training::RegKind::ewc;
    reg.regularizer.lambda = 1e4;
    reg.regularizer.anchor = std::make_shared<model::ModelParams>(mp);
    reg.regularizer.fisher = Vec::Ones(mp.params.total_size());
    const auto [anchored, l2] = training::train_task(mp, ds, reg);
    (void)l2;

    const Scalar d_plain = (flatten(plain.params) - flatten(mp.params)).norm();
    const Scalar d_anchored = (flatten(anchored.params) - flatten(mp.params)).norm();
    CHECK(d_anchored < d_plain);
}

TEST_CASE("run_continual") {
    const auto w = world::World(64, 32, 130);
    const auto mp = model::init_model(tiny_config(130));

    world::TaskSpec spec{"cls", world::TaskKind::classify_short, 48, 16, 1};
    const auto [train1, eval1] = w.gen_task(spec, 131);
    (void)eval1;
    world::TaskSpec spec2{"qa", world::TaskKind::qa_short, 48, 16, 1};
    const auto [train2, eval2] = w.gen_task(spec2, 132);
    (void)eval2;

    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.epochs = 1;
    cfg.seed = 133;

    SUBCASE("T=1 reduces to train_task") {
        const auto direct = training::train_task(mp, train1, cfg);
        const auto cont = training::run_continual(mp, {{"cls", train1, cfg}});
        REQUIRE(cont.checkpoints.size() == 2);
        CHECK(flatten(cont.checkpoints[1].params) == flatten(direct.first.params));
    }
    SUBCASE("stage t starts from checkpoint t-1 and hooks fire in order") {
        std::vector<int> seen;
        const auto cont = training::run_continual(
            mp, {{"cls", train1, cfg}, {"qa", train2, cfg}},
            [&](int stage, const model::ModelParams&) { seen.push_back(stage); });
        CHECK(seen == std::vector<int>{0, 1, 2});
        REQUIRE(cont.checkpoints.size() == 3);
        // second stage from first checkpoint
        const auto direct2 = training::train_task(cont.checkpoints[1], train2, cfg);
        CHECK(flatten(cont.checkpoints[2].params) == flatten(direct2.first.params));
    }
    SUBCASE("permuted stage order emits the same number of checkpoints") {
        const auto a = training::run_continual(mp, {{"cls", train1, cfg}, {"qa", train2, cfg}});
        const auto b = training::run_continual(mp, {{"qa", train2, cfg}, {"cls", train1, cfg}});
        CHECK(a.checkpoints.size() == b.checkpoints.size());
    }
    SUBCASE("empty stage list is rejected") {
        CHECK_THROWS_AS(training::run_continual(mp, {}), std::invalid_argument);
    }
}
