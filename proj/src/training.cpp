#include "driftlab/training.hpp"

#include "driftlab/autodiff.hpp"
#include "driftlab/kernels.hpp"
#include "driftlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace driftlab::training {

RegKind reg_kind_from_string(const std::string& s) {
    if (s == "none") return RegKind::none;
    if (s == "ewc") return RegKind::ewc;
    if (s == "kl") return RegKind::kl;
    throw std::invalid_argument("unknown regularizer kind: " + s);
}

void validate(const RegularizerSpec& spec) {
    if (spec.lambda < 0.0) {
        throw std::invalid_argument("regularizer lambda must be >= 0");
    }
    if (spec.kind == RegKind::ewc && (!spec.anchor || !spec.fisher)) {
        throw std::invalid_argument("ewc regularizer needs anchor and fisher");
    }
    if (spec.kind == RegKind::kl && !spec.anchor) {
        throw std::invalid_argument("kl regularizer needs anchor");
    }
}

void validate(const TrainConfig& cfg) {
    if (cfg.lr <= 0.0) {
        throw std::invalid_argument("lr must be > 0");
    }
    if (cfg.batch_size < 1) {
        throw std::invalid_argument("batch_size must be >= 1");
    }
    if (cfg.epochs < 0) {
        throw std::invalid_argument("epochs must be >= 0");
    }
    if (cfg.clip && *cfg.clip <= 0.0) {
        throw std::invalid_argument("clip must be > 0 when present");
    }
    selection::validate(cfg.selection);
    validate(cfg.regularizer);
}

AdamWState make_adamw_state(Index n) {
    AdamWState s;
    s.m = Vec::Zero(n);
    s.v = Vec::Zero(n);
    return s;
}

std::pair<AdamWState, Vec> optimizer_step(AdamWState state, Vec params, const Vec& grad,
                                          const TrainConfig& cfg) {
    if (grad.size() != params.size() || state.m.size() != params.size()) {
        throw std::invalid_argument("optimizer_step: size mismatch");
    }
    if (!grad.allFinite()) {
        throw std::runtime_error("optimizer_step: non-finite gradient");
    }
    const auto [beta1, beta2] = cfg.betas;
    state.step += 1;
    state.m = beta1 * state.m + (1.0 - beta1) * grad;
    state.v = beta2 * state.v.array() + (1.0 - beta2) * grad.array().square();
    const Scalar bc1 = 1.0 - std::pow(beta1, static_cast<Scalar>(state.step));
    const Scalar bc2 = 1.0 - std::pow(beta2, static_cast<Scalar>(state.step));
    params.array() -= cfg.lr * (state.m.array() / bc1) /
                      ((state.v.array() / bc2).sqrt() + cfg.eps);
    if (cfg.weight_decay != 0.0) {
        params.array() -= cfg.lr * cfg.weight_decay * params.array();
    }
    return {std::move(state), std::move(params)};
}

Vec clip_gradient(Vec grad, Scalar c) {
    if (c <= 0.0) {
        throw std::invalid_argument("clip value must be > 0");
    }
    const Scalar norm = grad.norm();
    if (norm > c) {
        grad *= c / norm;
    }
    return grad;
}

Vec fisher_diagonal(const model::ModelParams& params, const world::Dataset& dataset,
                    int n_samples, std::uint64_t seed) {
    if (dataset.samples.empty()) {
        throw std::invalid_argument("fisher_diagonal: empty dataset");
    }
    if (n_samples < 1) {
        throw std::invalid_argument("fisher_diagonal: n_samples must be >= 1");
    }
    Rng rng(derive_seed(seed, 0xf15e));
    std::vector<std::size_t> picks;
    if (static_cast<std::size_t>(n_samples) <= dataset.samples.size()) {
        picks = rng.sample_without_replacement(dataset.samples.size(),
                                               static_cast<std::size_t>(n_samples));
    } else {
        for (int i = 0; i < n_samples; ++i) {
            picks.push_back(static_cast<std::size_t>(rng.below(dataset.samples.size())));
        }
    }
    Vec acc = Vec::Zero(params.params.total_size());
    for (const auto p : picks) {
        const auto sg = model::sample_gradient(params, dataset.samples[p]);
        acc.array() += flatten(sg.grads).array().square();
    }
    return acc / static_cast<Scalar>(picks.size());
}

std::pair<Scalar, Vec> ewc_penalty_and_grad(const Vec& theta, const Vec& anchor, const Vec& fisher,
                                            Scalar lambda) {
    if (theta.size() != anchor.size() || theta.size() != fisher.size()) {
        throw std::invalid_argument("ewc: shape mismatch");
    }
    if (lambda < 0.0) {
        throw std::invalid_argument("ewc: lambda must be >= 0");
    }
    const Vec diff = theta - anchor;
    const Scalar penalty = 0.5 * lambda * (fisher.array() * diff.array().square()).sum();
    Vec grad = lambda * fisher.array() * diff.array();
    return {penalty, std::move(grad)};
}

std::pair<Scalar, Vec> kl_penalty_and_grad(const model::ModelParams& params,
                                           const model::ModelParams& ref_params,
                                           const std::vector<world::Sample>& batch, Scalar beta) {
    if (batch.empty()) {
        throw std::invalid_argument("kl_penalty_and_grad: empty batch");
    }
    if (beta < 0.0) {
        throw std::invalid_argument("kl_penalty_and_grad: beta must be >= 0");
    }
    const Index total = params.params.total_size();
    if (beta == 0.0) {
        return {0.0, Vec::Zero(total)};
    }

    ParamSet grad_acc = params.params.zeros_like();
    Scalar kl_sum = 0.0;
    long position_count = 0;
    for (const auto& sample : batch) {
        const int len = static_cast<int>(sample.tokens.size());
        const int n_pos = len - sample.prompt_len;
        position_count += n_pos;

        const Mat ref_logits = model::forward_logits(ref_params, sample.tokens);
        const Mat ref_logp_full = kernels::log_softmax_rows(ref_logits);
        Mat neg_ref_logp(n_pos, ref_logp_full.cols());
        for (int i = 0; i < n_pos; ++i) {
            neg_ref_logp.row(i) = -ref_logp_full.row(sample.prompt_len - 1 + i);
        }

        autodiff::Graph g;
        const int logits = model::build_logits_graph(g, params.config, sample.tokens);
        std::vector<Index> rows;
        for (int i = 0; i < n_pos; ++i) {
            rows.push_back(sample.prompt_len - 1 + i);
        }
        const int target_logits = g.gather_rows(logits, rows);
        const int logp = g.log_softmax(target_logits);
        const int p = g.softmax(target_logits);
        const int diff = g.add(logp, g.constant(neg_ref_logp)); // logp - logq
        const int cell = g.multiply(p, diff);
        // sum of all entries = mean * count
        const int total_kl =
            g.scale(g.reduce_mean(cell), static_cast<Scalar>(n_pos) *
                                             static_cast<Scalar>(params.config.vocab_size));
        g.set_loss(total_kl);

        auto res = autodiff::evaluate_and_backward(g, params.params);
        kl_sum += res.loss;
        axpy_into(grad_acc, res.grads, 1.0);
    }

    const Scalar scale = beta / static_cast<Scalar>(position_count);
    const Scalar penalty = scale * kl_sum;
    Vec grad = scale * flatten(grad_acc);
    return {penalty, std::move(grad)};
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(n, at + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<long>(at),
                             order.begin() + static_cast<long>(end));
    }
    return batches;
}

} // namespace

std::pair<model::ModelParams, CheckpointLog> train_task(model::ModelParams params,
                                                        const world::Dataset& train,
                                                        const TrainConfig& cfg) {
    validate(cfg);
    if (train.samples.empty()) {
        throw std::invalid_argument("train_task: empty dataset");
    }

    CheckpointLog log;
    if (cfg.epochs == 0) {
        return {std::move(params), std::move(log)};
    }

    // dataset scope: rank once at stage-initial parameters, then train on the
    // selected subset with per-batch selection disabled
    const world::Dataset* data = &train;
    world::Dataset subset;
    selection::SelectionConfig batch_selection = cfg.selection;
    if (cfg.selection.scope == selection::Scope::dataset &&
        cfg.selection.strategy != selection::Strategy::all) {
        std::vector<selection::GradientRecord> records;
        records.reserve(train.samples.size());
        for (const auto& s : train.samples) {
            const auto sg = model::sample_gradient(params, s);
            records.push_back({sg.sample_index, sg.loss, sg.grad_norm});
        }
        selection::SelectionReport report;
        const auto chosen = selection::strategy_select(cfg.selection, records,
                                                       static_cast<int>(records.size()), report);
        if (chosen.empty()) {
            throw std::runtime_error("train_task: dataset-scope selection selected nothing");
        }
        BatchLog blog;
        blog.epoch = -1;
        blog.batch = -1;
        Scalar mean_loss = 0.0;
        for (const auto& r : records) {
            mean_loss += r.loss;
        }
        blog.mean_loss = mean_loss / static_cast<Scalar>(records.size());
        blog.report = std::move(report);
        log.batches.push_back(std::move(blog));

        subset.seed = train.seed;
        for (const auto& s : train.samples) {
            if (std::find(chosen.begin(), chosen.end(), s.index) != chosen.end()) {
                subset.samples.push_back(s);
            }
        }
        data = &subset;
        batch_selection.strategy = selection::Strategy::all;
    }

    const Index total = params.params.total_size();
    AdamWState state = make_adamw_state(total);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x0bacce5));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(data->samples.size(), cfg.batch_size, shuffle_rng);
        Scalar epoch_loss = 0.0;
        long epoch_count = 0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& batch = batches[bi];

            std::vector<selection::GradientRecord> records;
            std::vector<model::SampleGradient> grads;
            records.reserve(batch.size());
            grads.reserve(batch.size());
            for (const auto si : batch) {
                auto sg = model::sample_gradient(params, data->samples[si]);
                records.push_back({sg.sample_index, sg.loss, sg.grad_norm});
                grads.push_back(std::move(sg));
            }

            selection::SelectionReport report;
            std::vector<int> selected;
            selected = selection::strategy_select(batch_selection, records,
                                                  static_cast<int>(batch.size()), report);
            if (selected.empty()) {
                throw std::runtime_error("train_task: empty selection in epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(bi));
            }

            // unweighted mean over selected samples, in sample-index order
            std::sort(selected.begin(), selected.end());
            ParamSet grad_sum = params.params.zeros_like();
            for (const int idx : selected) {
                for (const auto& sg : grads) {
                    if (sg.sample_index == idx) {
                        axpy_into(grad_sum, sg.grads, 1.0);
                        break;
                    }
                }
            }
            Vec grad = flatten(grad_sum) / static_cast<Scalar>(selected.size());

            // regularizer contribution after the selection mean
            if (cfg.regularizer.kind == RegKind::ewc && cfg.regularizer.lambda > 0.0) {
                const auto [pen, reg_grad] =
                    ewc_penalty_and_grad(flatten(params.params),
                                         flatten(cfg.regularizer.anchor->params),
                                         *cfg.regularizer.fisher, cfg.regularizer.lambda);
                (void)pen;
                grad += reg_grad;
            } else if (cfg.regularizer.kind == RegKind::kl && cfg.regularizer.lambda > 0.0) {
                std::vector<world::Sample> batch_samples;
                batch_samples.reserve(batch.size());
                for (const auto si : batch) {
                    batch_samples.push_back(data->samples[si]);
                }
                const auto [pen, reg_grad] = kl_penalty_and_grad(
                    params, *cfg.regularizer.anchor, batch_samples, cfg.regularizer.lambda);
                (void)pen;
                grad += reg_grad;
            }

            if (cfg.clip) {
                grad = clip_gradient(std::move(grad), *cfg.clip);
            }

            auto [new_state, new_flat] = optimizer_step(std::move(state), flatten(params.params),
                                                        grad, cfg);
            state = std::move(new_state);
            params.params = unflatten(params.params, new_flat);

            Scalar batch_loss = 0.0;
            for (const auto& r : records) {
                batch_loss += r.loss;
            }
            epoch_loss += batch_loss;
            epoch_count += static_cast<long>(records.size());

            BatchLog blog;
            blog.epoch = epoch;
            blog.batch = static_cast<int>(bi);
            blog.mean_loss = batch_loss / static_cast<Scalar>(records.size());
            blog.report = std::move(report);
            log.batches.push_back(std::move(blog));
        }
        log.epoch_mean_loss.push_back(epoch_loss / static_cast<Scalar>(epoch_count));
    }

    return {std::move(params), std::move(log)};
}

ContinualResult run_continual(const model::ModelParams& init, const std::vector<Stage>& stages,
                              const StageHook& hook) {
    if (stages.empty()) {
        throw std::invalid_argument("run_continual: needs at least one stage");
    }
    ContinualResult result;
    result.checkpoints.push_back(init);
    if (hook) {
        hook(0, init);
    }
    model::ModelParams current = init;
    for (std::size_t t = 0; t < stages.size(); ++t) {
        auto [next, log] = train_task(std::move(current), stages[t].train, stages[t].cfg);
        log.stage_index = static_cast<int>(t) + 1;
        log.snapshot_id = "stage_" + std::to_string(t + 1) + ".params";
        result.logs.push_back(std::move(log));
        result.checkpoints.push_back(next);
        if (hook) {
            hook(static_cast<int>(t) + 1, next);
        }
        current = std::move(next);
    }
    return result;
}

} // namespace driftlab::training
