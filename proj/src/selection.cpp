#include "driftlab/selection.hpp"

#include "driftlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace driftlab::selection {

Strategy strategy_from_string(const std::string& s) {
    if (s == "moderate") return Strategy::moderate;
    if (s == "high") return Strategy::high;
    if (s == "low") return Strategy::low;
    if (s == "random") return Strategy::random;
    if (s == "all") return Strategy::all;
    throw std::invalid_argument("unknown selection strategy: " + s);
}

std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::moderate: return "moderate";
    case Strategy::high: return "high";
    case Strategy::low: return "low";
    case Strategy::random: return "random";
    case Strategy::all: return "all";
    }
    return "?";
}

void validate(const SelectionConfig& cfg) {
    if (!(cfg.rho > 0.0 && cfg.rho <= 1.0)) {
        throw std::invalid_argument("selection rho must be in (0, 1]");
    }
}

io::JsonValue to_json(const SelectionReport& r) {
    auto group = [](const GroupStats& g) {
        return io::JsonValue::object()
            .set("count", io::JsonValue::integer(g.count))
            .set("mean_loss", io::JsonValue::number(g.mean_loss))
            .set("mean_grad_norm", io::JsonValue::number(g.mean_grad_norm));
    };
    auto idx = io::JsonValue::array();
    for (const int i : r.selected_indices) {
        idx.push(io::JsonValue::integer(i));
    }
    return io::JsonValue::object()
        .set("candidate_count", io::JsonValue::integer(r.candidate_count))
        .set("selected_indices", std::move(idx))
        .set("mu_L", io::JsonValue::number(r.mu_loss))
        .set("sigma_L", io::JsonValue::number(r.sigma_loss))
        .set("mu_G", io::JsonValue::number(r.mu_grad))
        .set("group_stats", io::JsonValue::object()
                                .set("selected", group(r.selected))
                                .set("unselected", group(r.unselected)));
}

namespace {

void check_records(const std::vector<GradientRecord>& records) {
    if (records.empty()) {
        throw std::invalid_argument("selection: empty record list");
    }
    for (const auto& r : records) {
        if (!std::isfinite(r.loss) || !std::isfinite(r.grad_norm) || r.loss < 0.0 ||
            r.grad_norm < 0.0) {
            throw std::invalid_argument("selection: record " + std::to_string(r.sample_index) +
                                        " has invalid loss/grad_norm");
        }
    }
}

std::pair<Scalar, Scalar> loss_mean_sigma(const std::vector<GradientRecord>& records) {
    Scalar mu = 0.0;
    for (const auto& r : records) {
        mu += r.loss;
    }
    mu /= static_cast<Scalar>(records.size());
    Scalar var = 0.0;
    for (const auto& r : records) {
        var += (r.loss - mu) * (r.loss - mu);
    }
    var /= static_cast<Scalar>(records.size()); // population variance
    return {mu, std::sqrt(var)};
}

Scalar median_grad(const std::vector<GradientRecord>& candidates) {
    std::vector<Scalar> g;
    g.reserve(candidates.size());
    for (const auto& r : candidates) {
        g.push_back(r.grad_norm);
    }
    std::sort(g.begin(), g.end());
    const std::size_t n = g.size();
    if (n % 2 == 1) {
        return g[n / 2];
    }
    return 0.5 * (g[n / 2 - 1] + g[n / 2]);
}

int selection_count(Scalar rho, int batch_size) {
    const int k = static_cast<int>(std::floor(rho * static_cast<Scalar>(batch_size)));
    if (k < 1) {
        throw std::invalid_argument("selection: floor(rho * batch_size) is zero");
    }
    return k;
}

// rank by key ascending, ties by lower sample index, take k indices
std::vector<int> take_by_key(const std::vector<GradientRecord>& records,
                             const std::vector<Scalar>& keys, int k) {
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (keys[a] != keys[b]) {
            return keys[a] < keys[b];
        }
        return records[a].sample_index < records[b].sample_index;
    });
    std::vector<int> out;
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        out.push_back(records[order[i]].sample_index);
    }
    return out;
}

} // namespace

std::vector<int> loss_prefilter(const std::vector<GradientRecord>& records) {
    check_records(records);
    const auto [mu, sigma] = loss_mean_sigma(records);
    std::vector<int> kept;
    for (const auto& r : records) {
        if (sigma == 0.0 || (r.loss >= mu - sigma && r.loss <= mu + sigma)) {
            kept.push_back(r.sample_index);
        }
    }
    return kept;
}

std::vector<int> moderate_select(const std::vector<GradientRecord>& candidates, Scalar rho,
                                 int batch_size) {
    check_records(candidates);
    const int k = selection_count(rho, batch_size);
    const Scalar mu_g = median_grad(candidates);
    std::vector<Scalar> dist;
    dist.reserve(candidates.size());
    for (const auto& r : candidates) {
        dist.push_back(std::abs(r.grad_norm - mu_g));
    }
    return take_by_key(candidates, dist, k);
}

std::vector<int> strategy_select(const SelectionConfig& cfg,
                                 const std::vector<GradientRecord>& records, int batch_size) {
    SelectionReport unused;
    return strategy_select(cfg, records, batch_size, unused);
}

std::vector<int> strategy_select(const SelectionConfig& cfg,
                                 const std::vector<GradientRecord>& records, int batch_size,
                                 SelectionReport& report) {
    validate(cfg);
    check_records(records);

    const auto [mu, sigma] = loss_mean_sigma(records);
    report = SelectionReport{};
    report.mu_loss = mu;
    report.sigma_loss = sigma;

    std::vector<int> selected;
    switch (cfg.strategy) {
    case Strategy::all: {
        report.candidate_count = static_cast<int>(records.size());
        report.mu_grad = median_grad(records);
        for (const auto& r : records) {
            selected.push_back(r.sample_index);
        }
        break;
    }
    case Strategy::moderate: {
        const auto kept = loss_prefilter(records);
        std::vector<GradientRecord> candidates;
        for (const auto& r : records) {
            if (std::find(kept.begin(), kept.end(), r.sample_index) != kept.end()) {
                candidates.push_back(r);
            }
        }
        report.candidate_count = static_cast<int>(candidates.size());
        report.mu_grad = median_grad(candidates);
        selected = moderate_select(candidates, cfg.rho, batch_size);
        break;
    }
    case Strategy::high:
    case Strategy::low: {
        // no prefilter: ranked purely by gradient norm
        report.candidate_count = static_cast<int>(records.size());
        report.mu_grad = median_grad(records);
        const int k = selection_count(cfg.rho, batch_size);
        std::vector<Scalar> keys;
        keys.reserve(records.size());
        for (const auto& r : records) {
            keys.push_back(cfg.strategy == Strategy::high ? -r.grad_norm : r.grad_norm);
        }
        selected = take_by_key(records, keys, k);
        break;
    }
    case Strategy::random: {
        report.candidate_count = static_cast<int>(records.size());
        report.mu_grad = median_grad(records);
        const int k = selection_count(cfg.rho, batch_size);
        // draw over the sorted index set so the choice is independent of
        // record order
        std::vector<int> indices;
        indices.reserve(records.size());
        for (const auto& r : records) {
            indices.push_back(r.sample_index);
        }
        std::sort(indices.begin(), indices.end());
        Rng rng(derive_seed(cfg.seed, 0x5e1ec7));
        const auto picks = rng.sample_without_replacement(
            indices.size(), std::min<std::size_t>(static_cast<std::size_t>(k), indices.size()));
        for (const auto p : picks) {
            selected.push_back(indices[p]);
        }
        std::sort(selected.begin(), selected.end());
        break;
    }
    }

    auto fill = [&](GroupStats& g, bool in_selected) {
        Scalar sl = 0.0, sg = 0.0;
        int n = 0;
        for (const auto& r : records) {
            const bool is_sel = std::find(selected.begin(), selected.end(), r.sample_index) !=
                                selected.end();
            if (is_sel == in_selected) {
                sl += r.loss;
                sg += r.grad_norm;
                ++n;
            }
        }
        g.count = n;
        g.mean_loss = n > 0 ? sl / n : 0.0;
        g.mean_grad_norm = n > 0 ? sg / n : 0.0;
    };
    report.selected_indices = selected;
    fill(report.selected, true);
    fill(report.unselected, false);
    return selected;
}

std::vector<TercileRow> audit_terciles_from_records(const std::vector<GradientRecord>& records,
                                                    const std::vector<int>& target_lens) {
    if (records.size() < 3) {
        throw std::invalid_argument("tercile audit needs at least 3 samples");
    }
    if (records.size() != target_lens.size()) {
        throw std::invalid_argument("tercile audit: record/length count mismatch");
    }
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].grad_norm != records[b].grad_norm) {
            return records[a].grad_norm < records[b].grad_norm;
        }
        return records[a].sample_index < records[b].sample_index;
    });

    const std::size_t n = records.size();
    const std::size_t base = n / 3, rem = n % 3;
    const char* names[3] = {"low", "moderate", "high"};
    std::vector<TercileRow> rows;
    std::size_t at = 0;
    for (int g = 0; g < 3; ++g) {
        const std::size_t size = base + (static_cast<std::size_t>(g) < rem ? 1 : 0);
        TercileRow row;
        row.group = names[g];
        row.count = static_cast<int>(size);
        for (std::size_t i = 0; i < size; ++i, ++at) {
            const std::size_t j = order[at];
            row.mean_grad_norm += records[j].grad_norm;
            row.mean_loss += records[j].loss;
            row.mean_target_tokens += static_cast<Scalar>(target_lens[j]);
        }
        row.mean_grad_norm /= static_cast<Scalar>(size);
        row.mean_loss /= static_cast<Scalar>(size);
        row.mean_target_tokens /= static_cast<Scalar>(size);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<TercileRow> audit_by_gradient_tercile(const world::Dataset& dataset,
                                                  const model::ModelParams& params) {
    if (dataset.samples.size() < 3) {
        throw std::invalid_argument("tercile audit needs at least 3 samples");
    }
    std::vector<GradientRecord> records;
    std::vector<int> lens;
    records.reserve(dataset.samples.size());
    for (const auto& s : dataset.samples) {
        const auto sg = model::sample_gradient(params, s);
        records.push_back({sg.sample_index, sg.loss, sg.grad_norm});
        lens.push_back(s.target_len());
    }
    return audit_terciles_from_records(records, lens);
}

} // namespace driftlab::selection
