#include "driftlab/direction_analysis.hpp"

#include "driftlab/io.hpp"
#include "driftlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace driftlab::direction {

void validate(const DirectionStudyConfig& cfg) {
    if (cfg.k < 1) {
        throw std::invalid_argument("direction study: k must be >= 1");
    }
    if (cfg.n_samples < 3) {
        throw std::invalid_argument("direction study: n_samples must be >= 3");
    }
    if (cfg.n_permutations < 1) {
        throw std::invalid_argument("direction study: n_permutations must be >= 1");
    }
    if (!(cfg.high_quantile > 0.0 && cfg.high_quantile < 1.0) ||
        !(cfg.mod_band > 0.0 && cfg.mod_band < 1.0)) {
        throw std::invalid_argument("direction study: band fractions must be in (0,1)");
    }
    // HIGH is the top tail, MOD is centered on the median; they must not meet
    if (0.5 + cfg.mod_band / 2.0 > 1.0 - cfg.high_quantile) {
        throw std::invalid_argument("direction study: HIGH and MOD bands overlap");
    }
}

Vec reversion_direction(const model::ModelParams& pre, const model::ModelParams& aligned) {
    if (!(pre.config == aligned.config)) {
        throw std::invalid_argument("reversion_direction: configs differ");
    }
    return flatten(pre.params) - flatten(aligned.params);
}

Scalar topk_cosine(const Vec& g, const Vec& r, const std::vector<Index>& subset_coords, int k) {
    if (g.size() != r.size()) {
        throw std::invalid_argument("topk_cosine: vector length mismatch");
    }
    if (subset_coords.empty()) {
        throw std::invalid_argument("topk_cosine: empty subset");
    }
    for (const Index c : subset_coords) {
        if (c < 0 || c >= r.size()) {
            throw std::invalid_argument("topk_cosine: subset coordinate out of range");
        }
    }

    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(k), subset_coords.size());
    std::vector<Index> order = subset_coords;
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
        const Scalar aa = std::abs(r[a]), bb = std::abs(r[b]);
        if (aa != bb) {
            return aa > bb;
        }
        return a < b;
    });
    order.resize(take);

    Scalar dot = 0.0, gg = 0.0, rr = 0.0;
    for (const Index c : order) {
        dot += g[c] * r[c];
        gg += g[c] * g[c];
        rr += r[c] * r[c];
    }
    if (gg == 0.0 || rr == 0.0) {
        return 0.0;
    }
    return dot / (std::sqrt(gg) * std::sqrt(rr));
}

namespace {

Scalar pearson(const std::vector<Scalar>& x, const std::vector<Scalar>& y) {
    const std::size_t n = x.size();
    Scalar mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<Scalar>(n);
    my /= static_cast<Scalar>(n);
    Scalar sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw std::invalid_argument("pearson: zero variance");
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

std::pair<Scalar, Scalar> pearson_r_p(const std::vector<Scalar>& x, const std::vector<Scalar>& y,
                                      int n_permutations, std::uint64_t seed) {
    if (x.size() != y.size() || x.size() < 3) {
        throw std::invalid_argument("pearson_r_p: need equal lengths >= 3");
    }
    const Scalar r_obs = pearson(x, y);

    Rng rng(derive_seed(seed, 0x9e42));
    std::vector<Scalar> shuffled = y;
    long hits = 0;
    for (int it = 0; it < n_permutations; ++it) {
        rng.shuffle(shuffled);
        const Scalar r_perm = pearson(x, shuffled);
        if (std::abs(r_perm) >= std::abs(r_obs)) {
            ++hits;
        }
    }
    const Scalar p = static_cast<Scalar>(1 + hits) / static_cast<Scalar>(1 + n_permutations);
    return {r_obs, p};
}

std::vector<DirectionRow> direction_study_from_gradients(
    const std::vector<GradientSample>& samples, const Vec& reversion,
    const std::vector<std::pair<std::string, std::vector<Index>>>& subsets,
    const DirectionStudyConfig& cfg) {
    validate(cfg);
    const std::size_t n = samples.size();
    if (n < 3) {
        throw std::invalid_argument("direction study: need at least 3 gradient samples");
    }

    // stratify by gradient norm over the sampled records
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (samples[a].grad_norm != samples[b].grad_norm) {
            return samples[a].grad_norm < samples[b].grad_norm;
        }
        return a < b;
    });
    const std::size_t n_high = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(cfg.high_quantile * static_cast<Scalar>(n))));
    const std::size_t n_mod = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(cfg.mod_band * static_cast<Scalar>(n))));
    const std::size_t mod_begin = (n - n_mod) / 2;

    std::vector<std::size_t> high_band(order.end() - static_cast<long>(n_high), order.end());
    std::vector<std::size_t> mod_band(order.begin() + static_cast<long>(mod_begin),
                                      order.begin() + static_cast<long>(mod_begin + n_mod));

    std::vector<Scalar> norms;
    norms.reserve(n);
    for (const auto& s : samples) {
        norms.push_back(s.grad_norm);
    }

    std::vector<DirectionRow> rows;
    for (const auto& [name, coords] : subsets) {
        std::vector<Scalar> cosines;
        cosines.reserve(n);
        for (const auto& s : samples) {
            cosines.push_back(topk_cosine(s.grad, reversion, coords, cfg.k));
        }
        DirectionRow row;
        row.subset = name;
        for (const auto i : high_band) {
            row.mean_high += cosines[i];
        }
        row.mean_high /= static_cast<Scalar>(high_band.size());
        for (const auto i : mod_band) {
            row.mean_mod += cosines[i];
        }
        row.mean_mod /= static_cast<Scalar>(mod_band.size());
        const auto [r, p] = pearson_r_p(norms, cosines, cfg.n_permutations,
                                        derive_seed(cfg.seed, io::fnv1a_bytes(name)));
        row.r = r;
        row.p = p;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<DirectionRow> direction_study(const model::ModelParams& aligned,
                                          const model::ModelParams& pre,
                                          const world::Dataset& dataset,
                                          const DirectionStudyConfig& cfg) {
    validate(cfg);
    if (static_cast<int>(dataset.samples.size()) < cfg.n_samples) {
        throw std::invalid_argument("direction study: dataset smaller than n_samples");
    }

    const Vec r = reversion_direction(pre, aligned);

    Rng rng(derive_seed(cfg.seed, 0xd57d));
    auto picks = rng.sample_without_replacement(dataset.samples.size(),
                                                static_cast<std::size_t>(cfg.n_samples));
    std::sort(picks.begin(), picks.end());

    std::vector<GradientSample> samples;
    samples.reserve(picks.size());
    for (const auto p : picks) {
        auto sg = model::sample_gradient(aligned, dataset.samples[p]);
        GradientSample gs;
        gs.grad_norm = sg.grad_norm;
        gs.grad = flatten(sg.grads);
        samples.push_back(std::move(gs));
    }

    std::vector<std::pair<std::string, std::vector<Index>>> subsets;
    for (const auto& spec : cfg.subsets) {
        const auto view = model::param_vector_view(aligned, spec);
        std::string name;
        for (const auto& e : spec.entries) {
            if (!name.empty()) {
                name += "+";
            }
            name += e;
        }
        subsets.emplace_back(name, view.index_map);
    }
    return direction_study_from_gradients(samples, r, subsets, cfg);
}

std::string serialize_direction_csv(const std::vector<DirectionRow>& rows) {
    std::string out = "subset,HIGH,MOD,r,p\n";
    for (const auto& row : rows) {
        out += row.subset;
        out += ',';
        out += io::format_full(row.mean_high);
        out += ',';
        out += io::format_full(row.mean_mod);
        out += ',';
        out += io::format_full(row.r);
        out += ',';
        out += io::format_full(row.p);
        out += '\n';
    }
    return out;
}

} // namespace driftlab::direction
