#include "driftlab/model.hpp"

#include "driftlab/kernels.hpp"
#include "driftlab/rng.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "snapshot format assumes a little-endian host");

namespace driftlab::model {

void validate(const ModelConfig& cfg) {
    if (cfg.vocab_size < 2 || cfg.context_len < 2 || cfg.d_model < 1 || cfg.n_heads < 1 ||
        cfg.mlp_hidden < 1) {
        throw std::invalid_argument("model config: dimensions must be positive");
    }
    if (cfg.d_model % cfg.n_heads != 0) {
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    }
    if (cfg.n_blocks < 3) {
        throw std::invalid_argument("model config: n_blocks must be >= 3");
    }
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.vocab_size == b.vocab_size && a.context_len == b.context_len &&
           a.d_model == b.d_model && a.n_heads == b.n_heads && a.n_blocks == b.n_blocks &&
           a.mlp_hidden == b.mlp_hidden;
}

namespace {

std::string block_name(int i, const char* part) {
    return "block_" + std::to_string(i) + "." + part;
}

struct ArrayShape {
    std::string name;
    Index rows, cols;
    Index fan_in;
};

std::vector<ArrayShape> canonical_shapes(const ModelConfig& cfg) {
    std::vector<ArrayShape> shapes;
    const Index d = cfg.d_model, v = cfg.vocab_size, h = cfg.mlp_hidden;
    shapes.push_back({"embed", v, d, d});
    for (int i = 0; i < cfg.n_blocks; ++i) {
        shapes.push_back({block_name(i, "Q"), d, d, d});
        shapes.push_back({block_name(i, "K"), d, d, d});
        shapes.push_back({block_name(i, "V"), d, d, d});
        shapes.push_back({block_name(i, "O"), d, d, d});
        shapes.push_back({block_name(i, "MLP_in"), d, h, d});
        shapes.push_back({block_name(i, "MLP_out"), h, d, h});
    }
    shapes.push_back({"head", d, v, d});
    return shapes;
}

// Fixed sinusoidal position table; not a parameter.
Mat position_table(int len, int d_model) {
    Mat pe(len, d_model);
    for (int pos = 0; pos < len; ++pos) {
        for (int i = 0; i < d_model; ++i) {
            const double rate = std::exp(-std::log(10000.0) * static_cast<double>(i - (i % 2)) /
                                         static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) * rate;
            pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

Mat causal_mask(int len) {
    Mat m = Mat::Zero(len, len);
    for (int r = 0; r < len; ++r) {
        for (int c = r + 1; c < len; ++c) {
            m(r, c) = -1e30;
        }
    }
    return m;
}

void validate_sample(const ModelConfig& cfg, const world::Sample& sample) {
    const int len = static_cast<int>(sample.tokens.size());
    if (len > cfg.context_len) {
        throw std::invalid_argument("sample longer than context_len");
    }
    if (sample.prompt_len <= 0 || sample.prompt_len >= len) {
        throw std::invalid_argument("sample target span is empty");
    }
    for (const TokenId t : sample.tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw std::invalid_argument("token id out of vocabulary");
        }
    }
}

} // namespace

Index total_param_count(const ModelConfig& cfg) {
    Index n = 0;
    for (const auto& s : canonical_shapes(cfg)) {
        n += s.rows * s.cols;
    }
    return n;
}

ModelParams init_model(const ModelConfig& cfg) {
    validate(cfg);
    ModelParams mp;
    mp.config = cfg;
    Rng rng(derive_seed(cfg.seed, 0x1817));
    for (const auto& s : canonical_shapes(cfg)) {
        Mat m(s.rows, s.cols);
        const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(s.fan_in));
        for (Index r = 0; r < s.rows; ++r) {
            for (Index c = 0; c < s.cols; ++c) {
                m(r, c) = scale * rng.gaussian();
            }
        }
        mp.params.arrays.push_back({s.name, std::move(m)});
    }
    return mp;
}

std::vector<std::string> resolve_subset(const ModelConfig& cfg, const SubsetSpec& spec) {
    if (spec.entries.empty()) {
        throw std::invalid_argument("subset spec is empty");
    }
    const auto shapes = canonical_shapes(cfg);
    std::set<std::string> known;
    for (const auto& s : shapes) {
        known.insert(s.name);
    }
    const int last = cfg.n_blocks - 1;
    const int mid_begin = cfg.n_blocks / 3;
    const int mid_end = (2 * cfg.n_blocks) / 3;

    std::set<std::string> selected;
    auto add_block = [&](int i, std::initializer_list<const char*> parts) {
        for (const char* p : parts) {
            selected.insert(block_name(i, p));
        }
    };
    for (const auto& raw : spec.entries) {
        if (raw == "ALL") {
            for (const auto& s : shapes) {
                selected.insert(s.name);
            }
        } else if (raw == "MIDDLE") {
            for (int i = mid_begin; i < mid_end; ++i) {
                add_block(i, {"Q", "K", "V", "O", "MLP_in", "MLP_out"});
            }
        } else if (raw == "LAST_V") {
            add_block(last, {"V"});
        } else if (raw == "LAST_O") {
            add_block(last, {"O"});
        } else if (raw == "LAST_MLP") {
            add_block(last, {"MLP_in", "MLP_out"});
        } else if (raw == "LAST_QKVO") {
            add_block(last, {"Q", "K", "V", "O"});
        } else if (raw == "LAST_ALL") {
            add_block(last, {"Q", "K", "V", "O", "MLP_in", "MLP_out"});
        } else if (known.count(raw)) {
            selected.insert(raw);
        } else if (raw.size() > 4 && raw.substr(raw.size() - 4) == ".MLP" &&
                   known.count(raw + "_in")) {
            selected.insert(raw + "_in");
            selected.insert(raw + "_out");
        } else {
            throw std::invalid_argument("unknown subset name: " + raw);
        }
    }

    std::vector<std::string> out;
    for (const auto& s : shapes) { // canonical order
        if (selected.count(s.name)) {
            out.push_back(s.name);
        }
    }
    return out;
}

VectorView param_vector_view(const ModelParams& params, const SubsetSpec& spec) {
    const auto names = resolve_subset(params.config, spec);
    std::set<std::string> wanted(names.begin(), names.end());

    VectorView view;
    Index total = 0;
    for (const auto& n : names) {
        total += params.params.at(n).size();
    }
    view.values.resize(total);
    view.index_map.reserve(static_cast<std::size_t>(total));

    Index global = 0, out = 0;
    for (const auto& a : params.params.arrays) {
        const Index n = a.value.size();
        if (wanted.count(a.name)) {
            view.values.segment(out, n) = Eigen::Map<const Vec>(a.value.data(), n);
            for (Index i = 0; i < n; ++i) {
                view.index_map.push_back(global + i);
            }
            out += n;
        }
        global += n;
    }
    return view;
}

Mat forward_logits(const ModelParams& mp, const std::vector<TokenId>& tokens) {
    const ModelConfig& cfg = mp.config;
    const int len = static_cast<int>(tokens.size());
    if (len < 1 || len > cfg.context_len) {
        throw std::invalid_argument("sequence length out of range");
    }
    const ParamSet& p = mp.params;
    const int dh = cfg.d_model / cfg.n_heads;
    const Scalar inv_sqrt_dh = 1.0 / std::sqrt(static_cast<Scalar>(dh));
    const Mat pe = position_table(len, cfg.d_model);
    const Mat mask = causal_mask(len);

    Mat x(len, cfg.d_model);
    const Mat& embed = p.at("embed");
    for (int i = 0; i < len; ++i) {
        if (tokens[static_cast<std::size_t>(i)] < 0 ||
            tokens[static_cast<std::size_t>(i)] >= cfg.vocab_size) {
            throw std::invalid_argument("token id out of vocabulary");
        }
        x.row(i) = embed.row(tokens[static_cast<std::size_t>(i)]);
    }
    x += pe;

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const Mat xn = kernels::rmsnorm_rows(x);
        const Mat q = xn * p.at(block_name(b, "Q"));
        const Mat k = xn * p.at(block_name(b, "K"));
        const Mat v = xn * p.at(block_name(b, "V"));
        Mat concat = Mat::Zero(len, cfg.d_model);
        for (int h = 0; h < cfg.n_heads; ++h) {
            // materialized slices keep operand layout identical to the taped path
            const Mat qh = q.middleCols(h * dh, dh);
            const Mat kh = k.middleCols(h * dh, dh);
            const Mat vh = v.middleCols(h * dh, dh);
            const Mat raw = qh * kh.transpose();
            Mat scores = raw * inv_sqrt_dh + mask;
            const Mat attn = kernels::softmax_rows(scores);
            const Mat oh = attn * vh;
            concat.middleCols(h * dh, dh) = oh;
        }
        // temporaries keep the accumulation order identical to the taped path
        const Mat attn_out = concat * p.at(block_name(b, "O"));
        x = x + attn_out;
        const Mat xm = kernels::rmsnorm_rows(x);
        const Mat mlp_out =
            kernels::gelu(xm * p.at(block_name(b, "MLP_in"))) * p.at(block_name(b, "MLP_out"));
        x = x + mlp_out;
    }

    return kernels::rmsnorm_rows(x) * p.at("head");
}

int build_logits_graph(autodiff::Graph& g, const ModelConfig& cfg,
                       const std::vector<TokenId>& tokens) {
    validate(cfg);
    const int len = static_cast<int>(tokens.size());
    if (len < 1 || len > cfg.context_len) {
        throw std::invalid_argument("sequence length out of range");
    }
    const int dh = cfg.d_model / cfg.n_heads;
    const Scalar inv_sqrt_dh = 1.0 / std::sqrt(static_cast<Scalar>(dh));

    std::vector<Index> token_rows(tokens.begin(), tokens.end());

    const int pe = g.constant(position_table(len, cfg.d_model));
    const int mask = g.constant(causal_mask(len));
    int x = g.add(g.gather_rows(g.param("embed"), token_rows), pe);

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const int xn = g.rmsnorm(x);
        const int q = g.matmul(xn, g.param(block_name(b, "Q")));
        const int k = g.matmul(xn, g.param(block_name(b, "K")));
        const int v = g.matmul(xn, g.param(block_name(b, "V")));
        int concat = -1;
        for (int h = 0; h < cfg.n_heads; ++h) {
            const int qh = g.slice_cols(q, h * dh, dh);
            const int kh = g.slice_cols(k, h * dh, dh);
            const int vh = g.slice_cols(v, h * dh, dh);
            const int scores = g.add(g.scale(g.matmul(qh, kh, false, true), inv_sqrt_dh), mask);
            const int oh = g.matmul(g.softmax(scores), vh);
            const int placed = g.place_cols(oh, h * dh, cfg.d_model);
            concat = (concat < 0) ? placed : g.add(concat, placed);
        }
        x = g.add(x, g.matmul(concat, g.param(block_name(b, "O"))));
        const int xm = g.rmsnorm(x);
        const int hidden = g.gelu(g.matmul(xm, g.param(block_name(b, "MLP_in"))));
        x = g.add(x, g.matmul(hidden, g.param(block_name(b, "MLP_out"))));
    }

    return g.matmul(g.rmsnorm(x), g.param("head"));
}

autodiff::Graph build_nll_graph(const ModelConfig& cfg, const world::Sample& sample) {
    validate_sample(cfg, sample);
    const int len = static_cast<int>(sample.tokens.size());

    autodiff::Graph g;
    const int logits = build_logits_graph(g, cfg, sample.tokens);

    // restrict to the target rows before the log-softmax; rows are
    // independent, so this matches the full-matrix computation exactly
    std::vector<Index> rows, pick_rows, pick_cols;
    for (int pos = sample.prompt_len; pos < len; ++pos) {
        rows.push_back(pos - 1);
        pick_rows.push_back(static_cast<Index>(pos - sample.prompt_len));
        pick_cols.push_back(sample.tokens[static_cast<std::size_t>(pos)]);
    }
    const int logp = g.log_softmax(g.gather_rows(logits, rows));
    const int loss = g.scale(g.reduce_mean(g.pick(logp, pick_rows, pick_cols)), -1.0);
    g.set_loss(loss);
    return g;
}

Scalar forward_nll(const ModelParams& mp, const world::Sample& sample) {
    validate_sample(mp.config, sample);
    const Mat logits = forward_logits(mp, sample.tokens);
    const Mat logp = kernels::log_softmax_rows(logits);
    const int len = static_cast<int>(sample.tokens.size());
    Scalar sum = 0.0;
    for (int pos = sample.prompt_len; pos < len; ++pos) {
        sum += logp(pos - 1, sample.tokens[static_cast<std::size_t>(pos)]);
    }
    return -(sum / static_cast<Scalar>(len - sample.prompt_len));
}

Vec target_logprob_losses(const ModelParams& mp, const world::Sample& sample) {
    validate_sample(mp.config, sample);
    const Mat logits = forward_logits(mp, sample.tokens);
    const Mat logp = kernels::log_softmax_rows(logits);
    const int len = static_cast<int>(sample.tokens.size());
    Vec out(len - sample.prompt_len);
    for (int pos = sample.prompt_len; pos < len; ++pos) {
        out[pos - sample.prompt_len] = -logp(pos - 1, sample.tokens[static_cast<std::size_t>(pos)]);
    }
    return out;
}

SampleGradient sample_gradient(const ModelParams& mp, const world::Sample& sample) {
    const autodiff::Graph g = build_nll_graph(mp.config, sample);
    auto result = autodiff::evaluate_and_backward(g, mp.params);
    SampleGradient rec;
    rec.sample_index = sample.index;
    rec.loss = result.loss;
    rec.grad_norm = l2_norm(result.grads);
    rec.grads = std::move(result.grads);
    return rec;
}

std::vector<TokenId> greedy_decode(const ModelParams& mp, const std::vector<TokenId>& prompt,
                                   int max_new) {
    const ModelConfig& cfg = mp.config;
    if (prompt.empty() || static_cast<int>(prompt.size()) >= cfg.context_len) {
        throw std::invalid_argument("prompt length must be in [1, context_len)");
    }
    if (max_new < 1) {
        throw std::invalid_argument("max_new must be >= 1");
    }
    if (static_cast<int>(prompt.size()) + max_new > cfg.context_len) {
        throw std::invalid_argument("prompt + max_new exceeds context_len");
    }
    std::vector<TokenId> ctx = prompt;
    std::vector<TokenId> out;
    out.reserve(static_cast<std::size_t>(max_new));
    for (int step = 0; step < max_new; ++step) {
        const Mat logits = forward_logits(mp, ctx);
        const auto row = logits.row(logits.rows() - 1);
        TokenId best = 0;
        for (Index c = 1; c < row.size(); ++c) {
            if (row[c] > row[best]) { // strict: ties keep the lowest id
                best = static_cast<TokenId>(c);
            }
        }
        out.push_back(best);
        ctx.push_back(best);
    }
    return out;
}

ModelParams perturb(const ModelParams& mp, const Vec& direction, Scalar alpha) {
    const Index total = mp.params.total_size();
    if (direction.size() != total) {
        throw std::invalid_argument("perturb: direction length mismatch");
    }
    if (std::abs(direction.norm() - 1.0) >= 1e-9) {
        throw std::invalid_argument("perturb: direction is not unit norm");
    }
    if (alpha == 0.0) {
        return mp;
    }
    ModelParams out = mp;
    const Vec flat = flatten(mp.params) + alpha * direction;
    out.params = unflatten(mp.params, flat);
    return out;
}

namespace {

constexpr char kMagic[8] = {'D', 'L', 'P', 'A', 'R', 'A', 'M', '1'};

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& off) {
    if (off + sizeof(T) > in.size()) {
        throw std::runtime_error("snapshot truncated");
    }
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

} // namespace

std::string serialize_params(const ModelParams& mp) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, 1u);
    put<std::int32_t>(out, mp.config.vocab_size);
    put<std::int32_t>(out, mp.config.context_len);
    put<std::int32_t>(out, mp.config.d_model);
    put<std::int32_t>(out, mp.config.n_heads);
    put<std::int32_t>(out, mp.config.n_blocks);
    put<std::int32_t>(out, mp.config.mlp_hidden);
    put<std::uint64_t>(out, mp.config.seed);
    for (const auto& a : mp.params.arrays) {
        const char* data = reinterpret_cast<const char*>(a.value.data());
        out.append(data, sizeof(Scalar) * static_cast<std::size_t>(a.value.size()));
    }
    return out;
}

ModelParams deserialize_params(const std::string& bytes) {
    std::size_t off = 0;
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("snapshot: bad magic");
    }
    off = sizeof(kMagic);
    const auto version = take<std::uint32_t>(bytes, off);
    if (version != 1u) {
        throw std::runtime_error("snapshot: unsupported version");
    }
    ModelConfig cfg;
    cfg.vocab_size = take<std::int32_t>(bytes, off);
    cfg.context_len = take<std::int32_t>(bytes, off);
    cfg.d_model = take<std::int32_t>(bytes, off);
    cfg.n_heads = take<std::int32_t>(bytes, off);
    cfg.n_blocks = take<std::int32_t>(bytes, off);
    cfg.mlp_hidden = take<std::int32_t>(bytes, off);
    cfg.seed = take<std::uint64_t>(bytes, off);
    validate(cfg);

    ModelParams mp;
    mp.config = cfg;
    for (const auto& s : canonical_shapes(cfg)) {
        Mat m(s.rows, s.cols);
        const std::size_t n_bytes = sizeof(Scalar) * static_cast<std::size_t>(m.size());
        if (off + n_bytes > bytes.size()) {
            throw std::runtime_error("snapshot truncated in array " + s.name);
        }
        std::memcpy(m.data(), bytes.data() + off, n_bytes);
        off += n_bytes;
        mp.params.arrays.push_back({s.name, std::move(m)});
    }
    if (off != bytes.size()) {
        throw std::runtime_error("snapshot has trailing bytes");
    }
    return mp;
}

void save_params(const ModelParams& mp, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    const std::string bytes = serialize_params(mp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelParams load_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open for reading: " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_params(bytes);
}

} // namespace driftlab::model
