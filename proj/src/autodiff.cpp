#include "driftlab/autodiff.hpp"

#include "driftlab/kernels.hpp"
#include "driftlab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace driftlab::autodiff {

const char* op_name(Op op) {
    switch (op) {
    case Op::constant: return "constant";
    case Op::input: return "input";
    case Op::param: return "param";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::multiply: return "multiply";
    case Op::scale: return "scale";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::log: return "log";
    case Op::relu: return "relu";
    case Op::gelu: return "gelu";
    case Op::rmsnorm: return "rmsnorm";
    case Op::gather_rows: return "gather_rows";
    case Op::pick: return "pick";
    case Op::reduce_mean: return "reduce_mean";
    case Op::slice_cols: return "slice_cols";
    case Op::place_cols: return "place_cols";
    }
    return "?";
}

int Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

namespace {

[[noreturn]] void structural_error(int node, Op op, const std::string& what) {
    throw std::invalid_argument("graph node " + std::to_string(node) + " (" +
                                std::string(op_name(op)) + "): " + what);
}

} // namespace

int Graph::constant(Mat value) {
    Node n;
    n.op = Op::constant;
    n.payload = std::move(value);
    return push(std::move(n));
}

int Graph::input(const std::string& name, Index rows, Index cols) {
    Node n;
    n.op = Op::input;
    n.name = name;
    n.in_rows = rows;
    n.in_cols = cols;
    return push(std::move(n));
}

int Graph::param(const std::string& name) {
    Node n;
    n.op = Op::param;
    n.name = name;
    return push(std::move(n));
}

int Graph::matmul(int a, int b, bool trans_a, bool trans_b) {
    Node n;
    n.op = Op::matmul;
    n.a = a;
    n.b = b;
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    return push(std::move(n));
}

int Graph::add(int a, int b) {
    Node n;
    n.op = Op::add;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

int Graph::multiply(int a, int b) {
    Node n;
    n.op = Op::multiply;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

int Graph::scale(int a, Scalar factor) {
    Node n;
    n.op = Op::scale;
    n.a = a;
    n.factor = factor;
    return push(std::move(n));
}

#define DRIFTLAB_UNARY(method, opcode)                                                             \
    int Graph::method(int a) {                                                                     \
        Node n;                                                                                    \
        n.op = opcode;                                                                             \
        n.a = a;                                                                                   \
        return push(std::move(n));                                                                 \
    }

DRIFTLAB_UNARY(softmax, Op::softmax)
DRIFTLAB_UNARY(log_softmax, Op::log_softmax)
DRIFTLAB_UNARY(log, Op::log)
DRIFTLAB_UNARY(relu, Op::relu)
DRIFTLAB_UNARY(gelu, Op::gelu)
DRIFTLAB_UNARY(rmsnorm, Op::rmsnorm)
DRIFTLAB_UNARY(reduce_mean, Op::reduce_mean)

#undef DRIFTLAB_UNARY

int Graph::gather_rows(int a, std::vector<Index> row_ids) {
    Node n;
    n.op = Op::gather_rows;
    n.a = a;
    n.rows = std::move(row_ids);
    return push(std::move(n));
}

int Graph::pick(int a, std::vector<Index> row_ids, std::vector<Index> col_ids) {
    if (row_ids.size() != col_ids.size()) {
        throw std::invalid_argument("pick: row/col index lists differ in length");
    }
    Node n;
    n.op = Op::pick;
    n.a = a;
    n.rows = std::move(row_ids);
    n.cols = std::move(col_ids);
    return push(std::move(n));
}

int Graph::slice_cols(int a, Index start, Index count) {
    if (start < 0 || count < 1) {
        throw std::invalid_argument("slice_cols: bad window");
    }
    Node n;
    n.op = Op::slice_cols;
    n.a = a;
    n.col_start = start;
    n.col_count = count;
    return push(std::move(n));
}

int Graph::place_cols(int a, Index start, Index col_total) {
    if (start < 0 || col_total < 1) {
        throw std::invalid_argument("place_cols: bad window");
    }
    Node n;
    n.op = Op::place_cols;
    n.a = a;
    n.col_start = start;
    n.col_total = col_total;
    return push(std::move(n));
}

void Graph::set_loss(int node) {
    if (node < 0 || node >= static_cast<int>(nodes_.size())) {
        throw std::invalid_argument("set_loss: node out of range");
    }
    loss_ = node;
}

struct Evaluator {
    const Graph& g;
    const ParamSet& params;
    const InputMap& inputs;
    std::vector<Mat> values; // storage for computed nodes only

    Evaluator(const Graph& gr, const ParamSet& p, const InputMap& in)
        : g(gr), params(p), inputs(in) {}

    // constants and parameters are read in place, never copied
    const Mat& val(int i) const {
        const Node& n = g.nodes_[static_cast<std::size_t>(i)];
        if (n.op == Op::constant) {
            return n.payload;
        }
        if (n.op == Op::param) {
            return params.at(n.name);
        }
        return values[static_cast<std::size_t>(i)];
    }

    void forward() {
        const auto& nodes = g.nodes_;
        values.resize(nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const Node& n = nodes[i];
            const int id = static_cast<int>(i);
            Mat& out = values[i];
            switch (n.op) {
            case Op::constant:
                continue; // read from the payload directly
            case Op::input: {
                const auto it = inputs.find(n.name);
                if (it == inputs.end()) {
                    structural_error(id, n.op, "unbound input '" + n.name + "'");
                }
                if (it->second.rows() != n.in_rows || it->second.cols() != n.in_cols) {
                    structural_error(id, n.op, "input '" + n.name + "' shape mismatch");
                }
                out = it->second;
                break;
            }
            case Op::param:
                if (!params.has(n.name)) {
                    structural_error(id, n.op, "unknown parameter '" + n.name + "'");
                }
                if (!params.at(n.name).allFinite()) {
                    throw std::runtime_error("non-finite value at graph node " +
                                             std::to_string(id) + " (param " + n.name + ")");
                }
                continue;
            case Op::matmul: {
                const Mat& A = val(n.a);
                const Mat& B = val(n.b);
                const Index ak = n.trans_a ? A.rows() : A.cols();
                const Index bk = n.trans_b ? B.cols() : B.rows();
                if (ak != bk) {
                    structural_error(id, n.op, "inner dimension mismatch");
                }
                // noalias keeps product evaluation on the construction path,
                // matching how the untaped forward materializes products
                if (!n.trans_a && !n.trans_b) {
                    out.noalias() = A * B;
                } else if (n.trans_a && !n.trans_b) {
                    out.noalias() = A.transpose() * B;
                } else if (!n.trans_a && n.trans_b) {
                    out.noalias() = A * B.transpose();
                } else {
                    out.noalias() = A.transpose() * B.transpose();
                }
                break;
            }
            case Op::add: {
                const Mat& A = val(n.a);
                const Mat& B = val(n.b);
                if (A.rows() != B.rows() || A.cols() != B.cols()) {
                    structural_error(id, n.op, "shape mismatch");
                }
                out = A + B;
                break;
            }
            case Op::multiply: {
                const Mat& A = val(n.a);
                const Mat& B = val(n.b);
                if (A.rows() != B.rows() || A.cols() != B.cols()) {
                    structural_error(id, n.op, "shape mismatch");
                }
                out = A.cwiseProduct(B);
                break;
            }
            case Op::scale:
                out = n.factor * val(n.a);
                break;
            case Op::softmax:
                out = kernels::softmax_rows(val(n.a));
                break;
            case Op::log_softmax:
                out = kernels::log_softmax_rows(val(n.a));
                break;
            case Op::log:
                out = val(n.a).array().log().matrix();
                break;
            case Op::relu:
                out = kernels::relu(val(n.a));
                break;
            case Op::gelu:
                out = kernels::gelu(val(n.a));
                break;
            case Op::rmsnorm:
                out = kernels::rmsnorm_rows(val(n.a));
                break;
            case Op::gather_rows: {
                const Mat& A = val(n.a);
                out.resize(static_cast<Index>(n.rows.size()), A.cols());
                for (std::size_t r = 0; r < n.rows.size(); ++r) {
                    if (n.rows[r] < 0 || n.rows[r] >= A.rows()) {
                        structural_error(id, n.op, "row index out of range");
                    }
                    out.row(static_cast<Index>(r)) = A.row(n.rows[r]);
                }
                break;
            }
            case Op::pick: {
                const Mat& A = val(n.a);
                out.resize(static_cast<Index>(n.rows.size()), 1);
                for (std::size_t r = 0; r < n.rows.size(); ++r) {
                    if (n.rows[r] < 0 || n.rows[r] >= A.rows() || n.cols[r] < 0 ||
                        n.cols[r] >= A.cols()) {
                        structural_error(id, n.op, "entry index out of range");
                    }
                    out(static_cast<Index>(r), 0) = A(n.rows[r], n.cols[r]);
                }
                break;
            }
            case Op::reduce_mean: {
                const Mat& A = val(n.a);
                out.resize(1, 1);
                out(0, 0) = A.sum() / static_cast<Scalar>(A.size());
                break;
            }
            case Op::slice_cols: {
                const Mat& A = val(n.a);
                if (n.col_start + n.col_count > A.cols()) {
                    structural_error(id, n.op, "window exceeds columns");
                }
                out = A.middleCols(n.col_start, n.col_count);
                break;
            }
            case Op::place_cols: {
                const Mat& A = val(n.a);
                if (n.col_start + A.cols() > n.col_total) {
                    structural_error(id, n.op, "window exceeds columns");
                }
                out = Mat::Zero(A.rows(), n.col_total);
                out.middleCols(n.col_start, A.cols()) = A;
                break;
            }
            }
            if (!out.allFinite()) {
                throw std::runtime_error("non-finite value at graph node " + std::to_string(id) +
                                         " (" + op_name(n.op) + ")");
            }
        }
    }

    Scalar loss() const {
        const int l = g.loss_;
        if (l < 0) {
            throw std::invalid_argument("graph has no loss node");
        }
        const Mat& v = val(l);
        if (v.rows() != 1 || v.cols() != 1) {
            throw std::invalid_argument("loss node is not scalar");
        }
        return v(0, 0);
    }

    ParamSet backward() {
        const auto& nodes = g.nodes_;
        std::vector<Mat> grads(nodes.size());
        auto grad_of = [&](int i) -> Mat& {
            Mat& gr = grads[static_cast<std::size_t>(i)];
            if (gr.size() == 0) {
                const Mat& v = val(i);
                gr = Mat::Zero(v.rows(), v.cols());
            }
            return gr;
        };

        grad_of(g.loss_)(0, 0) = 1.0;

        for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i) {
            const Node& n = nodes[static_cast<std::size_t>(i)];
            Mat& gr = grads[static_cast<std::size_t>(i)];
            if (gr.size() == 0) {
                continue; // node does not influence the loss
            }
            switch (n.op) {
            case Op::constant:
            case Op::input:
            case Op::param:
                break;
            case Op::matmul: {
                const Mat& A = val(n.a);
                const Mat& B = val(n.b);
                if (!n.trans_a && !n.trans_b) {
                    grad_of(n.a) += gr * B.transpose();
                    grad_of(n.b) += A.transpose() * gr;
                } else if (n.trans_a && !n.trans_b) {
                    grad_of(n.a) += B * gr.transpose();
                    grad_of(n.b) += A * gr;
                } else if (!n.trans_a && n.trans_b) {
                    grad_of(n.a) += gr * B;
                    grad_of(n.b) += gr.transpose() * A;
                } else {
                    grad_of(n.a) += B.transpose() * gr.transpose();
                    grad_of(n.b) += gr.transpose() * A.transpose();
                }
                break;
            }
            case Op::add:
                grad_of(n.a) += gr;
                grad_of(n.b) += gr;
                break;
            case Op::multiply:
                grad_of(n.a) += gr.cwiseProduct(val(n.b));
                grad_of(n.b) += gr.cwiseProduct(val(n.a));
                break;
            case Op::scale:
                grad_of(n.a) += n.factor * gr;
                break;
            case Op::softmax: {
                const Mat& y = val(i);
                Mat& ga = grad_of(n.a);
                for (Index r = 0; r < y.rows(); ++r) {
                    const Scalar dot = gr.row(r).cwiseProduct(y.row(r)).sum();
                    ga.row(r) += y.row(r).cwiseProduct((gr.row(r).array() - dot).matrix());
                }
                break;
            }
            case Op::log_softmax: {
                const Mat& x = val(n.a);
                Mat& ga = grad_of(n.a);
                for (Index r = 0; r < x.rows(); ++r) {
                    const Scalar m = x.row(r).maxCoeff();
                    Eigen::RowVectorXd p = (x.row(r).array() - m).exp();
                    p /= p.sum();
                    ga.row(r) += gr.row(r) - gr.row(r).sum() * p;
                }
                break;
            }
            case Op::log: {
                const Mat& x = val(n.a);
                grad_of(n.a) += gr.cwiseQuotient(x);
                break;
            }
            case Op::relu: {
                const Mat& x = val(n.a);
                grad_of(n.a) +=
                    gr.cwiseProduct(x.unaryExpr([](Scalar v) { return v > 0 ? Scalar{1} : Scalar{0}; }));
                break;
            }
            case Op::gelu: {
                const Mat& x = val(n.a);
                grad_of(n.a) +=
                    gr.cwiseProduct(x.unaryExpr([](Scalar v) { return kernels::gelu_grad_scalar(v); }));
                break;
            }
            case Op::rmsnorm: {
                const Mat& x = val(n.a);
                Mat& ga = grad_of(n.a);
                const Scalar cols = static_cast<Scalar>(x.cols());
                for (Index r = 0; r < x.rows(); ++r) {
                    const Scalar ms = x.row(r).squaredNorm() / cols;
                    const Scalar s = std::sqrt(ms + kernels::kRmsNormEps);
                    const Scalar dot = gr.row(r).cwiseProduct(x.row(r)).sum();
                    ga.row(r) += gr.row(r) / s - x.row(r) * (dot / (cols * s * s * s));
                }
                break;
            }
            case Op::gather_rows: {
                Mat& ga = grad_of(n.a);
                for (std::size_t r = 0; r < n.rows.size(); ++r) {
                    ga.row(n.rows[r]) += gr.row(static_cast<Index>(r));
                }
                break;
            }
            case Op::pick: {
                Mat& ga = grad_of(n.a);
                for (std::size_t r = 0; r < n.rows.size(); ++r) {
                    ga(n.rows[r], n.cols[r]) += gr(static_cast<Index>(r), 0);
                }
                break;
            }
            case Op::reduce_mean: {
                const Mat& x = val(n.a);
                grad_of(n.a).array() += gr(0, 0) / static_cast<Scalar>(x.size());
                break;
            }
            case Op::slice_cols:
                grad_of(n.a).middleCols(n.col_start, n.col_count) += gr;
                break;
            case Op::place_cols: {
                const Mat& x = val(n.a);
                grad_of(n.a) += gr.middleCols(n.col_start, x.cols());
                break;
            }
            }
        }

        // Collect per-array gradients; unused parameters contribute zeros.
        ParamSet out = params.zeros_like();
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const Node& n = nodes[i];
            if (n.op != Op::param || grads[i].size() == 0) {
                continue;
            }
            out.at(n.name) += grads[i];
        }
        return out;
    }
};

Scalar evaluate(const Graph& g, const ParamSet& params, const InputMap& inputs) {
    Evaluator ev(g, params, inputs);
    ev.forward();
    return ev.loss();
}

std::vector<Mat> evaluate_all(const Graph& g, const ParamSet& params, const InputMap& inputs) {
    Evaluator ev(g, params, inputs);
    ev.forward();
    std::vector<Mat> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        out[i] = ev.val(static_cast<int>(i));
    }
    return out;
}

BackwardResult evaluate_and_backward(const Graph& g, const ParamSet& params,
                                     const InputMap& inputs) {
    Evaluator ev(g, params, inputs);
    ev.forward();
    BackwardResult result;
    result.loss = ev.loss();
    result.grads = ev.backward();
    return result;
}

Scalar finite_difference_check(const std::function<Scalar(const ParamSet&)>& lossfn,
                               const ParamSet& analytic_grads, const ParamSet& at, Scalar step,
                               const FdOptions& opts) {
    if (step <= 0.0) {
        throw std::invalid_argument("finite_difference_check: step must be > 0");
    }
    const Vec theta = flatten(at);
    const Vec analytic = flatten(analytic_grads);
    if (theta.size() != analytic.size()) {
        throw std::invalid_argument("finite_difference_check: gradient/parameter size mismatch");
    }

    const Index total = theta.size();
    const Index want = std::min<Index>(total, std::max<Index>(opts.n_coords, 64));
    Rng rng(derive_seed(opts.seed, 0x9d5f));
    const auto coords = rng.sample_without_replacement(static_cast<std::size_t>(total),
                                                       static_cast<std::size_t>(want));

    Scalar worst = 0.0;
    Vec work = theta;
    for (const std::size_t c : coords) {
        const Index i = static_cast<Index>(c);
        const Scalar saved = work[i];
        work[i] = saved + step;
        const Scalar up = lossfn(unflatten(at, work));
        work[i] = saved - step;
        const Scalar down = lossfn(unflatten(at, work));
        work[i] = saved;
        const Scalar fd = (up - down) / (2.0 * step);
        const Scalar rel = std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-8);
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace driftlab::autodiff
