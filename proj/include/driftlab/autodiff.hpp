#pragma once

#include "driftlab/params.hpp"
#include "driftlab/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace driftlab::autodiff {

// Primitive set. The closed core is {matmul, add, multiply, softmax, log,
// relu, gelu, gather, reduce_mean}; log_softmax, rmsnorm, scale and pick are
// additions covered by the same finite-difference tests as the core ops.
enum class Op {
    constant,
    input,
    param,
    matmul,
    add,
    multiply,
    scale,
    softmax,
    log_softmax,
    log,
    relu,
    gelu,
    rmsnorm,
    gather_rows,
    pick,
    reduce_mean,
    slice_cols,
    place_cols,
};

const char* op_name(Op op);

struct Node {
    Op op{};
    int a = -1;
    int b = -1;
    bool trans_a = false;
    bool trans_b = false;
    Scalar factor = 0.0;               // scale
    Mat payload;                       // constant value
    std::string name;                  // param / input binding
    Index in_rows = 0, in_cols = 0;    // declared input shape
    std::vector<Index> rows, cols;     // gather_rows / pick indices
    Index col_start = 0, col_count = 0, col_total = 0; // slice_cols / place_cols
};

// A tape of primitive nodes in construction (= topological) order with a
// single designated scalar loss node. The graph holds structure only; values
// live in a per-evaluation workspace, so one graph can be re-evaluated
// against many parameter sets (finite differencing relies on this).
class Graph {
public:
    int constant(Mat value);
    int input(const std::string& name, Index rows, Index cols);
    int param(const std::string& name);
    int matmul(int a, int b, bool trans_a = false, bool trans_b = false);
    int add(int a, int b);
    int multiply(int a, int b);
    int scale(int a, Scalar factor);
    int softmax(int a);
    int log_softmax(int a);
    int log(int a);
    int relu(int a);
    int gelu(int a);
    int rmsnorm(int a);
    int gather_rows(int a, std::vector<Index> row_ids);
    int pick(int a, std::vector<Index> row_ids, std::vector<Index> col_ids);
    int reduce_mean(int a);
    // contiguous column window; equivalent to a matmul against a 0/1
    // selector, kept as its own op for speed
    int slice_cols(int a, Index start, Index count);
    // embed into a zero matrix of col_total columns at the given offset
    int place_cols(int a, Index start, Index col_total);

    void set_loss(int node);
    int loss_node() const { return loss_; }
    std::size_t size() const { return nodes_.size(); }
    const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

private:
    int push(Node n);
    friend struct Evaluator;
    std::vector<Node> nodes_;
    int loss_ = -1;
};

using InputMap = std::map<std::string, Mat>;

struct BackwardResult {
    Scalar loss = 0.0;
    ParamSet grads; // one entry per array in the parameter set, zeros where unused
};

// Forward pass only.
Scalar evaluate(const Graph& g, const ParamSet& params, const InputMap& inputs = {});

// Forward plus exact reverse-mode gradients with respect to every array in
// `params`. Node visitation and accumulation order are fixed by node index,
// so results are bit-reproducible.
BackwardResult evaluate_and_backward(const Graph& g, const ParamSet& params,
                                     const InputMap& inputs = {});

// Forward values of every node (for inspection/tests).
std::vector<Mat> evaluate_all(const Graph& g, const ParamSet& params,
                              const InputMap& inputs = {});

struct FdOptions {
    int n_coords = 64;       // sampled coordinates, at least 64 when available
    std::uint64_t seed = 0;
};

// Max over a seeded coordinate subset of
// |analytic - central_difference| / (|central_difference| + 1e-8).
Scalar finite_difference_check(const std::function<Scalar(const ParamSet&)>& lossfn,
                               const ParamSet& analytic_grads, const ParamSet& at,
                               Scalar step, const FdOptions& opts = {});

} // namespace driftlab::autodiff
