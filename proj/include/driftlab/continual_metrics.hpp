#pragma once

#include "driftlab/io.hpp"
#include "driftlab/model.hpp"
#include "driftlab/types.hpp"
#include "driftlab/world.hpp"

#include <string>
#include <vector>

namespace driftlab::continual {

// R[t][i] = 100 * exact-match accuracy of post-stage checkpoint t+1 on task
// i's eval split (rows are stages 1..T, columns are tasks).
struct AccuracyMatrix {
    std::vector<std::string> stage_labels;
    std::vector<std::string> task_labels;
    std::vector<std::vector<Scalar>> values;

    int n_stages() const { return static_cast<int>(values.size()); }
    int n_tasks() const { return values.empty() ? 0 : static_cast<int>(values[0].size()); }
};

struct ContinualSummary {
    Scalar avg_perf = 0.0;
    Scalar bwt = 0.0;
    Scalar fm = 0.0;
    Scalar max_drop = 0.0;
    bool max_drop_observed = false; // false when no same-task drop ever occurred
};

io::JsonValue to_json(const ContinualSummary& s);

// Exact-match of the target span under greedy decode, as a percentage.
Scalar exact_match_accuracy(const model::ModelParams& params, const world::Dataset& eval_set);

struct EvalTask {
    std::string name;
    world::Dataset eval;
};

AccuracyMatrix accuracy_matrix(const std::vector<model::ModelParams>& checkpoints,
                               const std::vector<EvalTask>& tasks);

// diag_map[i] = 1-based stage at which task i was trained.
ContinualSummary continual_summary(const AccuracyMatrix& R, const std::vector<int>& diag_map);

struct InterferenceMatrix {
    std::vector<std::string> stage_labels; // stages 2..T
    std::vector<std::string> task_labels;
    std::vector<std::vector<Scalar>> values; // I[t][i] = R[t][i] - R[t-1][i]
    std::vector<std::vector<bool>> self_mask; // true where task i trains at stage t
    Scalar total = 0.0;                       // sum over non-self entries
};

InterferenceMatrix interference_matrix(const AccuracyMatrix& R, const std::vector<int>& diag_map);

std::string serialize_accuracy_csv(const AccuracyMatrix& R);
std::string serialize_interference_csv(const InterferenceMatrix& I);

} // namespace driftlab::continual
