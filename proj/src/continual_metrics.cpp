#include "driftlab/continual_metrics.hpp"

#include <algorithm>
#include <stdexcept>

namespace driftlab::continual {

io::JsonValue to_json(const ContinualSummary& s) {
    return io::JsonValue::object()
        .set("avg_perf", io::JsonValue::number(s.avg_perf))
        .set("bwt", io::JsonValue::number(s.bwt))
        .set("fm", io::JsonValue::number(s.fm))
        .set("max_drop", io::JsonValue::number(s.max_drop))
        .set("max_drop_observed", io::JsonValue::boolean(s.max_drop_observed));
}

Scalar exact_match_accuracy(const model::ModelParams& params, const world::Dataset& eval_set) {
    if (eval_set.samples.empty()) {
        throw std::invalid_argument("exact_match_accuracy: empty eval split");
    }
    long correct = 0;
    for (const auto& s : eval_set.samples) {
        const auto target = s.target();
        const auto decoded =
            model::greedy_decode(params, s.prompt(), static_cast<int>(target.size()));
        if (decoded == target) {
            ++correct;
        }
    }
    return 100.0 * static_cast<Scalar>(correct) / static_cast<Scalar>(eval_set.samples.size());
}

AccuracyMatrix accuracy_matrix(const std::vector<model::ModelParams>& checkpoints,
                               const std::vector<EvalTask>& tasks) {
    if (checkpoints.empty() || tasks.empty()) {
        throw std::invalid_argument("accuracy_matrix: need at least one checkpoint and task");
    }
    AccuracyMatrix R;
    for (std::size_t t = 0; t < checkpoints.size(); ++t) {
        R.stage_labels.push_back("stage_" + std::to_string(t + 1));
    }
    for (const auto& task : tasks) {
        R.task_labels.push_back(task.name);
    }
    for (const auto& ckpt : checkpoints) {
        std::vector<Scalar> row;
        row.reserve(tasks.size());
        for (const auto& task : tasks) {
            row.push_back(exact_match_accuracy(ckpt, task.eval));
        }
        R.values.push_back(std::move(row));
    }
    return R;
}

namespace {

void check_diag(const AccuracyMatrix& R, const std::vector<int>& diag_map) {
    if (static_cast<int>(diag_map.size()) != R.n_tasks()) {
        throw std::invalid_argument("diag_map size must equal task count");
    }
    std::vector<int> seen;
    for (const int s : diag_map) {
        if (s < 1 || s > R.n_stages()) {
            throw std::invalid_argument("diag_map stage out of range");
        }
        if (std::find(seen.begin(), seen.end(), s) != seen.end()) {
            throw std::invalid_argument("diag_map: a stage trains two tasks");
        }
        seen.push_back(s);
    }
}

} // namespace

ContinualSummary continual_summary(const AccuracyMatrix& R, const std::vector<int>& diag_map) {
    check_diag(R, diag_map);
    const int T = R.n_stages();
    const int K = R.n_tasks();
    if (T < 2) {
        throw std::runtime_error("continual_summary: BWT/FM undefined for fewer than 2 stages");
    }

    ContinualSummary out;

    Scalar perf = 0.0;
    for (int t = 0; t < T; ++t) {
        Scalar row = 0.0;
        for (int i = 0; i < K; ++i) {
            row += R.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
        }
        perf += row / static_cast<Scalar>(K);
    }
    out.avg_perf = perf / static_cast<Scalar>(T);

    // tasks trained before the final stage
    Scalar bwt = 0.0, fm = 0.0;
    int counted = 0;
    for (int i = 0; i < K; ++i) {
        const int own = diag_map[static_cast<std::size_t>(i)];
        if (own >= T) {
            continue;
        }
        const Scalar final_acc = R.values[static_cast<std::size_t>(T - 1)][static_cast<std::size_t>(i)];
        bwt += final_acc - R.values[static_cast<std::size_t>(own - 1)][static_cast<std::size_t>(i)];
        Scalar peak = R.values[0][static_cast<std::size_t>(i)];
        for (int t = 1; t < T; ++t) {
            peak = std::max(peak, R.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]);
        }
        fm += peak - final_acc;
        ++counted;
    }
    if (counted == 0) {
        throw std::runtime_error("continual_summary: no task trained before the final stage");
    }
    out.bwt = bwt / static_cast<Scalar>(counted);
    out.fm = fm / static_cast<Scalar>(counted);

    // worst same-task consecutive-stage drop, floored at zero
    Scalar max_drop = 0.0;
    bool observed = false;
    for (int t = 1; t < T; ++t) {
        for (int i = 0; i < K; ++i) {
            const Scalar drop =
                R.values[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i)] -
                R.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
            if (drop > 0.0) {
                observed = true;
                max_drop = std::max(max_drop, drop);
            }
        }
    }
    out.max_drop = max_drop;
    out.max_drop_observed = observed;
    return out;
}

InterferenceMatrix interference_matrix(const AccuracyMatrix& R, const std::vector<int>& diag_map) {
    check_diag(R, diag_map);
    const int T = R.n_stages();
    const int K = R.n_tasks();
    if (T < 2) {
        throw std::invalid_argument("interference_matrix: need at least 2 stages");
    }
    InterferenceMatrix I;
    I.task_labels = R.task_labels;
    for (int t = 1; t < T; ++t) {
        I.stage_labels.push_back(R.stage_labels[static_cast<std::size_t>(t)]);
        std::vector<Scalar> row;
        std::vector<bool> self_row;
        for (int i = 0; i < K; ++i) {
            const Scalar delta =
                R.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] -
                R.values[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i)];
            const bool self = diag_map[static_cast<std::size_t>(i)] == t + 1;
            row.push_back(delta);
            self_row.push_back(self);
            if (!self) {
                I.total += delta;
            }
        }
        I.values.push_back(std::move(row));
        I.self_mask.push_back(std::move(self_row));
    }
    return I;
}

std::string serialize_accuracy_csv(const AccuracyMatrix& R) {
    std::string out = "stage";
    for (const auto& t : R.task_labels) {
        out += ',';
        out += t;
    }
    out += '\n';
    for (int t = 0; t < R.n_stages(); ++t) {
        out += R.stage_labels[static_cast<std::size_t>(t)];
        for (int i = 0; i < R.n_tasks(); ++i) {
            out += ',';
            out += io::format_full(R.values[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]);
        }
        out += '\n';
    }
    return out;
}

std::string serialize_interference_csv(const InterferenceMatrix& I) {
    std::string out = "stage";
    for (const auto& t : I.task_labels) {
        out += ',';
        out += t;
    }
    out += ",row_kind\n";
    for (std::size_t t = 0; t < I.values.size(); ++t) {
        out += I.stage_labels[t];
        for (std::size_t i = 0; i < I.values[t].size(); ++i) {
            out += ',';
            if (I.self_mask[t][i]) {
                out += "self";
            } else {
                out += io::format_full(I.values[t][i]);
            }
        }
        out += ",interference\n";
    }
    out += "total,";
    out += io::format_full(I.total);
    for (std::size_t i = 1; i < I.task_labels.size(); ++i) {
        out += ',';
    }
    out += ",total\n";
    return out;
}

} // namespace driftlab::continual
