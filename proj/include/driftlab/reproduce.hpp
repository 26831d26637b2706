#pragma once

#include "driftlab/experiment.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace driftlab::reproduce {

struct CriterionResult {
    std::string name;
    bool pass = false;
    bool hard = true; // soft criteria are reported but never fail the run
    std::string detail;
};

// Configuration used by the `reproduce` pipeline: the full study grid at a
// scale that finishes on a laptop. Seeds 1..5.
experiment::ExperimentConfig reproduce_config();

// Reduced single-seed configuration for the byte-determinism double run.
experiment::ExperimentConfig determinism_config();

// Runs the full pipeline under out_dir and evaluates the world-validity,
// directional, continual, and determinism gates against the logged outputs.
// Emits one line per criterion to `log` as it goes.
std::vector<CriterionResult> run_reproduce_pipeline(const std::string& out_dir, int jobs,
                                                    std::ostream& log);

bool all_hard_passed(const std::vector<CriterionResult>& results);

} // namespace driftlab::reproduce
