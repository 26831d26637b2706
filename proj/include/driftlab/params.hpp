#pragma once

#include "driftlab/types.hpp"

#include <string>
#include <vector>

namespace driftlab {

struct NamedArray {
    std::string name;
    Mat value;
};

// A set of named dense arrays in a fixed canonical order. Flattening walks the
// arrays in that order and each array in row-major order, so a flat coordinate
// has one well-defined meaning for the lifetime of the set.
struct ParamSet {
    std::vector<NamedArray> arrays;

    Index total_size() const;
    bool same_structure(const ParamSet& other) const;
    const Mat& at(const std::string& name) const;
    Mat& at(const std::string& name);
    bool has(const std::string& name) const;
    int index_of(const std::string& name) const; // -1 if absent

    // Zero-valued copy of this set's structure.
    ParamSet zeros_like() const;
};

Vec flatten(const ParamSet& p);
ParamSet unflatten(const ParamSet& reference, const Vec& flat);

// Fixed accumulation order: arrays in canonical order, coefficients row-major.
void axpy_into(ParamSet& dst, const ParamSet& src, Scalar scale);

Scalar l2_norm(const ParamSet& p);

} // namespace driftlab
