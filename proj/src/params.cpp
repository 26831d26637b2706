#include "driftlab/params.hpp"

#include <cmath>
#include <stdexcept>

namespace driftlab {

Index ParamSet::total_size() const {
    Index n = 0;
    for (const auto& a : arrays) {
        n += a.value.size();
    }
    return n;
}

bool ParamSet::same_structure(const ParamSet& other) const {
    if (arrays.size() != other.arrays.size()) {
        return false;
    }
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        if (arrays[i].name != other.arrays[i].name ||
            arrays[i].value.rows() != other.arrays[i].value.rows() ||
            arrays[i].value.cols() != other.arrays[i].value.cols()) {
            return false;
        }
    }
    return true;
}

int ParamSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        if (arrays[i].name == name) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

bool ParamSet::has(const std::string& name) const {
    return index_of(name) >= 0;
}

const Mat& ParamSet::at(const std::string& name) const {
    const int i = index_of(name);
    if (i < 0) {
        throw std::invalid_argument("unknown parameter array: " + name);
    }
    return arrays[static_cast<std::size_t>(i)].value;
}

Mat& ParamSet::at(const std::string& name) {
    const int i = index_of(name);
    if (i < 0) {
        throw std::invalid_argument("unknown parameter array: " + name);
    }
    return arrays[static_cast<std::size_t>(i)].value;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet z;
    z.arrays.reserve(arrays.size());
    for (const auto& a : arrays) {
        z.arrays.push_back({a.name, Mat::Zero(a.value.rows(), a.value.cols())});
    }
    return z;
}

Vec flatten(const ParamSet& p) {
    Vec out(p.total_size());
    Index off = 0;
    for (const auto& a : p.arrays) {
        const Index n = a.value.size();
        // Row-major matrices: storage order is already the flattening order.
        out.segment(off, n) = Eigen::Map<const Vec>(a.value.data(), n);
        off += n;
    }
    return out;
}

ParamSet unflatten(const ParamSet& reference, const Vec& flat) {
    if (flat.size() != reference.total_size()) {
        throw std::invalid_argument("unflatten: length mismatch");
    }
    ParamSet out = reference;
    Index off = 0;
    for (auto& a : out.arrays) {
        const Index n = a.value.size();
        Eigen::Map<Vec>(a.value.data(), n) = flat.segment(off, n);
        off += n;
    }
    return out;
}

void axpy_into(ParamSet& dst, const ParamSet& src, Scalar scale) {
    if (!dst.same_structure(src)) {
        throw std::invalid_argument("axpy_into: structure mismatch");
    }
    for (std::size_t i = 0; i < dst.arrays.size(); ++i) {
        dst.arrays[i].value += scale * src.arrays[i].value;
    }
}

Scalar l2_norm(const ParamSet& p) {
    Scalar ss = 0.0;
    for (const auto& a : p.arrays) {
        ss += a.value.squaredNorm();
    }
    return std::sqrt(ss);
}

} // namespace driftlab
