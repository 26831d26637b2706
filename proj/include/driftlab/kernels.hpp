#pragma once

#include "driftlab/types.hpp"

#include <cmath>

namespace driftlab::kernels {

inline constexpr double kRmsNormEps = 1e-6;

// Row-wise stable softmax.
inline Mat softmax_rows(const Mat& x) {
    Mat y(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const Scalar m = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - m).exp();
        y.row(r) /= y.row(r).sum();
    }
    return y;
}

// Row-wise log-softmax: x - logsumexp(x).
inline Mat log_softmax_rows(const Mat& x) {
    Mat y(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const Scalar m = x.row(r).maxCoeff();
        const Scalar lse = m + std::log((x.row(r).array() - m).exp().sum());
        y.row(r) = x.row(r).array() - lse;
    }
    return y;
}

// Row-wise RMS normalization (no learned gain).
inline Mat rmsnorm_rows(const Mat& x) {
    Mat y(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const Scalar ms = x.row(r).squaredNorm() / static_cast<Scalar>(x.cols());
        y.row(r) = x.row(r) / std::sqrt(ms + kRmsNormEps);
    }
    return y;
}

inline Scalar gelu_scalar(Scalar v) {
    return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
}

inline Scalar gelu_grad_scalar(Scalar v) {
    constexpr Scalar inv_sqrt_2pi = 0.3989422804014326779;
    return 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
}

inline Mat gelu(const Mat& x) {
    return x.unaryExpr([](Scalar v) { return gelu_scalar(v); });
}

inline Mat relu(const Mat& x) {
    return x.cwiseMax(Scalar{0});
}

} // namespace driftlab::kernels
