#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace driftlab {

// 64-bit reals everywhere; gradients are accumulated in the same precision
// as parameters. Matrices are row-major so flattening an array is a plain
// memcpy of its storage.
using Scalar = double;
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

using TokenId = std::int32_t;

} // namespace driftlab
