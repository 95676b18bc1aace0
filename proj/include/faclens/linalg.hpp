#pragma once

// Parallelism is expressed explicitly with OpenMP over records; Eigen's own
// GEMM threading stays off so results never depend on the thread count.
#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Dense>

#include <vector>

namespace faclens {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class FeatureSet;

/// Rows of `set` (float32 on disk) widened to float64, one row per record.
Matrix to_matrix(const FeatureSet& set);
Matrix to_matrix(const FeatureSet& set, const std::vector<std::size_t>& rows);

}  // namespace faclens
