#pragma once

// Data-parallel kernels. Each OpenMP kernel has a serial twin kept as the
// reference for tests and the benchmark. Reductions go through per-row
// partials followed by a fixed-order pairwise sum, so results do not depend
// on the number of threads.

#include <span>
#include <vector>

#include "faclens/linalg.hpp"

namespace faclens {

enum class KernelKind { linear, gaussian };

namespace kernels {

/// Threads OpenMP regions will use (respects FACLENS_THREADS, see
/// apply_thread_cap_from_env).
int thread_count();
void set_thread_cap(int threads);
/// Reads FACLENS_THREADS and caps the OpenMP thread count. Returns the cap
/// applied, or 0 when the variable is unset.
int apply_thread_cap_from_env();

/// Recursive pairwise summation, fixed split points.
double pairwise_sum(std::span<const double> values);

/// k(a, b) = <a, b> (linear) or exp(-|a-b|^2 / (2 sigma^2)) (gaussian).
double kernel_value(KernelKind kind, double sigma, const double* a, const double* b, Eigen::Index dim);

/// Row i holds sum_j k(a_i, b_j). Rows are distributed across threads.
std::vector<double> kernel_row_sums(const Matrix& a, const Matrix& b, KernelKind kind, double sigma);
std::vector<double> kernel_row_sums_serial(const Matrix& a, const Matrix& b, KernelKind kind, double sigma);

/// Full kernel matrix K_ij = k(a_i, b_j).
Matrix gram(const Matrix& a, const Matrix& b, KernelKind kind, double sigma);
Matrix gram_serial(const Matrix& a, const Matrix& b, KernelKind kind, double sigma);

/// Euclidean distances over all unordered pairs of distinct rows of `pooled`.
std::vector<double> pairwise_distances(const Matrix& pooled);

}  // namespace kernels
}  // namespace faclens
