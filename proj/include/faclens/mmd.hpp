#pragma once

// Maximum mean discrepancy between two sets of encoder features, as the
// biased V-statistic (diagonal terms included):
//
//   MMD = 1/Ns^2 sum_ij k(s_i, s_j) + 1/Nt^2 sum_ij k(t_i, t_j)
//         - 2/(Ns Nt) sum_ij k(s_i, t_j)

#include <optional>
#include <string>

#include "faclens/kernels.hpp"
#include "faclens/linalg.hpp"

namespace faclens {

struct KernelSpec {
    KernelKind kind = KernelKind::linear;
    std::optional<double> bandwidth;  // gaussian sigma; empty = median heuristic

    void validate() const;
};

std::string to_string(KernelKind kind);
KernelKind parse_kernel(const std::string& text);

/// Median Euclidean distance over distinct pairs of the pooled rows; 1.0
/// when every pair coincides.
double median_heuristic_bandwidth(const Matrix& zs, const Matrix& zt);

/// Parallel row sums with pairwise reduction; thread-count independent.
double mmd_loss(const Matrix& zs, const Matrix& zt, KernelKind kind, double sigma = 1.0);
/// Resolves a missing gaussian bandwidth with the median heuristic.
double mmd_loss(const Matrix& zs, const Matrix& zt, const KernelSpec& spec);

/// Straight triple loop with one running accumulator per term; the serial
/// reference for mmd_loss.
double mmd_loss_reference(const Matrix& zs, const Matrix& zt, KernelKind kind, double sigma = 1.0);

struct MmdWithGrad {
    double loss = 0.0;
    Matrix grad_source;  // dMMD / dZ_S, same shape as zs
    Matrix grad_target;  // dMMD / dZ_T
};

MmdWithGrad mmd_loss_and_grad(const Matrix& zs, const Matrix& zt, KernelKind kind, double sigma = 1.0);

}  // namespace faclens
