#include "faclens/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

namespace faclens::kernels {

int thread_count() { return omp_get_max_threads(); }

void set_thread_cap(int threads) {
    if (threads > 0) omp_set_num_threads(std::min(threads, omp_get_num_procs()));
}

int apply_thread_cap_from_env() {
    const char* env = std::getenv("FACLENS_THREADS");
    if (env == nullptr || *env == '\0') return 0;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v <= 0) return 0;
    set_thread_cap(static_cast<int>(v));
    return static_cast<int>(v);
}

double pairwise_sum(std::span<const double> values) {
    constexpr std::size_t kLeaf = 8;
    if (values.size() <= kLeaf) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double kernel_value(KernelKind kind, double sigma, const double* a, const double* b, Eigen::Index dim) {
    if (kind == KernelKind::linear) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < dim; ++k) s += a[k] * b[k];
        return s;
    }
    double d2 = 0.0;
    for (Eigen::Index k = 0; k < dim; ++k) {
        const double d = a[k] - b[k];
        d2 += d * d;
    }
    return std::exp(-d2 / (2.0 * sigma * sigma));
}

namespace {

double row_sum(const Matrix& a, Eigen::Index i, const Matrix& b, KernelKind kind, double sigma,
               std::vector<double>& scratch) {
    const Eigen::Index dim = a.cols();
    scratch.resize(static_cast<std::size_t>(b.rows()));
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
        scratch[static_cast<std::size_t>(j)] = kernel_value(kind, sigma, a.row(i).data(), b.row(j).data(), dim);
    }
    return pairwise_sum(scratch);
}

}  // namespace

std::vector<double> kernel_row_sums(const Matrix& a, const Matrix& b, KernelKind kind, double sigma) {
    const Eigen::Index n = a.rows();
    std::vector<double> sums(static_cast<std::size_t>(n));
#pragma omp parallel
    {
        std::vector<double> scratch;
#pragma omp for schedule(static)
        for (Eigen::Index i = 0; i < n; ++i) {
            sums[static_cast<std::size_t>(i)] = row_sum(a, i, b, kind, sigma, scratch);
        }
    }
    return sums;
}

std::vector<double> kernel_row_sums_serial(const Matrix& a, const Matrix& b, KernelKind kind, double sigma) {
    std::vector<double> sums(static_cast<std::size_t>(a.rows()));
    std::vector<double> scratch;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        sums[static_cast<std::size_t>(i)] = row_sum(a, i, b, kind, sigma, scratch);
    }
    return sums;
}

Matrix gram(const Matrix& a, const Matrix& b, KernelKind kind, double sigma) {
    Matrix k(a.rows(), b.rows());
    const Eigen::Index dim = a.cols();
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            k(i, j) = kernel_value(kind, sigma, a.row(i).data(), b.row(j).data(), dim);
        }
    }
    return k;
}

Matrix gram_serial(const Matrix& a, const Matrix& b, KernelKind kind, double sigma) {
    Matrix k(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            k(i, j) = kernel_value(kind, sigma, a.row(i).data(), b.row(j).data(), a.cols());
        }
    }
    return k;
}

std::vector<double> pairwise_distances(const Matrix& pooled) {
    std::vector<double> out;
    const Eigen::Index n = pooled.rows();
    out.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) out.push_back((pooled.row(i) - pooled.row(j)).norm());
    }
    return out;
}

}  // namespace faclens::kernels
