#include "faclens/mmd.hpp"

#include <algorithm>
#include <cmath>

#include "faclens/error.hpp"

namespace faclens {

void KernelSpec::validate() const {
    if (bandwidth && !(*bandwidth > 0.0 && std::isfinite(*bandwidth))) {
        throw InputError("gaussian bandwidth must be positive");
    }
}

std::string to_string(KernelKind kind) { return kind == KernelKind::linear ? "linear" : "gaussian"; }

KernelKind parse_kernel(const std::string& text) {
    if (text == "linear") return KernelKind::linear;
    if (text == "gaussian" || text == "rbf") return KernelKind::gaussian;
    throw InputError("unknown kernel '" + text + "'");
}

namespace {

void check_inputs(const Matrix& zs, const Matrix& zt, KernelKind kind, double sigma) {
    if (zs.rows() == 0 || zt.rows() == 0) throw InputError("mmd: empty feature set");
    if (zs.cols() != zt.cols()) {
        throw DimensionMismatch(static_cast<std::size_t>(zs.cols()), static_cast<std::size_t>(zt.cols()), "mmd");
    }
    if (!zs.allFinite() || !zt.allFinite()) throw InputError("mmd: non-finite features");
    if (kind == KernelKind::gaussian && !(sigma > 0.0)) throw InputError("mmd: gaussian bandwidth must be positive");
}

double mean_of_sum(const std::vector<double>& row_sums, double n_a, double n_b) {
    return kernels::pairwise_sum(row_sums) / (n_a * n_b);
}

}  // namespace

double median_heuristic_bandwidth(const Matrix& zs, const Matrix& zt) {
    Matrix pooled(zs.rows() + zt.rows(), zs.cols());
    pooled << zs, zt;
    std::vector<double> d = kernels::pairwise_distances(pooled);
    if (d.empty()) return 1.0;
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    double median = *mid;
    if (d.size() % 2 == 0) {
        median = 0.5 * (median + *std::max_element(d.begin(), mid));
    }
    return median > 0.0 ? median : 1.0;
}

double mmd_loss(const Matrix& zs, const Matrix& zt, KernelKind kind, double sigma) {
    check_inputs(zs, zt, kind, sigma);
    const double ns = static_cast<double>(zs.rows());
    const double nt = static_cast<double>(zt.rows());
    const double ss = mean_of_sum(kernels::kernel_row_sums(zs, zs, kind, sigma), ns, ns);
    const double tt = mean_of_sum(kernels::kernel_row_sums(zt, zt, kind, sigma), nt, nt);
    const double st = mean_of_sum(kernels::kernel_row_sums(zs, zt, kind, sigma), ns, nt);
    return ss + tt - 2.0 * st;
}

double mmd_loss(const Matrix& zs, const Matrix& zt, const KernelSpec& spec) {
    spec.validate();
    const double sigma = spec.kind == KernelKind::gaussian ? spec.bandwidth.value_or(median_heuristic_bandwidth(zs, zt))
                                                           : 1.0;
    return mmd_loss(zs, zt, spec.kind, sigma);
}

double mmd_loss_reference(const Matrix& zs, const Matrix& zt, KernelKind kind, double sigma) {
    check_inputs(zs, zt, kind, sigma);
    const auto k = [&](const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
        return kernels::kernel_value(kind, sigma, a.row(i).data(), b.row(j).data(), a.cols());
    };
    double ss = 0.0, tt = 0.0, st = 0.0;
    for (Eigen::Index i = 0; i < zs.rows(); ++i)
        for (Eigen::Index j = 0; j < zs.rows(); ++j) ss += k(zs, i, zs, j);
    for (Eigen::Index i = 0; i < zt.rows(); ++i)
        for (Eigen::Index j = 0; j < zt.rows(); ++j) tt += k(zt, i, zt, j);
    for (Eigen::Index i = 0; i < zs.rows(); ++i)
        for (Eigen::Index j = 0; j < zt.rows(); ++j) st += k(zs, i, zt, j);
    const double ns = static_cast<double>(zs.rows());
    const double nt = static_cast<double>(zt.rows());
    return ss / (ns * ns) + tt / (nt * nt) - 2.0 * st / (ns * nt);
}

namespace {

double gram_mean(const Matrix& k, double n_a, double n_b) {
    std::vector<double> rows(static_cast<std::size_t>(k.rows()));
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
        rows[static_cast<std::size_t>(i)] =
            kernels::pairwise_sum(std::span<const double>(k.row(i).data(), static_cast<std::size_t>(k.cols())));
    }
    return mean_of_sum(rows, n_a, n_b);
}

// sum_j K(i,j) (a_i - b_j) for every row i.
Matrix weighted_differences(const Matrix& k, const Matrix& a, const Matrix& b) {
    const Vector row_sums = k.rowwise().sum();
    return a.array().colwise() * row_sums.array() - (k * b).array();
}

}  // namespace

MmdWithGrad mmd_loss_and_grad(const Matrix& zs, const Matrix& zt, KernelKind kind, double sigma) {
    check_inputs(zs, zt, kind, sigma);
    const double ns = static_cast<double>(zs.rows());
    const double nt = static_cast<double>(zt.rows());
    const double c_ss = 2.0 / (ns * ns);
    const double c_tt = 2.0 / (nt * nt);
    const double c_st = 2.0 / (ns * nt);

    const Matrix k_ss = kernels::gram(zs, zs, kind, sigma);
    const Matrix k_tt = kernels::gram(zt, zt, kind, sigma);
    const Matrix k_st = kernels::gram(zs, zt, kind, sigma);

    MmdWithGrad out;
    out.loss = gram_mean(k_ss, ns, ns) + gram_mean(k_tt, nt, nt) - 2.0 * gram_mean(k_st, ns, nt);

    if (kind == KernelKind::linear) {
        // d<a,b>/da = b, so every row gets the same column-sum combination.
        const Eigen::RowVectorXd sum_s = zs.colwise().sum();
        const Eigen::RowVectorXd sum_t = zt.colwise().sum();
        const Eigen::RowVectorXd g_s = c_ss * sum_s - c_st * sum_t;
        const Eigen::RowVectorXd g_t = c_tt * sum_t - c_st * sum_s;
        out.grad_source = g_s.replicate(zs.rows(), 1);
        out.grad_target = g_t.replicate(zt.rows(), 1);
    } else {
        // dk(a,b)/da = -k(a,b) (a - b) / sigma^2
        const double inv_s2 = 1.0 / (sigma * sigma);
        out.grad_source = -inv_s2 * (c_ss * weighted_differences(k_ss, zs, zs) -
                                     c_st * weighted_differences(k_st, zs, zt));
        const Matrix k_ts = k_st.transpose();
        out.grad_target = -inv_s2 * (c_tt * weighted_differences(k_tt, zt, zt) -
                                     c_st * weighted_differences(k_ts, zt, zs));
    }
    return out;
}

}  // namespace faclens
