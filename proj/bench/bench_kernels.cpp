// Serial reference vs OpenMP kernels. Thread count follows FACLENS_THREADS
// (or OMP_NUM_THREADS).

#include <benchmark/benchmark.h>

#include "faclens/feature_store.hpp"
#include "faclens/kernels.hpp"
#include "faclens/mmd.hpp"
#include "faclens/probe.hpp"
#include "faclens/rng.hpp"

using namespace faclens;

namespace {

Matrix random_matrix(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

FeatureSet random_features(std::size_t n, std::uint32_t dim) {
    Rng rng(3);
    std::vector<FeatureRecord> recs(n);
    for (std::size_t i = 0; i < n; ++i) {
        recs[i].question_id = "q" + std::to_string(i);
        recs[i].hidden.resize(dim);
        for (auto& v : recs[i].hidden) v = static_cast<float>(rng.normal());
    }
    return FeatureSet({"bench", "bench", LayerTag::middle(), Pooling::last_token, dim}, std::move(recs));
}

void BM_RowSums(benchmark::State& state, bool parallel) {
    const auto n = state.range(0);
    const Matrix a = random_matrix(1, n, 256), b = random_matrix(2, n, 256);
    for (auto _ : state) {
        auto r = parallel ? kernels::kernel_row_sums(a, b, KernelKind::gaussian, 4.0)
                          : kernels::kernel_row_sums_serial(a, b, KernelKind::gaussian, 4.0);
        benchmark::DoNotOptimize(r.data());
    }
    state.SetItemsProcessed(state.iterations() * n * n);
}

void BM_Gram(benchmark::State& state, bool parallel) {
    const auto n = state.range(0);
    const Matrix a = random_matrix(1, n, 256), b = random_matrix(2, n, 256);
    for (auto _ : state) {
        Matrix k = parallel ? kernels::gram(a, b, KernelKind::gaussian, 4.0)
                            : kernels::gram_serial(a, b, KernelKind::gaussian, 4.0);
        benchmark::DoNotOptimize(k.data());
    }
    state.SetItemsProcessed(state.iterations() * n * n);
}

void BM_Mmd(benchmark::State& state, bool parallel) {
    const auto n = state.range(0);
    const Matrix a = random_matrix(1, n, 256), b = random_matrix(2, n, 256);
    for (auto _ : state) {
        const double v = parallel ? mmd_loss(a, b, KernelKind::gaussian, 4.0)
                                  : mmd_loss_reference(a, b, KernelKind::gaussian, 4.0);
        benchmark::DoNotOptimize(v);
    }
    state.SetItemsProcessed(state.iterations() * 3 * n * n);
}

void BM_Predict(benchmark::State& state, bool parallel) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const FeatureSet fs = random_features(n, 1024);
    const ProbeModel m = ProbeModel::initialize({1024, kDefaultHiddenWidth, std::nullopt}, 1);
    for (auto _ : state) {
        auto p = parallel ? predict_batch(m, fs) : predict_batch_serial(m, fs);
        benchmark::DoNotOptimize(p.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

}  // namespace

BENCHMARK_CAPTURE(BM_RowSums, serial, false)->Arg(256)->Arg(1024);
BENCHMARK_CAPTURE(BM_RowSums, openmp, true)->Arg(256)->Arg(1024);
BENCHMARK_CAPTURE(BM_Gram, serial, false)->Arg(256)->Arg(1024);
BENCHMARK_CAPTURE(BM_Gram, openmp, true)->Arg(256)->Arg(1024);
BENCHMARK_CAPTURE(BM_Mmd, serial, false)->Arg(64)->Arg(512);
BENCHMARK_CAPTURE(BM_Mmd, openmp, true)->Arg(64)->Arg(512);
BENCHMARK_CAPTURE(BM_Predict, serial, false)->Arg(2000);
BENCHMARK_CAPTURE(BM_Predict, openmp, true)->Arg(2000);

int main(int argc, char** argv) {
    kernels::apply_thread_cap_from_env();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
