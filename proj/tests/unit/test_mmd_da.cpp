#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "faclens/domain_adaptation.hpp"
#include "faclens/error.hpp"
#include "faclens/kernels.hpp"
#include "faclens/mmd.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace faclens;
using faclens::testing::gaussian_matrix;
using faclens::testing::make_feature_set;
using faclens::testing::question_ids;

namespace {

ModelShape shape(std::size_t in, std::size_t width, std::optional<std::size_t> adapter = std::nullopt) {
    ModelShape s;
    s.input_dim = in;
    s.hidden_width = width;
    s.adapter_input_dim = adapter;
    return s;
}

FeatureSet domain(const std::string& llm, std::size_t n, std::size_t dim, std::uint64_t seed, bool labeled = true,
                  std::size_t id_offset = 0) {
    Rng rng(seed);
    const Matrix x = gaussian_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>((i + seed) % 2);
    return make_feature_set(llm, question_ids("q", n, id_offset), x, y, labeled);
}

}  // namespace

TEST_CASE("linear MMD is the squared mean difference") {
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        const auto d = static_cast<Eigen::Index>(1 + rng.below(9));
        const Matrix a = gaussian_matrix(rng, static_cast<Eigen::Index>(1 + rng.below(30)), d);
        const Matrix b = gaussian_matrix(rng, static_cast<Eigen::Index>(1 + rng.below(30)), d, 2.0);
        const double oracle = testing::mean_difference_sq(a, b);
        CHECK(std::abs(mmd_loss(a, b, KernelKind::linear) - oracle) <= 1e-9);
        CHECK(std::abs(mmd_loss(a, a, KernelKind::linear)) <= 1e-9);
        CHECK(std::abs(mmd_loss(a, b, KernelKind::linear) - mmd_loss(b, a, KernelKind::linear)) <= 1e-12);
    }
}

TEST_CASE("gaussian MMD closed forms and properties") {
    SUBCASE("singletons") {
        Matrix a(1, 2), b(1, 2);
        a << 0.0, 0.0;
        b << 3.0, 4.0;
        const double sigma = 2.0;
        const double expected = 2.0 - 2.0 * std::exp(-25.0 / (2.0 * sigma * sigma));
        CHECK(mmd_loss(a, b, KernelKind::gaussian, sigma) == doctest::Approx(expected).epsilon(1e-14));
    }
    SUBCASE("symmetry, self-distance and non-negativity") {
        Rng rng(2);
        for (int t = 0; t < 20; ++t) {
            const Matrix a = gaussian_matrix(rng, 12, 3);
            const Matrix b = gaussian_matrix(rng, 7, 3, 1.5);
            const double ab = mmd_loss(a, b, KernelKind::gaussian, 1.3);
            CHECK(ab >= 0.0);
            CHECK(std::abs(ab - mmd_loss(b, a, KernelKind::gaussian, 1.3)) <= 1e-12);
            CHECK(std::abs(mmd_loss(a, a, KernelKind::gaussian, 1.3)) <= 1e-12);
        }
    }
    SUBCASE("parallel equals the serial reference") {
        Rng rng(3);
        const Matrix a = gaussian_matrix(rng, 150, 16);
        const Matrix b = gaussian_matrix(rng, 90, 16);
        for (auto kind : {KernelKind::linear, KernelKind::gaussian}) {
            CHECK(mmd_loss(a, b, kind, 2.0) == doctest::Approx(mmd_loss_reference(a, b, kind, 2.0)).epsilon(1e-12));
            CHECK(kernels::kernel_row_sums(a, b, kind, 2.0) == kernels::kernel_row_sums_serial(a, b, kind, 2.0));
            CHECK(kernels::gram(a, b, kind, 2.0) == kernels::gram_serial(a, b, kind, 2.0));
        }
    }
    SUBCASE("bad inputs") {
        CHECK_THROWS_AS(mmd_loss(Matrix(2, 3), Matrix(2, 4), KernelKind::linear), DimensionMismatch);
        CHECK_THROWS_AS(mmd_loss(Matrix(0, 3), Matrix(2, 3), KernelKind::linear), InputError);
        CHECK_THROWS_AS(mmd_loss(Matrix::Zero(2, 3), Matrix::Zero(2, 3), KernelKind::gaussian, 0.0), InputError);
        CHECK_THROWS_AS(parse_kernel("poly"), InputError);
        CHECK(parse_kernel("rbf") == KernelKind::gaussian);
        CHECK(parse_kernel(to_string(KernelKind::linear)) == KernelKind::linear);
    }
}

TEST_CASE("median heuristic") {
    Matrix a(2, 1), b(1, 1);
    a << 0.0, 1.0;
    b << 3.0;
    // Pairwise distances 1, 3, 2.
    CHECK(median_heuristic_bandwidth(a, b) == 2.0);
    CHECK(median_heuristic_bandwidth(Matrix::Zero(3, 2), Matrix::Zero(2, 2)) == 1.0);
    KernelSpec spec{KernelKind::gaussian, std::nullopt};
    CHECK(mmd_loss(a, b, spec) == mmd_loss(a, b, KernelKind::gaussian, 2.0));
}

TEST_CASE("pairwise sum") {
    std::vector<double> v(1000);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    CHECK(kernels::pairwise_sum(v) == 499500.0);
    CHECK(kernels::pairwise_sum(std::span<const double>()) == 0.0);
}

TEST_CASE("MMD gradients match central differences") {
    Rng rng(4);
    for (auto kind : {KernelKind::linear, KernelKind::gaussian}) {
        const Matrix zs = gaussian_matrix(rng, 6, 3);
        const Matrix zt = gaussian_matrix(rng, 6, 3, 1.7);
        const MmdWithGrad g = mmd_loss_and_grad(zs, zt, kind, 1.5);
        CHECK(g.loss == doctest::Approx(mmd_loss(zs, zt, kind, 1.5)).epsilon(1e-12));
        const double h = 1e-5;
        for (int side = 0; side < 2; ++side) {
            for (Eigen::Index i = 0; i < zs.rows(); ++i) {
                for (Eigen::Index k = 0; k < zs.cols(); ++k) {
                    Matrix up_s = zs, dn_s = zs, up_t = zt, dn_t = zt;
                    (side == 0 ? up_s : up_t)(i, k) += h;
                    (side == 0 ? dn_s : dn_t)(i, k) -= h;
                    const double num = (mmd_loss(up_s, up_t, kind, 1.5) - mmd_loss(dn_s, dn_t, kind, 1.5)) / (2 * h);
                    const double ana = (side == 0 ? g.grad_source : g.grad_target)(i, k);
                    CHECK(ana == doctest::Approx(num).epsilon(1e-6).scale(1e-8));
                }
            }
        }
    }
}

TEST_CASE("paired batch sampling") {
    const FeatureSet src = domain("s", 128, 4, 1);
    const FeatureSet tgt = domain("t", 128, 6, 2, false);
    const DomainPair pair = DomainPair::make(src, tgt);

    SUBCASE("aligned batches share question ids and cover the pool once") {
        const auto batches = question_aligned_batches(pair, 64, 9);
        CHECK(batches.size() == 2);
        std::multiset<std::size_t> seen;
        for (const auto& b : batches) {
            CHECK(b.source_rows.size() == 64);
            REQUIRE(b.source_rows.size() == b.target_rows.size());
            for (std::size_t i = 0; i < b.source_rows.size(); ++i) {
                CHECK(src[b.source_rows[i]].question_id == tgt[b.target_rows[i]].question_id);
                seen.insert(b.source_rows[i]);
            }
        }
        CHECK(seen.size() == 128);
        CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 128);
    }
    SUBCASE("uneven tail") {
        PairedBatchSampler s(pair.alignment, 50, 1);
        const auto batches = s.next_epoch();
        REQUIRE(batches.size() == 3);
        CHECK(batches[2].source_rows.size() == 28);
        CHECK(s.batches_per_epoch() == 3);
    }
    SUBCASE("epochs reshuffle, seeds reproduce") {
        PairedBatchSampler a(pair.alignment, 64, 5), b(pair.alignment, 64, 5);
        const auto a1 = a.next_epoch();
        CHECK(a1[0].source_rows == b.next_epoch()[0].source_rows);
        CHECK(a.next_epoch()[0].source_rows != a1[0].source_rows);
    }
    SUBCASE("unaligned batches draw both sides from the same pool") {
        PairedBatchSampler s(pair.alignment, 64, 3, false);
        std::multiset<std::size_t> src_rows, tgt_rows;
        std::size_t matches = 0;
        for (const auto& b : s.next_epoch()) {
            for (std::size_t i = 0; i < b.source_rows.size(); ++i) {
                src_rows.insert(b.source_rows[i]);
                tgt_rows.insert(b.target_rows[i]);
                matches += src[b.source_rows[i]].question_id == tgt[b.target_rows[i]].question_id;
            }
        }
        CHECK(std::set<std::size_t>(src_rows.begin(), src_rows.end()).size() == 128);
        CHECK(std::set<std::size_t>(tgt_rows.begin(), tgt_rows.end()).size() == 128);
        CHECK(matches < 10);
    }
    SUBCASE("batch larger than the pool") {
        CHECK_THROWS_AS(PairedBatchSampler(pair.alignment, 129, 1), InputError);
    }
    SUBCASE("only shared questions are paired") {
        const FeatureSet partial = domain("t", 40, 6, 3, false, 100);
        const DomainPair p2 = DomainPair::make(src, partial);
        CHECK(p2.alignment.pairs.size() == 28);
        CHECK(p2.alignment.unmatched_b.size() == 12);
    }
}

TEST_CASE("DA objective") {
    Rng rng(6);
    const ProbeModel m = ProbeModel::initialize(shape(4, 8), 2);
    const Matrix xs = gaussian_matrix(rng, 10, 4);
    std::vector<int> y(10);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);

    SUBCASE("target equal to source reduces to CE") {
        for (auto kind : {KernelKind::linear, KernelKind::gaussian}) {
            const DAStep s = da_step(m, xs, y, xs, InputRoute::native, kind, 1.0);
            const LossAndGrads ce = ce_loss_and_grads(m, xs, y);
            CHECK(std::abs(s.mmd) <= 1e-12);
            CHECK(s.ce == ce.loss);
            const auto a = tensors(s.grads);
            const auto b = tensors(ce.grads);
            for (std::size_t t = 0; t < a.size(); ++t) {
                for (std::size_t k = 0; k < a[t].size(); ++k) CHECK(a[t][k] == doctest::Approx(b[t][k]).epsilon(1e-12).scale(1e-12));
            }
        }
    }
    SUBCASE("classifier sees only CE") {
        const Matrix xt = gaussian_matrix(rng, 10, 4, 3.0);
        const DAStep s = da_step(m, xs, y, xt, InputRoute::native, KernelKind::linear, 1.0, 5.0);
        const LossAndGrads ce = ce_loss_and_grads(m, xs, y);
        CHECK(s.grads.classifier.weight == ce.grads.classifier.weight);
        CHECK(s.grads.classifier.bias == ce.grads.classifier.bias);
        CHECK(s.total == doctest::Approx(5.0 * s.mmd + s.ce));
        CHECK(s.mmd > 0.0);
    }
    SUBCASE("full gradient through the adapter matches central differences") {
        // Draw until no ReLU sits within reach of the finite-difference step.
        ProbeModel ma;
        Matrix xt;
        for (std::uint64_t seed = 11;; ++seed) {
            ma = ProbeModel::initialize(shape(4, 8, 3), seed);
            xt = gaussian_matrix(rng, 10, 3);
            if (testing::min_abs_preactivation(ma, xs, InputRoute::native) > 1e-3 &&
                testing::min_abs_preactivation(ma, xt, InputRoute::adapted) > 1e-3) {
                break;
            }
        }
        for (auto kind : {KernelKind::linear, KernelKind::gaussian}) {
            const DAStep s = da_step(ma, xs, y, xt, InputRoute::adapted, kind, 2.0, 0.7);
            const auto loss = [&](const ProbeModel& p) {
                return da_step(p, xs, y, xt, InputRoute::adapted, kind, 2.0, 0.7).total;
            };
            CHECK(testing::finite_difference_check(ma, s.grads, loss).max_rel_error < 1e-4);
        }
    }
    SUBCASE("mismatched batch sizes") {
        CHECK_THROWS_AS(da_step(m, xs, y, xs.topRows(3), InputRoute::native, KernelKind::linear, 1.0), InputError);
    }
}

TEST_CASE("train_da runs across widths and logs both terms") {
    const FeatureSet src = domain("s", 96, 5, 1);
    const FeatureSet val = domain("s", 40, 5, 2, true, 500);
    const FeatureSet tgt = domain("t", 96, 3, 3, false);
    DAConfig cfg;
    cfg.train.max_epochs = 3;
    cfg.train.hidden_width = 8;
    cfg.train.learning_rate = 1e-3;
    cfg.train.batch_size = 200;  // clamped to the pool
    const DAResult r = train_da(src, tgt, val, cfg);
    CHECK(r.aligned_questions == 96);
    REQUIRE(r.fit.model.adapter.has_value());
    CHECK(r.fit.model.adapter->in_dim() == 3);
    REQUIRE(r.fit.history.size() == 3);
    CHECK(r.fit.history[0].mmd_loss > 0.0);
    CHECK(r.fit.history[0].train_loss > 0.0);

    cfg.kernel = KernelSpec{KernelKind::gaussian, std::nullopt};
    const DAResult g = train_da(src, tgt, val, cfg);
    CHECK(g.sigma > 0.0);
    CHECK(g.sigma != 1.0);

    const DAResult again = train_da(src, tgt, val, cfg);
    CHECK(again.fit.history[2].train_loss == g.fit.history[2].train_loss);

    CHECK_THROWS_AS(train_da(src, domain("t", 10, 3, 4, false, 9000), val, cfg), InputError);
}

TEST_CASE("mixture counts") {
    const std::vector<std::size_t> equal = {100, 100, 100, 100};
    CHECK(mixture_counts(equal, std::vector<double>(4, 0.25)) == equal);

    const std::vector<std::size_t> sizes = {100, 50, 80};
    const std::vector<double> w = {0.5, 0.25, 0.25};
    const auto c = mixture_counts(sizes, w);
    CHECK(c == std::vector<std::size_t>{100, 50, 50});

    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        const std::size_t m = 1 + rng.below(5);
        std::vector<std::size_t> s(m);
        std::vector<double> a(m);
        double total_a = 0;
        for (std::size_t i = 0; i < m; ++i) {
            s[i] = 1 + rng.below(200);
            a[i] = rng.uniform(0.1, 1.0);
            total_a += a[i];
        }
        const auto counts = mixture_counts(s, a);
        std::size_t n = 0;
        for (auto v : counts) n += v;
        for (std::size_t i = 0; i < m; ++i) {
            CHECK(counts[i] <= s[i]);
            CHECK(std::abs(static_cast<double>(counts[i]) - a[i] / total_a * static_cast<double>(n)) <= 1.0 + 1e-9);
        }
    }
    CHECK_THROWS_AS(mixture_counts(sizes, std::vector<double>{0.5, 0.5}), InputError);
    CHECK_THROWS_AS(mixture_counts(sizes, std::vector<double>{0.5, 0.0, 0.5}), InputError);
}

TEST_CASE("build_mixture") {
    std::vector<FeatureSet> ds = {domain("a", 30, 3, 1), domain("b", 30, 3, 2), domain("c", 30, 3, 3)};
    const FeatureSet mix = build_mixture(ds);
    CHECK(mix.size() == 90);
    CHECK(mix.header().llm_id == "mixture");
    std::map<std::string, int> per_llm;
    for (std::size_t i = 0; i < mix.size(); ++i) {
        ++per_llm[mix.llm_of(i)];
        CHECK(mix[i].question_id.rfind(mix.llm_of(i) + "/", 0) == 0);
    }
    CHECK(per_llm == std::map<std::string, int>{{"a", 30}, {"b", 30}, {"c", 30}});
    CHECK(mix[31].hidden == ds[1][1].hidden);

    const FeatureSet weighted = build_mixture(ds, {2.0, 1.0, 1.0});
    CHECK(weighted.size() == 60);

    CHECK(build_mixture({ds[0]}) == ds[0]);
    CHECK_THROWS_AS(build_mixture(ds, {1.0}), InputError);
    CHECK_THROWS_AS(build_mixture({ds[0], domain("d", 5, 4, 1)}), DimensionMismatch);
    CHECK_THROWS_AS(build_mixture({ds[0], domain("u", 5, 3, 1, false)}), InputError);
}

TEST_CASE("concept shift and histogram") {
    const FeatureSet f = domain("a", 25, 3, 1);
    const ProbeModel m1 = ProbeModel::initialize(shape(3, 8), 1);
    const ProbeModel m2 = ProbeModel::initialize(shape(3, 8), 2);
    for (double d : concept_shift_delta(m1, m1, f)) CHECK(d == 0.0);
    const auto delta = concept_shift_delta(m1, m2, f);
    const auto p1 = predict_batch(m1, f);
    const auto p2 = predict_batch(m2, f);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(delta[i] == std::abs(p1[i].p_nonfactual - p2[i].p_nonfactual));
    CHECK_THROWS_AS(concept_shift_delta(m1, ProbeModel::initialize(shape(4, 8), 2), f), DimensionMismatch);

    const std::vector<double> vals = {0.0, 0.01, 0.019, 0.5, 1.0};
    const Histogram h = delta_histogram(vals, 50);
    REQUIRE(h.counts.size() == 50);
    CHECK(h.counts[0] == 3);
    CHECK(h.counts[25] == 1);
    CHECK(h.counts[49] == 1);
    double area = 0.0;
    for (std::size_t b = 0; b < 50; ++b) area += h.density[b] * (h.right[b] - h.left[b]);
    CHECK(area == doctest::Approx(1.0).epsilon(1e-12));
    std::ostringstream csv;
    write_histogram_csv(h, csv);
    CHECK(csv.str().rfind("bin_left,bin_right,density\n0.000000,0.020000,", 0) == 0);
    CHECK_THROWS_AS(delta_histogram(std::vector<double>{1.5}), InputError);

    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}
