#include "faclens/domain_adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "faclens/error.hpp"
#include "faclens/evaluation.hpp"

namespace faclens {

DomainPair DomainPair::make(const FeatureSet& source, const FeatureSet& target) {
    DomainPair p;
    p.source = &source;
    p.target = &target;
    p.alignment = align_by_question(source, target);
    return p;
}

// ---- sampling ---------------------------------------------------------------------

PairedBatchSampler::PairedBatchSampler(const Alignment& alignment, std::size_t batch_size, std::uint64_t seed,
                                       bool question_aligned)
    : pairs_(alignment.pairs), batch_size_(batch_size), aligned_(question_aligned), rng_(seed) {
    if (pairs_.empty()) throw InputError("paired batches need at least one aligned question");
    if (batch_size_ == 0) throw InputError("batch size must be positive");
    if (batch_size_ > pairs_.size()) {
        throw InputError("batch size " + std::to_string(batch_size_) + " exceeds the " +
                         std::to_string(pairs_.size()) + " aligned questions");
    }
}

std::size_t PairedBatchSampler::batches_per_epoch() const {
    return (pairs_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<PairedBatch> PairedBatchSampler::next_epoch() {
    std::vector<std::size_t> src(pairs_.size()), tgt(pairs_.size());
    if (aligned_) {
        rng_.shuffle(std::span(pairs_));
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            src[i] = pairs_[i].first;
            tgt[i] = pairs_[i].second;
        }
    } else {
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            src[i] = pairs_[i].first;
            tgt[i] = pairs_[i].second;
        }
        rng_.shuffle(std::span(src));
        rng_.shuffle(std::span(tgt));
    }
    std::vector<PairedBatch> out;
    out.reserve(batches_per_epoch());
    for (std::size_t start = 0; start < src.size(); start += batch_size_) {
        const std::size_t stop = std::min(src.size(), start + batch_size_);
        out.push_back({{src.begin() + static_cast<std::ptrdiff_t>(start), src.begin() + static_cast<std::ptrdiff_t>(stop)},
                       {tgt.begin() + static_cast<std::ptrdiff_t>(start), tgt.begin() + static_cast<std::ptrdiff_t>(stop)}});
    }
    return out;
}

std::vector<PairedBatch> question_aligned_batches(const DomainPair& pair, std::size_t batch_size,
                                                  std::uint64_t seed) {
    return PairedBatchSampler(pair.alignment, batch_size, seed, true).next_epoch();
}

// ---- objective ------------------------------------------------------------------------

DAStep da_step(const ProbeModel& model, const Matrix& x_source, std::span<const int> y_source,
               const Matrix& x_target, InputRoute target_route, KernelKind kernel, double sigma,
               double mmd_weight) {
    if (x_source.rows() != x_target.rows()) {
        throw InputError("da_step: source batch has " + std::to_string(x_source.rows()) + " rows, target " +
                         std::to_string(x_target.rows()));
    }
    const BatchForward fs = forward_batch(model, x_source, InputRoute::native);
    const BatchForward ft = forward_batch(model, x_target, target_route);

    DAStep out{0.0, 0.0, 0.0, model.zeros_like()};
    Matrix d_logits;
    out.ce = cross_entropy(fs.logits, y_source, &d_logits);
    MmdWithGrad m = mmd_loss_and_grad(fs.z(), ft.z(), kernel, sigma);
    out.mmd = m.loss;
    out.total = mmd_weight * m.loss + out.ce;
    if (mmd_weight != 1.0) {
        m.grad_source *= mmd_weight;
        m.grad_target *= mmd_weight;
    }
    backward_batch(model, x_source, InputRoute::native, fs, &d_logits, &m.grad_source, out.grads);
    backward_batch(model, x_target, target_route, ft, nullptr, &m.grad_target, out.grads);
    return out;
}

// ---- training ---------------------------------------------------------------------------

namespace {

Matrix gather(const Matrix& x, const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
    return out;
}

}  // namespace

DAResult train_da(const FeatureSet& source_train, const FeatureSet& target_train, const FeatureSet& source_val,
                  const DAConfig& config, std::optional<ProbeModel> init) {
    config.train.validate();
    config.kernel.validate();
    if (!(config.mmd_weight >= 0.0)) throw InputError("mmd weight must be non-negative");
    if (source_val.dim() != source_train.dim()) {
        throw DimensionMismatch(source_train.dim(), source_val.dim(), "source validation features");
    }

    ProbeModel model;
    if (init) {
        model = std::move(*init);
        if (model.input_dim() != source_train.dim()) {
            throw DimensionMismatch(model.input_dim(), source_train.dim(), "initial model vs source features");
        }
    } else {
        ModelShape shape;
        shape.input_dim = source_train.dim();
        shape.hidden_width = config.train.hidden_width;
        model = ProbeModel::initialize(shape, config.train.seed);
    }
    const bool needs_adapter = target_train.dim() != source_train.dim() || config.force_adapter;
    if (needs_adapter && !(model.adapter && model.adapter->in_dim() == target_train.dim())) {
        model.attach_adapter(target_train.dim(), config.train.seed ^ 0xADA97E5ull);
    }
    const InputRoute target_route = needs_adapter ? InputRoute::adapted : InputRoute::native;

    const LabeledData src = LabeledData::from(source_train);
    const LabeledData val = LabeledData::from(source_val);
    {
        const auto pos = std::count(src.y.begin(), src.y.end(), 1);
        if (pos == 0 || pos == static_cast<std::ptrdiff_t>(src.y.size())) {
            throw InputError("source training set holds a single class; AUC is undefined");
        }
        const auto vpos = std::count(val.y.begin(), val.y.end(), 1);
        if (vpos == 0 || vpos == static_cast<std::ptrdiff_t>(val.y.size())) {
            throw InputError("source validation set holds a single class; AUC is undefined");
        }
    }
    const Matrix xt = to_matrix(target_train);
    const DomainPair pair = DomainPair::make(source_train, target_train);
    PairedBatchSampler sampler(pair.alignment, std::min(config.train.batch_size, pair.alignment.pairs.size()),
                               config.train.seed ^ 0xBA7C4E5ull, config.question_aligned);

    DAResult out;
    out.aligned_questions = pair.alignment.pairs.size();
    out.unmatched_source = pair.alignment.unmatched_a.size();
    out.unmatched_target = pair.alignment.unmatched_b.size();
    out.fit.model = model;
    out.fit.best_val_auc = -1.0;

    std::optional<double> sigma;
    if (config.kernel.kind == KernelKind::linear) sigma = 1.0;
    if (config.kernel.bandwidth) sigma = *config.kernel.bandwidth;

    AdamW opt(model, config.train.adam());
    int since_best = 0;
    std::vector<int> yb;
    for (int epoch = 1; epoch <= config.train.max_epochs; ++epoch) {
        double ce_sum = 0.0, mmd_sum = 0.0;
        int batches = 0;
        for (const PairedBatch& b : sampler.next_epoch()) {
            const Matrix xs_b = gather(src.x, b.source_rows);
            const Matrix xt_b = gather(xt, b.target_rows);
            yb.clear();
            for (auto r : b.source_rows) yb.push_back(src.y[r]);
            if (!sigma) {
                // Bandwidth from the first batch's encoder features, then frozen.
                sigma = median_heuristic_bandwidth(forward_batch(model, xs_b, InputRoute::native).z(),
                                                   forward_batch(model, xt_b, target_route).z());
            }
            const DAStep step = da_step(model, xs_b, yb, xt_b, target_route, config.kernel.kind, *sigma,
                                        config.mmd_weight);
            opt.step(model, step.grads);
            ce_sum += step.ce;
            mmd_sum += step.mmd;
            ++batches;
        }
        if (!model.all_finite()) throw Error("domain adaptation diverged at epoch " + std::to_string(epoch));
        const double val_auc = auc(positive_scores(model, val.x, InputRoute::native), val.y);
        out.fit.history.push_back({epoch, ce_sum / batches, mmd_sum / batches, val_auc});
        if (val_auc > out.fit.best_val_auc) {
            out.fit.best_val_auc = val_auc;
            out.fit.best_epoch = epoch;
            out.fit.model = model;
            since_best = 0;
        } else if (++since_best >= config.train.patience) {
            break;
        }
    }
    out.sigma = sigma.value_or(1.0);
    return out;
}

// ---- mixture ------------------------------------------------------------------------------

std::vector<std::size_t> mixture_counts(std::span<const std::size_t> sizes, std::span<const double> weights) {
    if (sizes.size() != weights.size()) throw InputError("mixture: weight count differs from domain count");
    if (sizes.empty()) throw InputError("mixture: no domains");
    double total_w = 0.0;
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw InputError("mixture: weights must be positive");
        total_w += w;
    }
    std::vector<double> alpha(weights.begin(), weights.end());
    for (double& a : alpha) a /= total_w;

    double cap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sizes.size(); ++i) cap = std::min(cap, static_cast<double>(sizes[i]) / alpha[i]);
    const auto total = static_cast<std::size_t>(std::floor(cap + 1e-9));

    std::vector<std::size_t> counts(sizes.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const double exact = alpha[i] * static_cast<double>(total);
        counts[i] = std::min(sizes[i], static_cast<std::size_t>(std::floor(exact + 1e-9)));
        assigned += counts[i];
        remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [frac, i] : remainders) {
        if (assigned >= total) break;
        if (counts[i] < sizes[i]) {
            ++counts[i];
            ++assigned;
        }
    }
    return counts;
}

FeatureSet build_mixture(const std::vector<FeatureSet>& domains, std::vector<double> weights) {
    if (domains.empty()) throw InputError("mixture: no domains");
    if (weights.empty()) weights.assign(domains.size(), 1.0 / static_cast<double>(domains.size()));
    if (domains.size() == 1) {
        if (weights.size() != 1) throw InputError("mixture: weight count differs from domain count");
        return domains.front();
    }
    std::vector<std::size_t> sizes;
    for (const auto& d : domains) {
        if (d.dim() != domains.front().dim()) {
            throw DimensionMismatch(domains.front().dim(), d.dim(), "mixture member '" + d.header().llm_id + "'");
        }
        for (const auto& r : d.records()) {
            if (!is_labeled(r.label)) throw InputError("mixture: record '" + r.question_id + "' is unlabeled");
        }
        sizes.push_back(d.size());
    }
    const auto counts = mixture_counts(sizes, weights);

    FeatureHeader h = domains.front().header();
    h.llm_id = "mixture";
    for (const auto& d : domains) {
        if (d.header().dataset_id != h.dataset_id) h.dataset_id = "mixed";
    }
    std::vector<FeatureRecord> records;
    for (std::size_t m = 0; m < domains.size(); ++m) {
        const auto& d = domains[m];
        for (std::size_t i = 0; i < counts[m]; ++i) {
            FeatureRecord r = d[i];
            r.llm_id = d.llm_of(i);
            r.question_id = r.llm_id + "/" + r.question_id;
            records.push_back(std::move(r));
        }
    }
    return FeatureSet(std::move(h), std::move(records));
}

std::vector<double> concept_shift_delta(const ProbeModel& f_m, const ProbeModel& f_mix, const FeatureSet& features) {
    const auto a = predict_batch(f_m, features);
    const auto b = predict_batch(f_mix, features);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::abs(a[i].p_nonfactual - b[i].p_nonfactual);
    return out;
}

Histogram delta_histogram(std::span<const double> deltas, std::size_t bins) {
    if (bins == 0) throw InputError("histogram needs at least one bin");
    Histogram h;
    h.counts.assign(bins, 0);
    const double width = 1.0 / static_cast<double>(bins);
    for (double d : deltas) {
        if (!(d >= 0.0 && d <= 1.0)) throw InputError("delta outside [0, 1]");
        auto b = static_cast<std::size_t>(d * static_cast<double>(bins));
        h.counts[std::min(b, bins - 1)] += 1;
    }
    const double n = static_cast<double>(deltas.size());
    for (std::size_t b = 0; b < bins; ++b) {
        h.left.push_back(static_cast<double>(b) * width);
        h.right.push_back(static_cast<double>(b + 1) * width);
        h.density.push_back(deltas.empty() ? 0.0 : static_cast<double>(h.counts[b]) / (n * width));
    }
    return h;
}

void write_histogram_csv(const Histogram& h, std::ostream& out) {
    out << "bin_left,bin_right,density\n";
    char buf[96];
    for (std::size_t b = 0; b < h.density.size(); ++b) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.17g\n", h.left[b], h.right[b], h.density[b]);
        out << buf;
    }
}

double median(std::vector<double> values) {
    if (values.empty()) throw InputError("median of an empty list");
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    if (values.size() % 2 == 1) return *mid;
    return 0.5 * (*mid + *std::max_element(values.begin(), mid));
}

}  // namespace faclens
