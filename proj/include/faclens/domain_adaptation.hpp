#pragma once

// Cross-LLM transfer of a probe: MMD + CE objective over question-aligned
// mini-batches, mixture domains, and the per-record concept-shift statistic.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "faclens/feature_store.hpp"
#include "faclens/mmd.hpp"
#include "faclens/probe.hpp"
#include "faclens/rng.hpp"

namespace faclens {

/// Labeled source features and unlabeled target features for the same
/// question pool, matched by question id.
struct DomainPair {
    const FeatureSet* source = nullptr;
    const FeatureSet* target = nullptr;
    Alignment alignment;

    static DomainPair make(const FeatureSet& source, const FeatureSet& target);
};

struct PairedBatch {
    std::vector<std::size_t> source_rows;  // indices into the source set
    std::vector<std::size_t> target_rows;  // indices into the target set
};

/// Emits one epoch of paired batches at a time. Aligned mode shuffles the
/// matched pairs once per epoch, so both sides of every batch carry the same
/// question ids in the same order. Unaligned mode (ablation control) shuffles
/// the two sides independently over the same pool.
class PairedBatchSampler {
public:
    PairedBatchSampler(const Alignment& alignment, std::size_t batch_size, std::uint64_t seed,
                       bool question_aligned = true);

    std::vector<PairedBatch> next_epoch();
    std::size_t batches_per_epoch() const;

private:
    std::vector<std::pair<std::size_t, std::size_t>> pairs_;
    std::size_t batch_size_;
    bool aligned_;
    Rng rng_;
};

/// A single epoch of aligned batches for `pair`.
std::vector<PairedBatch> question_aligned_batches(const DomainPair& pair, std::size_t batch_size,
                                                  std::uint64_t seed);

struct DAStep {
    double total = 0.0;  // mmd_weight * MMD + CE
    double ce = 0.0;
    double mmd = 0.0;
    ProbeModel grads;
};

/// L_DA on one paired batch. Adapter and encoder receive gradients from both
/// terms, the classifier from CE only. Batches must have equal size.
DAStep da_step(const ProbeModel& model, const Matrix& x_source, std::span<const int> y_source,
               const Matrix& x_target, InputRoute target_route, KernelKind kernel, double sigma,
               double mmd_weight = 1.0);

struct DAConfig {
    TrainConfig train = default_train();
    KernelSpec kernel;
    bool question_aligned = true;
    double mmd_weight = 1.0;
    bool force_adapter = false;  // add an adapter even when target dim == source dim

    static TrainConfig default_train() {
        TrainConfig t;
        t.learning_rate = 1e-5;
        return t;
    }
};

struct DAResult {
    TrainResult fit;  // model selected on source-validation AUC
    double sigma = 1.0;
    std::size_t aligned_questions = 0;
    std::size_t unmatched_source = 0;
    std::size_t unmatched_target = 0;
};

/// Trains on source labels plus target features. `init` (e.g. a model
/// trained on the source domain) is the starting point; without it the
/// model is freshly initialized from the config seed. When the target width
/// differs from the encoder input an adapter is attached.
DAResult train_da(const FeatureSet& source_train, const FeatureSet& target_train, const FeatureSet& source_val,
                  const DAConfig& config, std::optional<ProbeModel> init = std::nullopt);

// ---- mixture domain and concept shift ---------------------------------------------------

/// Records drawn per domain: floor(alpha_i T) plus largest-remainder
/// top-up, where T = min_i |D_i| / alpha_i. Weights are renormalized.
std::vector<std::size_t> mixture_counts(std::span<const std::size_t> sizes, std::span<const double> weights);

/// Union of labeled domains (leading records of each, per mixture_counts).
/// Ids become "<llm_id>/<question_id>" and provenance is kept per record.
/// Empty `weights` means uniform.
FeatureSet build_mixture(const std::vector<FeatureSet>& domains, std::vector<double> weights = {});

/// |p_m(y=1|x) - p_mix(y=1|x)| per record.
std::vector<double> concept_shift_delta(const ProbeModel& f_m, const ProbeModel& f_mix, const FeatureSet& features);

struct Histogram {
    std::vector<double> left;
    std::vector<double> right;
    std::vector<std::size_t> counts;
    std::vector<double> density;  // counts / (n * bin width)
};

/// Equal-width bins over [0, 1]; 1.0 falls in the last bin.
Histogram delta_histogram(std::span<const double> deltas, std::size_t bins = 50);
void write_histogram_csv(const Histogram& h, std::ostream& out);

double median(std::vector<double> values);

}  // namespace faclens
