#pragma once

// The probe: an MLP encoder over hidden question representations followed
// by a linear softmax classifier, with an optional input adapter for
// features whose width differs from the encoder input.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faclens/linalg.hpp"

namespace faclens {

inline constexpr std::size_t kEncoderDepth = 3;
inline constexpr std::size_t kDefaultHiddenWidth = 256;
inline constexpr std::size_t kNumClasses = 2;

/// y = W x + b, W stored (out x in).
struct Affine {
    Matrix weight;
    Vector bias;

    std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

struct ModelShape {
    std::size_t input_dim = 0;
    std::size_t hidden_width = kDefaultHiddenWidth;
    std::optional<std::size_t> adapter_input_dim;  // set => adapter (adapter_input_dim -> input_dim)

    friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Which input path a feature vector takes: straight into the encoder, or
/// through the adapter first.
enum class InputRoute { native, adapted };

struct ProbeModel {
    std::optional<Affine> adapter;
    std::array<Affine, kEncoderDepth> encoder;
    Affine classifier;

    /// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
    /// weights and biases, drawn in tensor order from one seeded stream.
    static ProbeModel initialize(const ModelShape& shape, std::uint64_t seed);
    static ProbeModel zeros(const ModelShape& shape);

    ModelShape shape() const;
    std::size_t input_dim() const { return encoder[0].in_dim(); }
    std::size_t hidden_width() const { return encoder[0].out_dim(); }
    std::size_t parameter_count() const;

    /// native if dim == input_dim, adapted if it matches the adapter input,
    /// else DimensionMismatch.
    InputRoute route_for(std::size_t dim) const;
    std::size_t route_dim(InputRoute route) const;

    /// Adds an identity-initialized (or seeded random, for unequal widths)
    /// adapter accepting `target_dim` inputs.
    void attach_adapter(std::size_t target_dim, std::uint64_t seed);

    ProbeModel zeros_like() const { return zeros(shape()); }
    bool all_finite() const;
};

/// Flat views of every parameter tensor, in the fixed order adapter (W, b),
/// encoder layers (W, b) x3, classifier (W, b). Absent adapter is skipped.
std::vector<std::span<double>> tensors(ProbeModel& model);
std::vector<std::span<const double>> tensors(const ProbeModel& model);
std::vector<std::string> tensor_names(const ProbeModel& model);

struct PredictionVector {
    double p_factual = 0.5;     // p(y = 0 | x)
    double p_nonfactual = 0.5;  // p(y = 1 | x)
};

struct ForwardResult {
    Vector z;  // encoder output
    PredictionVector p;
};

// ---- single record (inference path) -----------------------------------------

ForwardResult forward(const ProbeModel& model, const Vector& x, InputRoute route);
/// Route chosen from x.size(). Throws InputError on non-finite input.
ForwardResult forward(const ProbeModel& model, std::span<const float> x);

// ---- batched (training path) ------------------------------------------------

struct BatchForward {
    Matrix encoder_input;  // x, or adapter(x)
    std::array<Matrix, kEncoderDepth> pre;
    std::array<Matrix, kEncoderDepth> act;
    Matrix logits;
    Matrix probs;

    const Matrix& z() const { return act.back(); }
};

BatchForward forward_batch(const ProbeModel& model, const Matrix& x, InputRoute route);

/// Accumulates parameter gradients into `grads` given upstream gradients on
/// the logits and/or directly on the encoder output z (either may be null).
void backward_batch(const ProbeModel& model, const Matrix& x, InputRoute route, const BatchForward& fwd,
                    const Matrix* d_logits, const Matrix* d_z, ProbeModel& grads);

/// Mean cross-entropy of `logits` against labels; writes dL/dlogits when
/// `d_logits` is non-null.
double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix* d_logits);

struct LossAndGrads {
    double loss = 0.0;
    ProbeModel grads;
};

/// Mean CE over the batch with exact gradients for every parameter.
LossAndGrads ce_loss_and_grads(const ProbeModel& model, const Matrix& x, std::span<const int> labels,
                               InputRoute route = InputRoute::native);
double ce_loss(const ProbeModel& model, const Matrix& x, std::span<const int> labels,
               InputRoute route = InputRoute::native);

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;  // decoupled: p -= lr * wd * p
};

class AdamW {
public:
    AdamW(const ProbeModel& like, AdamConfig config);
    void step(ProbeModel& params, const ProbeModel& grads);
    long steps() const noexcept { return t_; }

private:
    AdamConfig config_;
    ProbeModel m_;
    ProbeModel v_;
    long t_ = 0;
};

// ---- training -----------------------------------------------------------------

class FeatureSet;

struct LabeledData {
    Matrix x;
    std::vector<int> y;
    std::vector<std::string> ids;

    std::size_t size() const { return y.size(); }
    /// Throws InputError when any record is unlabeled.
    static LabeledData from(const FeatureSet& set);
};

inline constexpr std::array<double, 3> kLearningRateGrid = {1e-3, 1e-4, 1e-5};

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int max_epochs = 100;
    std::size_t batch_size = 64;
    int patience = 10;  // epochs without val-AUC improvement before stopping
    std::uint64_t seed = 0;
    std::size_t hidden_width = kDefaultHiddenWidth;

    void validate() const;
    AdamConfig adam() const { return {learning_rate, 0.9, 0.999, 1e-8, weight_decay}; }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;  // CE (mean over batches)
    double mmd_loss = 0.0;    // domain adaptation only
    double val_auc = 0.0;
};

struct TrainResult {
    ProbeModel model;  // checkpoint with the best validation AUC
    std::vector<EpochLog> history;
    int best_epoch = 0;
    double best_val_auc = 0.0;
};

/// Mini-batch AdamW on mean CE, keeping the epoch with the best validation
/// AUC. Refuses single-class training or validation data.
TrainResult train(ProbeModel model, const LabeledData& train_data, const LabeledData& val_data,
                  const TrainConfig& config);
TrainResult train(const FeatureSet& train_set, const FeatureSet& val_set, const TrainConfig& config);

/// p(y=1|x) for every row (batched training-path forward).
std::vector<double> positive_scores(const ProbeModel& model, const Matrix& x, InputRoute route);

/// Per-record predictions, route chosen from the set's dim. Rows are split
/// across OpenMP threads; each row is computed independently, so the result
/// is bitwise identical to the serial loop.
std::vector<PredictionVector> predict_batch(const ProbeModel& model, const FeatureSet& features);
std::vector<PredictionVector> predict_batch_serial(const ProbeModel& model, const FeatureSet& features);

/// Encoder outputs z, one per record, same parallel contract as predict_batch.
std::vector<ForwardResult> forward_all(const ProbeModel& model, const FeatureSet& features);

}  // namespace faclens
