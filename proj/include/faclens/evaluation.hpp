#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faclens/feature_store.hpp"

namespace faclens {

struct ProbeModel;

struct ScoredRecord {
    std::string question_id;
    double score = 0.0;
    int label = 0;
};

/// Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie). O(n log n).
/// Throws InputError unless both classes are present and scores are finite.
double auc(std::span<const double> scores, std::span<const int> labels);
double auc(const std::vector<ScoredRecord>& records);

// ---- perplexity baseline ------------------------------------------------------

/// exp(-(1/|q|) sum_k log p(v_k | v_<k)).
double perplexity(std::span<const double> token_logprobs);
double ppl_score(const LogProbSet& logprobs, const std::string& question_id, std::int32_t layer);

struct LayerChoice {
    std::int32_t layer = 0;
    double auc = 0.0;
    std::vector<std::pair<std::int32_t, double>> per_layer;  // header order
};

/// Layer whose PPL (higher = more likely non-factual) gives the best AUC on
/// the labeled records; ties go to the lower layer index.
LayerChoice ppl_layer_select(const LogProbSet& logprobs, const std::vector<ScoredRecord>& labeled);

// ---- dual-threshold gate ----------------------------------------------------------

struct ThresholdPair {
    double t_pos = 0.0;  // mean p(y=1|x) over validation positives
    double t_neg = 0.0;  // mean p(y=1|x) over validation negatives
};

ThresholdPair calibrate_thresholds(const std::vector<ScoredRecord>& val_predictions);

enum class GateDecision { knows, unsure, does_not_know };

std::string to_string(GateDecision decision);

/// p1 > t_pos: does_not_know; p1 < t_neg: knows; otherwise (including
/// either boundary) unsure.
GateDecision gate(double p1, const ThresholdPair& thresholds);

// ---- reports / exports -----------------------------------------------------------

struct EvalReport {
    double auc = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    std::optional<ThresholdPair> thresholds;
    std::vector<ScoredRecord> per_record;
    std::string score_kind = "p_nonfactual";  // or "ppl"
    std::optional<std::int32_t> ppl_layer;
    std::optional<std::string> delta_histogram_csv;
};

EvalReport make_report(std::vector<ScoredRecord> records);
std::string eval_report_json(const EvalReport& report);

/// question_id,llm_id,label,z0..z{h-1}; unlabeled records leave label empty.
void export_encoder_features(const ProbeModel& model, const FeatureSet& features, std::ostream& out);

struct EncodedRow {
    std::string question_id;
    std::string llm_id;
    std::optional<int> label;
    std::vector<double> z;
};

std::vector<EncodedRow> read_encoder_features_csv(std::istream& in);

}  // namespace faclens
