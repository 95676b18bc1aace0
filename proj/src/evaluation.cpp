#include "faclens/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "faclens/error.hpp"
#include "faclens/probe.hpp"

namespace faclens {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw InputError("auc: score and label counts differ");
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw InputError("auc: non-finite score");
        if (labels[i] != 0 && labels[i] != 1) throw InputError("auc: labels must be 0 or 1");
        n_pos += labels[i] == 1;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw InputError("auc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Walk tie groups in ascending score order. Each positive beats every
    // negative below its group and ties with the negatives inside it; the
    // count is kept doubled so it stays an exact integer.
    std::uint64_t twice_u = 0;
    std::uint64_t negatives_below = 0;
    for (std::size_t g = 0; g < order.size();) {
        std::size_t end = g;
        std::uint64_t pos = 0, neg = 0;
        while (end < order.size() && scores[order[end]] == scores[order[g]]) {
            (labels[order[end]] == 1 ? pos : neg) += 1;
            ++end;
        }
        twice_u += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        g = end;
    }
    return (static_cast<double>(twice_u) * 0.5) / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc(const std::vector<ScoredRecord>& records) {
    std::vector<double> s;
    std::vector<int> y;
    s.reserve(records.size());
    y.reserve(records.size());
    for (const auto& r : records) {
        s.push_back(r.score);
        y.push_back(r.label);
    }
    return auc(s, y);
}

// ---- perplexity -------------------------------------------------------------------

double perplexity(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) throw InputError("perplexity of zero tokens");
    double nll = 0.0;
    for (double lp : token_logprobs) {
        if (!std::isfinite(lp) || lp > 0.0) throw InputError("log-probs must be finite and <= 0");
        nll -= lp;
    }
    return std::exp(nll / static_cast<double>(token_logprobs.size()));
}

double ppl_score(const LogProbSet& logprobs, const std::string& question_id, std::int32_t layer) {
    const LogProbRecord* rec = logprobs.find(question_id);
    if (rec == nullptr) throw InputError("no log-probs for question '" + question_id + "'");
    const auto slot = logprobs.layer_slot(layer);
    if (!slot) throw InputError("layer " + std::to_string(layer) + " not present in log-prob set");
    return perplexity(rec->token_logprobs[*slot]);
}

LayerChoice ppl_layer_select(const LogProbSet& logprobs, const std::vector<ScoredRecord>& labeled) {
    if (logprobs.header().layers.empty()) throw InputError("log-prob set lists no layers");
    LayerChoice best;
    bool have = false;
    std::vector<int> y;
    for (const auto& r : labeled) y.push_back(r.label);
    for (std::int32_t layer : logprobs.header().layers) {
        std::vector<double> s;
        s.reserve(labeled.size());
        for (const auto& r : labeled) s.push_back(ppl_score(logprobs, r.question_id, layer));
        const double a = auc(s, y);
        best.per_layer.emplace_back(layer, a);
        if (!have || a > best.auc || (a == best.auc && layer < best.layer)) {
            best.layer = layer;
            best.auc = a;
            have = true;
        }
    }
    return best;
}

// ---- thresholds ---------------------------------------------------------------------

ThresholdPair calibrate_thresholds(const std::vector<ScoredRecord>& val) {
    double sum_pos = 0.0, sum_neg = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    for (const auto& r : val) {
        if (!std::isfinite(r.score)) throw InputError("calibrate_thresholds: non-finite score");
        if (r.label == 1) {
            sum_pos += r.score;
            ++n_pos;
        } else if (r.label == 0) {
            sum_neg += r.score;
            ++n_neg;
        } else {
            throw InputError("calibrate_thresholds: labels must be 0 or 1");
        }
    }
    if (n_pos == 0 || n_neg == 0) throw InputError("calibrate_thresholds: both classes must be present");
    return {sum_pos / static_cast<double>(n_pos), sum_neg / static_cast<double>(n_neg)};
}

std::string to_string(GateDecision d) {
    switch (d) {
        case GateDecision::knows: return "knows";
        case GateDecision::unsure: return "unsure";
        case GateDecision::does_not_know: return "does_not_know";
    }
    return "unsure";
}

GateDecision gate(double p1, const ThresholdPair& t) {
    if (p1 > t.t_pos) return GateDecision::does_not_know;
    if (p1 < t.t_neg) return GateDecision::knows;
    return GateDecision::unsure;
}

// ---- reports ----------------------------------------------------------------------------

EvalReport make_report(std::vector<ScoredRecord> records) {
    EvalReport r;
    for (const auto& rec : records) (rec.label == 1 ? r.n_pos : r.n_neg) += 1;
    r.auc = auc(records);
    r.per_record = std::move(records);
    return r;
}

std::string eval_report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["auc"] = report.auc;
    j["n_pos"] = report.n_pos;
    j["n_neg"] = report.n_neg;
    j["score_kind"] = report.score_kind;
    if (report.ppl_layer) j["ppl_layer"] = *report.ppl_layer;
    if (report.thresholds) {
        j["thresholds"] = {{"t_pos", report.thresholds->t_pos}, {"t_neg", report.thresholds->t_neg}};
    } else {
        j["thresholds"] = nullptr;
    }
    if (report.delta_histogram_csv) j["delta_histogram_csv"] = *report.delta_histogram_csv;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : report.per_record) {
        nlohmann::ordered_json row;
        row["question_id"] = r.question_id;
        row["score"] = r.score;
        row["label"] = r.label;
        if (report.thresholds && report.score_kind == "p_nonfactual") {
            row["decision"] = to_string(gate(r.score, *report.thresholds));
        }
        rows.push_back(std::move(row));
    }
    j["per_record"] = std::move(rows);
    return j.dump(2) + "\n";
}

// ---- encoder feature CSV -------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

}  // namespace

void export_encoder_features(const ProbeModel& model, const FeatureSet& features, std::ostream& out) {
    const std::vector<ForwardResult> rows = forward_all(model, features);
    out << "question_id,llm_id,label";
    for (std::size_t k = 0; k < model.hidden_width(); ++k) out << ",z" << k;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& rec = features[i];
        out << csv_field(rec.question_id) << ',' << csv_field(features.llm_of(i)) << ',';
        if (is_labeled(rec.label)) out << label_value(rec.label);
        for (Eigen::Index k = 0; k < rows[i].z.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", rows[i].z[k]);
            out << ',' << buf;
        }
        out << '\n';
    }
}

std::vector<EncodedRow> read_encoder_features_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("encoder CSV is empty");
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "question_id") throw InputError("encoder CSV has an unexpected header");
    const std::size_t width = header.size() - 3;
    std::vector<EncodedRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != header.size()) throw InputError("encoder CSV row has " + std::to_string(f.size()) + " fields");
        EncodedRow r;
        r.question_id = f[0];
        r.llm_id = f[1];
        if (!f[2].empty()) r.label = std::stoi(f[2]);
        r.z.reserve(width);
        for (std::size_t k = 3; k < f.size(); ++k) r.z.push_back(std::stod(f[k]));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace faclens
