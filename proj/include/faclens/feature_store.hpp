#pragma once

// Binary feature files (FLNS) and per-layer token log-prob files (FLPP).
//
// Both formats are little-endian; the byte layout is documented in
// docs/file_formats.md and pinned by golden tests.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace faclens {

enum class Label : std::uint8_t {
    negative = 0,    // factual response
    positive = 1,    // non-factual response
    unlabeled = 255,
};

bool is_labeled(Label label) noexcept;
int label_value(Label label);  // 0/1, throws InputError on unlabeled
Label label_from_int(int value);

/// Which transformer layer the hidden state came from.
struct LayerTag {
    enum class Kind : std::int8_t { explicit_index, last, second_to_last, middle };
    Kind kind = Kind::middle;
    std::int32_t index = 0;  // meaningful for explicit_index only

    static LayerTag last() { return {Kind::last, 0}; }
    static LayerTag second_to_last() { return {Kind::second_to_last, 0}; }
    static LayerTag middle() { return {Kind::middle, 0}; }
    static LayerTag at(std::int32_t i) { return {Kind::explicit_index, i}; }

    std::int32_t encode() const;
    static LayerTag decode(std::int32_t raw);
    std::string to_string() const;
    static LayerTag parse(const std::string& text);

    friend bool operator==(const LayerTag&, const LayerTag&) = default;
};

enum class Pooling : std::uint8_t { last_token = 0, mean_tokens = 1 };

std::string to_string(Pooling pooling);
Pooling parse_pooling(const std::string& text);

struct FeatureRecord {
    std::string question_id;
    std::vector<float> hidden;
    Label label = Label::unlabeled;
    std::string llm_id;  // empty means "same as the set header"

    friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct FeatureHeader {
    std::string llm_id;
    std::string dataset_id;
    LayerTag layer = LayerTag::middle();
    Pooling pooling = Pooling::last_token;
    std::uint32_t dim = 0;

    friend bool operator==(const FeatureHeader&, const FeatureHeader&) = default;
};

/// One data domain: hidden question representations from a single
/// (LLM, dataset, layer, pooling) extraction. Immutable once built; the
/// constructor enforces every invariant.
class FeatureSet {
public:
    FeatureSet(FeatureHeader header, std::vector<FeatureRecord> records);

    const FeatureHeader& header() const noexcept { return header_; }
    const std::vector<FeatureRecord>& records() const noexcept { return records_; }
    const FeatureRecord& operator[](std::size_t i) const { return records_[i]; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    std::size_t dim() const noexcept { return header_.dim; }

    /// Provenance of record i, falling back to the header llm_id.
    const std::string& llm_of(std::size_t i) const;

    std::optional<std::size_t> find(const std::string& question_id) const;

    /// New set holding the records at `indices`, in that order.
    FeatureSet subset(const std::vector<std::size_t>& indices) const;

    /// Copy with labels replaced from `labels` (ids missing from the map keep
    /// their current label).
    FeatureSet with_labels(const std::unordered_map<std::string, int>& labels) const;

    friend bool operator==(const FeatureSet&, const FeatureSet&) = default;

private:
    FeatureHeader header_;
    std::vector<FeatureRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr char kFeatureMagic[4] = {'F', 'L', 'N', 'S'};
inline constexpr char kLogProbMagic[4] = {'F', 'L', 'P', 'P'};
inline constexpr std::uint16_t kFeatureFormatVersion = 1;
inline constexpr std::uint16_t kLogProbFormatVersion = 1;

std::size_t write_feature_set(const FeatureSet& set, std::ostream& out);
FeatureSet read_feature_set(std::istream& in);

/// Writes `path` plus a human-readable `path.json` sidecar with the header.
std::size_t save_feature_set(const FeatureSet& set, const std::filesystem::path& path);
FeatureSet load_feature_set(const std::filesystem::path& path);

std::string feature_header_json(const FeatureSet& set);

struct Alignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (index in a, index in b)
    std::vector<std::string> unmatched_a;
    std::vector<std::string> unmatched_b;
};

/// Pairs records sharing a question_id, in a's order. Throws InputError when
/// the sets share no question.
Alignment align_by_question(const FeatureSet& a, const FeatureSet& b);

// --- log-prob files -------------------------------------------------------

struct LogProbRecord {
    std::string question_id;
    // token_logprobs[l][k] = log p_layer(v_k | v_<k) for header layer l.
    std::vector<std::vector<double>> token_logprobs;

    std::size_t token_count() const {
        return token_logprobs.empty() ? 0 : token_logprobs.front().size();
    }

    friend bool operator==(const LogProbRecord&, const LogProbRecord&) = default;
};

struct LogProbHeader {
    std::string llm_id;
    std::string dataset_id;
    std::uint32_t vocab_size = 0;
    std::vector<std::int32_t> layers;

    friend bool operator==(const LogProbHeader&, const LogProbHeader&) = default;
};

class LogProbSet {
public:
    LogProbSet(LogProbHeader header, std::vector<LogProbRecord> records);

    const LogProbHeader& header() const noexcept { return header_; }
    const std::vector<LogProbRecord>& records() const noexcept { return records_; }
    std::size_t size() const noexcept { return records_.size(); }

    const LogProbRecord* find(const std::string& question_id) const;
    /// Position of `layer` in the header layer list.
    std::optional<std::size_t> layer_slot(std::int32_t layer) const;

    friend bool operator==(const LogProbSet& a, const LogProbSet& b) {
        return a.header_ == b.header_ && a.records_ == b.records_;
    }

private:
    LogProbHeader header_;
    std::vector<LogProbRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

std::size_t write_logprob_set(const LogProbSet& set, std::ostream& out);
LogProbSet read_logprob_set(std::istream& in);
std::size_t save_logprob_set(const LogProbSet& set, const std::filesystem::path& path);
LogProbSet load_logprob_set(const std::filesystem::path& path);

}  // namespace faclens
