#include "faclens/feature_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "faclens/error.hpp"

namespace faclens {

const char* to_string(FormatErrc code) noexcept {
    switch (code) {
        case FormatErrc::bad_magic: return "bad magic";
        case FormatErrc::unsupported_version: return "unsupported version";
        case FormatErrc::truncated: return "truncated";
        case FormatErrc::non_finite: return "non-finite value";
        case FormatErrc::dim_mismatch: return "dimension mismatch";
        case FormatErrc::duplicate_id: return "duplicate question id";
        case FormatErrc::invalid_label: return "invalid label";
        case FormatErrc::invalid_header: return "invalid header";
        case FormatErrc::invalid_value: return "invalid value";
        case FormatErrc::trailing_data: return "trailing data";
    }
    return "format error";
}

bool is_labeled(Label label) noexcept { return label == Label::negative || label == Label::positive; }

int label_value(Label label) {
    if (!is_labeled(label)) throw InputError("record is unlabeled");
    return static_cast<int>(label);
}

Label label_from_int(int value) {
    if (value == 0) return Label::negative;
    if (value == 1) return Label::positive;
    throw InputError("label must be 0 or 1, got " + std::to_string(value));
}

// ---- LayerTag / Pooling ---------------------------------------------------

std::int32_t LayerTag::encode() const {
    switch (kind) {
        case Kind::explicit_index: return index;
        case Kind::last: return -1;
        case Kind::second_to_last: return -2;
        case Kind::middle: return -3;
    }
    return -3;
}

LayerTag LayerTag::decode(std::int32_t raw) {
    if (raw >= 0) return at(raw);
    switch (raw) {
        case -1: return last();
        case -2: return second_to_last();
        case -3: return middle();
        default:
            throw FormatError(FormatErrc::invalid_header, "unknown layer tag " + std::to_string(raw));
    }
}

std::string LayerTag::to_string() const {
    switch (kind) {
        case Kind::explicit_index: return std::to_string(index);
        case Kind::last: return "last";
        case Kind::second_to_last: return "second_to_last";
        case Kind::middle: return "middle";
    }
    return "middle";
}

LayerTag LayerTag::parse(const std::string& text) {
    if (text == "last") return last();
    if (text == "second_to_last") return second_to_last();
    if (text == "middle") return middle();
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used == text.size() && v >= 0) return at(v);
    } catch (const std::exception&) {
    }
    throw InputError("invalid layer tag '" + text + "'");
}

std::string to_string(Pooling pooling) {
    return pooling == Pooling::last_token ? "last_token" : "mean_tokens";
}

Pooling parse_pooling(const std::string& text) {
    if (text == "last_token") return Pooling::last_token;
    if (text == "mean_tokens") return Pooling::mean_tokens;
    throw InputError("invalid pooling '" + text + "'");
}

// ---- FeatureSet -----------------------------------------------------------

FeatureSet::FeatureSet(FeatureHeader header, std::vector<FeatureRecord> records)
    : header_(std::move(header)), records_(std::move(records)) {
    if (header_.dim == 0) throw InputError("feature set dim must be positive");
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
        auto& r = records_[i];
        if (r.question_id.empty()) throw InputError("record " + std::to_string(i) + " has an empty question id");
        if (r.hidden.size() != header_.dim) {
            throw DimensionMismatch(header_.dim, r.hidden.size(), "record '" + r.question_id + "'");
        }
        for (float v : r.hidden) {
            if (!std::isfinite(v)) throw InputError("record '" + r.question_id + "' has a non-finite component");
        }
        if (!is_labeled(r.label) && r.label != Label::unlabeled) {
            throw InputError("record '" + r.question_id + "' has an invalid label");
        }
        if (r.llm_id == header_.llm_id) r.llm_id.clear();
        if (!index_.emplace(r.question_id, i).second) {
            throw InputError("duplicate question id '" + r.question_id + "'");
        }
    }
}

const std::string& FeatureSet::llm_of(std::size_t i) const {
    const auto& id = records_.at(i).llm_id;
    return id.empty() ? header_.llm_id : id;
}

std::optional<std::size_t> FeatureSet::find(const std::string& question_id) const {
    auto it = index_.find(question_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

FeatureSet FeatureSet::subset(const std::vector<std::size_t>& indices) const {
    std::vector<FeatureRecord> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(records_.at(i));
    return FeatureSet(header_, std::move(out));
}

FeatureSet FeatureSet::with_labels(const std::unordered_map<std::string, int>& labels) const {
    std::vector<FeatureRecord> out = records_;
    for (auto& r : out) {
        auto it = labels.find(r.question_id);
        if (it != labels.end()) r.label = label_from_int(it->second);
    }
    return FeatureSet(header_, std::move(out));
}

// ---- FLNS codec -----------------------------------------------------------

namespace {

constexpr std::uint16_t kFlagPerRecordLlm = 0x1;

void check_writable(const FeatureSet& set) {
    std::unordered_set<std::string> seen;
    for (const auto& r : set.records()) {
        if (r.hidden.size() != set.dim()) throw DimensionMismatch(set.dim(), r.hidden.size(), "write_feature_set");
        for (float v : r.hidden) {
            if (!std::isfinite(v)) throw InputError("write_feature_set: non-finite value in '" + r.question_id + "'");
        }
        if (!seen.insert(r.question_id).second) {
            throw InputError("write_feature_set: duplicate id '" + r.question_id + "'");
        }
    }
}

}  // namespace

std::size_t write_feature_set(const FeatureSet& set, std::ostream& out) {
    check_writable(set);
    const bool per_record_llm = std::any_of(set.records().begin(), set.records().end(),
                                            [](const FeatureRecord& r) { return !r.llm_id.empty(); });
    const auto& h = set.header();
    detail::Writer w(out);
    w.bytes(kFeatureMagic, 4);
    w.u16(kFeatureFormatVersion);
    w.u16(per_record_llm ? kFlagPerRecordLlm : 0);
    w.str(h.llm_id);
    w.str(h.dataset_id);
    w.i32(h.layer.encode());
    w.u8(static_cast<std::uint8_t>(h.pooling));
    w.u32(h.dim);
    w.u64(set.size());
    for (const auto& r : set.records()) {
        w.str(r.question_id);
        if (per_record_llm) w.str(r.llm_id);
        w.u8(static_cast<std::uint8_t>(r.label));
        for (float v : r.hidden) w.f32(v);
    }
    w.finish();
    return w.written();
}

FeatureSet read_feature_set(std::istream& in) {
    detail::Reader rd(in, "feature file");
    rd.expect_magic(kFeatureMagic);
    const std::uint16_t version = rd.u16();
    if (version != kFeatureFormatVersion) {
        throw FormatError(FormatErrc::unsupported_version, "feature file version " + std::to_string(version));
    }
    const std::uint16_t flags = rd.u16();
    if (flags & ~kFlagPerRecordLlm) {
        throw FormatError(FormatErrc::invalid_header, "unknown header flags " + std::to_string(flags));
    }
    FeatureHeader h;
    h.llm_id = rd.str();
    h.dataset_id = rd.str();
    h.layer = LayerTag::decode(rd.i32());
    const std::uint8_t pooling = rd.u8();
    if (pooling > 1) throw FormatError(FormatErrc::invalid_header, "unknown pooling " + std::to_string(pooling));
    h.pooling = static_cast<Pooling>(pooling);
    h.dim = rd.u32();
    if (h.dim == 0) throw FormatError(FormatErrc::invalid_header, "dim is zero");
    const std::uint64_t count = rd.u64();

    std::vector<FeatureRecord> records;
    records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 16)));
    std::unordered_set<std::string> seen;
    for (std::uint64_t n = 0; n < count; ++n) {
        FeatureRecord r;
        r.question_id = rd.str();
        if (flags & kFlagPerRecordLlm) r.llm_id = rd.str();
        const std::uint8_t label = rd.u8();
        if (label != 0 && label != 1 && label != 255) {
            throw FormatError(FormatErrc::invalid_label,
                              "record '" + r.question_id + "' label byte " + std::to_string(label));
        }
        r.label = static_cast<Label>(label);
        r.hidden.resize(h.dim);
        for (auto& v : r.hidden) {
            v = rd.f32();
            if (!std::isfinite(v)) {
                throw FormatError(FormatErrc::non_finite, "record '" + r.question_id + "'");
            }
        }
        if (!seen.insert(r.question_id).second) {
            throw FormatError(FormatErrc::duplicate_id, "'" + r.question_id + "'");
        }
        records.push_back(std::move(r));
    }
    // A record longer than the header dim leaves bytes behind.
    try {
        rd.expect_end();
    } catch (const FormatError& e) {
        throw FormatError(FormatErrc::dim_mismatch, std::string(e.what()) + " (record length differs from header dim?)");
    }
    return FeatureSet(std::move(h), std::move(records));
}

std::string feature_header_json(const FeatureSet& set) {
    const auto& h = set.header();
    nlohmann::ordered_json j;
    j["magic"] = std::string(kFeatureMagic, 4);
    j["version"] = kFeatureFormatVersion;
    j["llm_id"] = h.llm_id;
    j["dataset_id"] = h.dataset_id;
    j["layer"] = h.layer.to_string();
    j["pooling"] = to_string(h.pooling);
    j["dim"] = h.dim;
    j["count"] = set.size();
    std::size_t n_pos = 0, n_neg = 0;
    for (const auto& r : set.records()) {
        n_pos += r.label == Label::positive;
        n_neg += r.label == Label::negative;
    }
    j["labeled_positive"] = n_pos;
    j["labeled_negative"] = n_neg;
    return j.dump(2) + "\n";
}

std::size_t save_feature_set(const FeatureSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    const std::size_t n = write_feature_set(set, out);
    std::ofstream sidecar(path.string() + ".json", std::ios::trunc);
    sidecar << feature_header_json(set);
    if (!sidecar) throw Error("cannot write sidecar for " + path.string());
    return n;
}

FeatureSet load_feature_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open feature file " + path.string());
    return read_feature_set(in);
}

// ---- alignment ------------------------------------------------------------

Alignment align_by_question(const FeatureSet& a, const FeatureSet& b) {
    Alignment out;
    std::vector<bool> b_used(b.size(), false);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (auto j = b.find(a[i].question_id)) {
            out.pairs.emplace_back(i, *j);
            b_used[*j] = true;
        } else {
            out.unmatched_a.push_back(a[i].question_id);
        }
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
        if (!b_used[j]) out.unmatched_b.push_back(b[j].question_id);
    }
    if (out.pairs.empty()) throw InputError("align_by_question: the two feature sets share no question id");
    return out;
}

// ---- LogProbSet / FLPP ------------------------------------------------------

LogProbSet::LogProbSet(LogProbHeader header, std::vector<LogProbRecord> records)
    : header_(std::move(header)), records_(std::move(records)) {
    if (header_.layers.empty()) throw InputError("log-prob set lists no layers");
    {
        auto sorted = header_.layers;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw InputError("log-prob set lists a layer twice");
        }
    }
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (r.token_logprobs.size() != header_.layers.size()) {
            throw InputError("log-prob record '" + r.question_id + "' is missing layers");
        }
        const std::size_t n = r.token_count();
        if (n == 0) throw InputError("log-prob record '" + r.question_id + "' has zero tokens");
        for (const auto& layer : r.token_logprobs) {
            if (layer.size() != n) throw InputError("log-prob record '" + r.question_id + "' has ragged layers");
            for (double v : layer) {
                if (!std::isfinite(v) || v > 0.0) {
                    throw InputError("log-prob record '" + r.question_id + "' has a log-prob outside (-inf, 0]");
                }
            }
        }
        if (!index_.emplace(r.question_id, i).second) {
            throw InputError("duplicate question id '" + r.question_id + "' in log-prob set");
        }
    }
}

const LogProbRecord* LogProbSet::find(const std::string& question_id) const {
    auto it = index_.find(question_id);
    return it == index_.end() ? nullptr : &records_[it->second];
}

std::optional<std::size_t> LogProbSet::layer_slot(std::int32_t layer) const {
    auto it = std::find(header_.layers.begin(), header_.layers.end(), layer);
    if (it == header_.layers.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header_.layers.begin());
}

std::size_t write_logprob_set(const LogProbSet& set, std::ostream& out) {
    const auto& h = set.header();
    detail::Writer w(out);
    w.bytes(kLogProbMagic, 4);
    w.u16(kLogProbFormatVersion);
    w.u16(0);
    w.str(h.llm_id);
    w.str(h.dataset_id);
    w.u32(h.vocab_size);
    w.u32(static_cast<std::uint32_t>(h.layers.size()));
    for (auto l : h.layers) w.i32(l);
    w.u64(set.size());
    for (const auto& r : set.records()) {
        w.str(r.question_id);
        w.u32(static_cast<std::uint32_t>(r.token_count()));
        for (const auto& layer : r.token_logprobs) {
            for (double v : layer) w.f64(v);
        }
    }
    w.finish();
    return w.written();
}

LogProbSet read_logprob_set(std::istream& in) {
    detail::Reader rd(in, "log-prob file");
    rd.expect_magic(kLogProbMagic);
    const std::uint16_t version = rd.u16();
    if (version != kLogProbFormatVersion) {
        throw FormatError(FormatErrc::unsupported_version, "log-prob file version " + std::to_string(version));
    }
    if (rd.u16() != 0) throw FormatError(FormatErrc::invalid_header, "unknown log-prob header flags");
    LogProbHeader h;
    h.llm_id = rd.str();
    h.dataset_id = rd.str();
    h.vocab_size = rd.u32();
    const std::uint32_t n_layers = rd.u32();
    if (n_layers == 0 || n_layers > 4096) {
        throw FormatError(FormatErrc::invalid_header, "layer count " + std::to_string(n_layers));
    }
    h.layers.resize(n_layers);
    for (auto& l : h.layers) l = rd.i32();
    {
        std::unordered_set<std::int32_t> layers(h.layers.begin(), h.layers.end());
        if (layers.size() != h.layers.size()) throw FormatError(FormatErrc::invalid_header, "layer listed twice");
    }
    const std::uint64_t count = rd.u64();

    std::unordered_set<std::string> seen;
    std::vector<LogProbRecord> records;
    records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 16)));
    for (std::uint64_t n = 0; n < count; ++n) {
        LogProbRecord r;
        r.question_id = rd.str();
        const std::uint32_t tokens = rd.u32();
        if (tokens == 0) throw FormatError(FormatErrc::invalid_value, "record '" + r.question_id + "' has zero tokens");
        if (tokens > (1u << 24)) {
            throw FormatError(FormatErrc::invalid_value, "record '" + r.question_id + "' token count too large");
        }
        r.token_logprobs.assign(n_layers, std::vector<double>(tokens));
        for (auto& layer : r.token_logprobs) {
            for (auto& v : layer) {
                v = rd.f64();
                if (!std::isfinite(v)) throw FormatError(FormatErrc::non_finite, "record '" + r.question_id + "'");
                if (v > 0.0) throw FormatError(FormatErrc::invalid_value, "positive log-prob in '" + r.question_id + "'");
            }
        }
        if (!seen.insert(r.question_id).second) {
            throw FormatError(FormatErrc::duplicate_id, "'" + r.question_id + "'");
        }
        records.push_back(std::move(r));
    }
    rd.expect_end();
    return LogProbSet(std::move(h), std::move(records));
}

std::size_t save_logprob_set(const LogProbSet& set, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    return write_logprob_set(set, out);
}

LogProbSet load_logprob_set(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open log-prob file " + path.string());
    return read_logprob_set(in);
}

}  // namespace faclens
