#include "faclens/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <unicode/normalizer2.h>
#include <unicode/unistr.h>
#include <unicode/locid.h>

#include "faclens/error.hpp"
#include "faclens/rng.hpp"

namespace faclens {

namespace {

icu::UnicodeString nfc(const std::string& text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
    icu::UnicodeString out = normalizer->normalize(icu::UnicodeString::fromUTF8(text), status);
    if (U_FAILURE(status)) throw InputError("cannot normalize text");
    return out;
}

}  // namespace

std::string normalize_text(const std::string& text, const MatchOptions& options) {
    icu::UnicodeString s = nfc(text);
    if (options.case_insensitive) {
        s.toLower(icu::Locale::getRoot());
        // Lowercasing can produce sequences that are no longer composed.
        std::string lowered;
        s.toUTF8String(lowered);
        s = nfc(lowered);
    }
    std::string out;
    s.toUTF8String(out);
    return out;
}

std::size_t char_count(const std::string& text) {
    return static_cast<std::size_t>(nfc(text).countChar32());
}

int label_response(const QARecord& record, const MatchOptions& options) {
    if (!record.response) {
        throw InputError("question '" + record.question_id + "' has no response to label");
    }
    const std::string response = normalize_text(*record.response, options);
    for (const auto& answer : record.golden_answers) {
        if (response.find(normalize_text(answer, options)) != std::string::npos) return 0;
    }
    return 1;
}

std::vector<QARecord> filter_questions(const std::vector<QARecord>& records, std::size_t min_answer_chars) {
    std::vector<QARecord> out;
    for (const auto& r : records) {
        if (r.multiple_choice) continue;
        const bool any_long = std::any_of(r.golden_answers.begin(), r.golden_answers.end(),
                                          [&](const std::string& a) { return char_count(a) >= min_answer_chars; });
        if (any_long) out.push_back(r);
    }
    return out;
}

void SplitSpec::validate() const {
    if (!(train_fraction > 0.0) || !(val_fraction > 0.0) || !(train_fraction + val_fraction < 1.0)) {
        throw InputError("split fractions must be positive with train + val < 1");
    }
}

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
    spec.validate();
    // The epsilon keeps exact products such as 0.1 * 10 from flooring low.
    const auto part = [n](double f) {
        return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
    };
    SplitSizes s{part(spec.train_fraction), part(spec.val_fraction), 0};
    s.test = n - s.train - s.val;
    if (s.train == 0 || s.val == 0 || s.test == 0) {
        throw InputError("split: " + std::to_string(n) + " records cannot populate train/val/test (sizes " +
                         std::to_string(s.train) + "/" + std::to_string(s.val) + "/" + std::to_string(s.test) +
                         ")");
    }
    return s;
}

Splits split(const std::vector<std::string>& question_ids, const SplitSpec& spec) {
    const SplitSizes sizes = split_sizes(question_ids.size(), spec);
    {
        std::unordered_set<std::string> seen;
        for (const auto& id : question_ids) {
            if (!seen.insert(id).second) throw InputError("split: duplicate question id '" + id + "'");
        }
    }
    std::vector<std::string> order = question_ids;
    Rng rng(spec.seed);
    rng.shuffle(std::span<std::string>(order));
    Splits out;
    auto it = order.begin();
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes.train));
    it += static_cast<std::ptrdiff_t>(sizes.train);
    out.val.assign(it, it + static_cast<std::ptrdiff_t>(sizes.val));
    it += static_cast<std::ptrdiff_t>(sizes.val);
    out.test.assign(it, order.end());
    return out;
}

// ---- JSON lines ---------------------------------------------------------------

std::vector<QARecord> read_qa_jsonl(std::istream& in) {
    std::vector<QARecord> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    const auto fail = [&](const std::string& msg) {
        throw InputError("line " + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            fail(std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) fail("expected a JSON object");
        QARecord r;
        if (!j.contains("question_id")) fail("missing 'question_id'");
        if (j["question_id"].is_string()) {
            r.question_id = j["question_id"].get<std::string>();
        } else if (j["question_id"].is_number_integer()) {
            r.question_id = std::to_string(j["question_id"].get<long long>());
        } else {
            fail("'question_id' must be a string or integer");
        }
        if (r.question_id.empty()) fail("empty 'question_id'");
        if (!j.contains("question") || !j["question"].is_string()) fail("missing 'question'");
        r.question = j["question"].get<std::string>();
        if (r.question.empty()) fail("empty 'question'");
        if (!j.contains("answers") || !j["answers"].is_array()) fail("missing 'answers'");
        for (const auto& a : j["answers"]) {
            if (!a.is_string()) fail("'answers' must hold strings");
            r.golden_answers.push_back(a.get<std::string>());
        }
        if (r.golden_answers.empty()) fail("'answers' is empty");
        if (j.contains("response") && !j["response"].is_null()) {
            if (!j["response"].is_string()) fail("'response' must be a string");
            r.response = j["response"].get<std::string>();
        }
        if (j.contains("multiple_choice")) {
            if (!j["multiple_choice"].is_boolean()) fail("'multiple_choice' must be a boolean");
            r.multiple_choice = j["multiple_choice"].get<bool>();
        }
        if (!seen.insert(r.question_id).second) fail("duplicate question_id '" + r.question_id + "'");
        out.push_back(std::move(r));
    }
    return out;
}

void write_labeled_jsonl(const std::vector<LabeledQA>& rows, std::ostream& out) {
    for (const auto& row : rows) {
        nlohmann::ordered_json j;
        j["question_id"] = row.record.question_id;
        j["question"] = row.record.question;
        j["answers"] = row.record.golden_answers;
        j["response"] = row.record.response.value_or("");
        j["label"] = row.label;
        out << j.dump() << '\n';
    }
}

std::string split_manifest_json(const SplitManifest& m) {
    nlohmann::ordered_json j;
    j["seed"] = m.spec.seed;
    j["train_fraction"] = m.spec.train_fraction;
    j["val_fraction"] = m.spec.val_fraction;
    j["train"] = m.splits.train;
    j["val"] = m.splits.val;
    j["test"] = m.splits.test;
    nlohmann::ordered_json labels = nlohmann::ordered_json::object();
    for (const auto* part : {&m.splits.train, &m.splits.val, &m.splits.test}) {
        for (const auto& id : *part) {
            auto it = m.labels.find(id);
            if (it != m.labels.end()) labels[id] = it->second;
        }
    }
    j["labels"] = labels;
    return j.dump(2) + "\n";
}

SplitManifest parse_split_manifest(std::istream& in) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
        SplitManifest m;
        m.spec.seed = j.value("seed", std::uint64_t{0});
        m.spec.train_fraction = j.value("train_fraction", 0.2);
        m.spec.val_fraction = j.value("val_fraction", 0.1);
        m.splits.train = j.at("train").get<std::vector<std::string>>();
        m.splits.val = j.at("val").get<std::vector<std::string>>();
        m.splits.test = j.at("test").get<std::vector<std::string>>();
        if (j.contains("labels")) {
            for (auto& [id, v] : j["labels"].items()) {
                const int label = v.get<int>();
                if (label != 0 && label != 1) throw InputError("split manifest: label for '" + id + "' is not 0/1");
                m.labels[id] = label;
            }
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("split manifest: ") + e.what());
    }
}

SplitManifest load_split_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open split manifest " + path);
    return parse_split_manifest(in);
}

}  // namespace faclens
