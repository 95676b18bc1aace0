#pragma once

// Labeled NFP dataset construction from (question, golden answers, response)
// triples, plus deterministic train/val/test splitting.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace faclens {

struct QARecord {
    std::string question_id;
    std::string question;
    std::vector<std::string> golden_answers;
    std::optional<std::string> response;
    bool multiple_choice = false;
};

struct MatchOptions {
    bool case_insensitive = true;
};

/// NFC-normalizes `text` and, when requested, lowercases it (root locale).
std::string normalize_text(const std::string& text, const MatchOptions& options = {});

/// Unicode code points in the NFC form of `text`.
std::size_t char_count(const std::string& text);

/// 1 (non-factual) iff no normalized golden answer is a substring of the
/// normalized response, else 0. Throws InputError when the response is absent.
int label_response(const QARecord& record, const MatchOptions& options = {});

/// Drops multiple-choice records and records whose every golden answer is
/// shorter than `min_answer_chars` code points.
std::vector<QARecord> filter_questions(const std::vector<QARecord>& records,
                                       std::size_t min_answer_chars = 4);

struct SplitSpec {
    double train_fraction = 0.20;
    double val_fraction = 0.10;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Splits {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

struct SplitSizes {
    std::size_t train, val, test;
};

/// floor(f_train N), floor(f_val N), remainder. Throws InputError when any
/// part would be empty.
SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);

/// Seeded shuffle of `question_ids`, then cut by split_sizes.
Splits split(const std::vector<std::string>& question_ids, const SplitSpec& spec);

// ---- JSON line I/O ----------------------------------------------------------

/// Parses line-delimited {question_id, question, answers[], response?,
/// multiple_choice?}. Errors carry the 1-based line number.
std::vector<QARecord> read_qa_jsonl(std::istream& in);

struct LabeledQA {
    QARecord record;
    int label;
};

void write_labeled_jsonl(const std::vector<LabeledQA>& rows, std::ostream& out);

/// Split manifest: the id lists plus the label of every listed id.
struct SplitManifest {
    SplitSpec spec;
    Splits splits;
    std::unordered_map<std::string, int> labels;
};

std::string split_manifest_json(const SplitManifest& manifest);
SplitManifest parse_split_manifest(std::istream& in);
SplitManifest load_split_manifest(const std::string& path);

}  // namespace faclens
