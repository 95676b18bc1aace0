#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "faclens/dataset.hpp"
#include "faclens/error.hpp"

using namespace faclens;

namespace {

QARecord qa(std::string response, std::vector<std::string> answers) {
    QARecord r;
    r.question_id = "q";
    r.question = "What is the capital of France?";
    r.golden_answers = std::move(answers);
    r.response = std::move(response);
    return r;
}

// Lowercase-both containment, ASCII only: the oracle for the case rule.
int ascii_oracle(const std::string& response, const std::vector<std::string>& answers) {
    const auto lower = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        return s;
    };
    for (const auto& a : answers) {
        if (lower(response).find(lower(a)) != std::string::npos) return 0;
    }
    return 1;
}

std::vector<std::string> ids(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("q" + std::to_string(i));
    return out;
}

}  // namespace

TEST_CASE("labeling by substring containment") {
    CHECK(label_response(qa("The capital is Paris.", {"Paris"})) == 0);
    CHECK(label_response(qa("I don't know.", {"Paris"})) == 1);
    CHECK(label_response(qa("PARIS is the capital", {"Paris"})) == 0);
    CHECK(label_response(qa("PARIS is the capital", {"Paris"}), MatchOptions{false}) == 1);
    CHECK(label_response(qa("It is Lyon, not Paris", {"Paris"})) == 0);  // containment only, no negation handling
    CHECK(label_response(qa("Lyon.", {"Marseille", "Lyon"})) == 0);
    CHECK(label_response(qa("", {"Paris"})) == 1);

    QARecord missing = qa("", {"Paris"});
    missing.response.reset();
    CHECK_THROWS_AS(label_response(missing), InputError);
}

TEST_CASE("case rule agrees with the lowercase-both oracle on ASCII") {
    const std::vector<std::string> responses = {"paris", "PaRiS!", "Par is", "the city of lights", "Pariss", "P"};
    const std::vector<std::vector<std::string>> answers = {{"Paris"}, {"PARIS", "x"}, {"city OF"}, {"ss"}};
    for (const auto& r : responses) {
        for (const auto& a : answers) {
            CAPTURE(r);
            CHECK(label_response(qa(r, a)) == ascii_oracle(r, a));
        }
    }
}

TEST_CASE("unicode normalization") {
    const std::string composed = "Caf\xC3\xA9";     // "Café" with U+00E9
    const std::string decomposed = "Cafe\xCC\x81";  // e + U+0301
    CHECK(normalize_text(composed) == normalize_text(decomposed));
    CHECK(label_response(qa("We met at the " + decomposed + " du Monde", {composed})) == 0);
    CHECK(label_response(qa("\xC3\x89" "COLE", {"\xC3\xA9" "cole"})) == 0);  // É vs é
    CHECK(char_count(decomposed) == 4);
    CHECK(normalize_text("ABC", MatchOptions{false}) == "ABC");
}

TEST_CASE("question filter") {
    const auto rec = [](std::vector<std::string> answers, bool mc = false) {
        QARecord r = qa("x", std::move(answers));
        r.multiple_choice = mc;
        return r;
    };
    CHECK(filter_questions({rec({"US"})}).empty());
    CHECK(filter_questions({rec({"Paris"})}).size() == 1);
    CHECK(filter_questions({rec({"US", "United States"})}).size() == 1);
    CHECK(filter_questions({rec({"abc"})}).empty());
    CHECK(filter_questions({rec({"abcd"})}).size() == 1);
    CHECK(filter_questions({rec({"\xC3\xA9t\xC3\xA9"})}).empty());  // 3 code points, 5 bytes
    CHECK(filter_questions({rec({"Paris"}, true)}).empty());

    const std::vector<QARecord> mixed = {rec({"US"}), rec({"Paris"}), rec({"UK", "Britain"}), rec({"Rome"}, true)};
    const auto once = filter_questions(mixed);
    CHECK(once.size() == 2);
    CHECK(filter_questions(once).size() == once.size());
}

TEST_CASE("split sizes") {
    const SplitSpec spec;
    const SplitSizes s10 = split_sizes(10, spec);
    CHECK(s10.train == 2);
    CHECK(s10.val == 1);
    CHECK(s10.test == 7);
    const SplitSizes s1000 = split_sizes(1000, spec);
    CHECK(s1000.train == 200);
    CHECK(s1000.val == 100);
    CHECK(s1000.test == 700);
    CHECK_THROWS_AS(split_sizes(3, spec), InputError);
    CHECK_THROWS_AS(split_sizes(0, spec), InputError);
    CHECK_THROWS_AS(split_sizes(10, SplitSpec{0.6, 0.5, 0}), InputError);
    CHECK_THROWS_AS(split_sizes(10, SplitSpec{0.0, 0.1, 0}), InputError);
}

TEST_CASE("split partitions deterministically") {
    const auto all = ids(97);
    SplitSpec spec;
    spec.seed = 11;
    const Splits a = split(all, spec);
    const Splits b = split(all, spec);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);

    std::set<std::string> seen;
    for (const auto* part : {&a.train, &a.val, &a.test}) {
        for (const auto& id : *part) CHECK(seen.insert(id).second);
    }
    CHECK(seen == std::set<std::string>(all.begin(), all.end()));

    spec.seed = 12;
    CHECK(split(all, spec).train != a.train);

    CHECK_THROWS_AS(split({"a", "a", "b", "c", "d", "e", "f", "g", "h", "i"}, SplitSpec{}), InputError);
}

TEST_CASE("reading QA lines") {
    std::istringstream ok(
        "{\"question_id\": \"a\", \"question\": \"Q?\", \"answers\": [\"x1234\"], \"response\": \"x1234\"}\n"
        "\n"
        "{\"question_id\": 7, \"question\": \"Q2?\", \"answers\": [\"yy\"], \"multiple_choice\": true}\n");
    const auto recs = read_qa_jsonl(ok);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].response == std::optional<std::string>("x1234"));
    CHECK(recs[1].question_id == "7");
    CHECK_FALSE(recs[1].response.has_value());
    CHECK(recs[1].multiple_choice);

    const auto error_of = [](const std::string& text) {
        std::istringstream in(text);
        try {
            read_qa_jsonl(in);
        } catch (const InputError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    const std::string good = "{\"question_id\": \"a\", \"question\": \"Q?\", \"answers\": [\"x\"]}\n";
    CHECK(error_of(good + "{not json\n").rfind("line 2:", 0) == 0);
    CHECK(error_of(good + good).rfind("line 2:", 0) == 0);  // duplicate id
    CHECK(error_of(good + "\n{\"question_id\": \"b\", \"question\": \"Q\"}\n").rfind("line 3:", 0) == 0);
    CHECK(error_of("{\"question_id\": \"a\", \"question\": \"Q\", \"answers\": []}\n").rfind("line 1:", 0) == 0);
    CHECK(error_of("[1, 2]\n").rfind("line 1:", 0) == 0);
}

TEST_CASE("split manifest round trip") {
    SplitManifest m;
    m.spec.seed = 5;
    m.splits = split(ids(10), m.spec);
    for (const auto& id : ids(10)) m.labels[id] = static_cast<int>(id.back() - '0') % 2;
    std::istringstream in(split_manifest_json(m));
    const SplitManifest back = parse_split_manifest(in);
    CHECK(back.spec.seed == 5);
    CHECK(back.splits.train == m.splits.train);
    CHECK(back.splits.val == m.splits.val);
    CHECK(back.splits.test == m.splits.test);
    CHECK(back.labels == m.labels);

    std::istringstream bad("{\"train\": [], \"val\": []}");
    CHECK_THROWS_AS(parse_split_manifest(bad), InputError);
}
