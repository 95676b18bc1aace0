// Writes a small end-to-end fixture: QA responses, two LLMs' features over
// the same questions and one log-prob file.
//
//   make_fixture <dir>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "faclens/feature_store.hpp"
#include "faclens/rng.hpp"

using namespace faclens;

namespace {

constexpr std::size_t kQuestions = 240;

FeatureSet features(const std::string& llm, std::size_t dim, const std::vector<int>& y, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<FeatureRecord> recs;
    for (std::size_t i = 0; i < y.size(); ++i) {
        FeatureRecord r;
        r.question_id = "q" + std::to_string(i);
        r.hidden.resize(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            const double signal = (k < 2) ? (y[i] ? 1.5 : -1.5) : 0.0;
            r.hidden[k] = static_cast<float>(signal + rng.normal());
        }
        recs.push_back(std::move(r));
    }
    return FeatureSet({llm, "fixture", LayerTag::middle(), Pooling::last_token, static_cast<std::uint32_t>(dim)},
                      std::move(recs));
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: make_fixture <dir>\n");
        return 2;
    }
    const std::filesystem::path dir = argv[1];
    std::filesystem::create_directories(dir);

    Rng rng(7);
    std::vector<int> y(kQuestions);
    std::ofstream qa(dir / "qa.jsonl");
    for (std::size_t i = 0; i < kQuestions; ++i) {
        y[i] = rng.uniform() < 0.4 ? 1 : 0;
        const std::string answer = "Answer" + std::to_string(i);
        const std::string response = y[i] ? "I believe it is something else." : "It is " + answer + ", surely.";
        nlohmann::json j = {{"question_id", "q" + std::to_string(i)},
                            {"question", "Question number " + std::to_string(i) + "?"},
                            {"answers", {answer}},
                            {"response", response}};
        qa << j.dump() << '\n';
    }
    // Dropped by the filter: short answers and multiple choice.
    qa << R"({"question_id":"short","question":"?","answers":["ab"],"response":"ab"})" << '\n';
    qa << R"({"question_id":"mc","question":"?","answers":["Paris"],"response":"Paris","multiple_choice":true})" << '\n';

    save_feature_set(features("llm-a", 8, y, 11), dir / "a.flns");
    save_feature_set(features("llm-b", 6, y, 12), dir / "b.flns");

    // Layer 4 ranks non-factual questions as less likely, layer 8 is noise.
    std::vector<LogProbRecord> lps;
    for (std::size_t i = 0; i < kQuestions; ++i) {
        LogProbRecord r;
        r.question_id = "q" + std::to_string(i);
        r.token_logprobs.assign(2, std::vector<double>(5));
        for (std::size_t k = 0; k < 5; ++k) {
            r.token_logprobs[0][k] = -1.0 - (y[i] ? 1.0 : 0.0) - 0.3 * rng.uniform();
            r.token_logprobs[1][k] = -1.0 - rng.uniform();
        }
        lps.push_back(std::move(r));
    }
    save_logprob_set(LogProbSet({"llm-a", "fixture", 100, {4, 8}}, std::move(lps)), dir / "a.flpp");
    return 0;
}
