// faclens: build labeled datasets, train and adapt probes, evaluate them.
//
// Exit status: 0 on success, 2 for invalid input (bad flags, malformed or
// inconsistent files), 1 for anything else.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "faclens/checkpoint.hpp"
#include "faclens/dataset.hpp"
#include "faclens/domain_adaptation.hpp"
#include "faclens/error.hpp"
#include "faclens/evaluation.hpp"
#include "faclens/feature_store.hpp"
#include "faclens/kernels.hpp"
#include "faclens/probe.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace faclens::cli {
namespace {

enum class SplitName { train, val, test, all };

const std::map<std::string, SplitName> kSplitNames = {
    {"train", SplitName::train}, {"val", SplitName::val}, {"test", SplitName::test}, {"all", SplitName::all}};

std::string split_label(SplitName s) {
    for (const auto& [k, v] : kSplitNames) {
        if (v == s) return k;
    }
    return "all";
}

fs::path manifest_path(const std::string& flag, const fs::path& primary_output) {
    if (!flag.empty()) return flag;
    fs::path p = primary_output;
    p += ".manifest.json";
    return p;
}

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::is_regular_file(p)) throw InputError(what + " '" + p.string() + "' does not exist");
}

void write_text(const fs::path& path, const std::string& text) { write_atomically(path, text); }

/// Records of `features` whose ids are listed in `ids`, in list order, with
/// labels from the split manifest. Ids absent from the features are skipped.
FeatureSet select_split(const FeatureSet& features, const SplitManifest& m, SplitName which, bool keep_labels) {
    std::vector<std::string> ids;
    const auto append = [&ids](const std::vector<std::string>& v) { ids.insert(ids.end(), v.begin(), v.end()); };
    if (which == SplitName::train || which == SplitName::all) append(m.splits.train);
    if (which == SplitName::val || which == SplitName::all) append(m.splits.val);
    if (which == SplitName::test || which == SplitName::all) append(m.splits.test);
    std::vector<std::size_t> rows;
    for (const auto& id : ids) {
        if (auto i = features.find(id)) rows.push_back(*i);
    }
    FeatureSet out = features.subset(rows).with_labels(m.labels);
    if (keep_labels) return out;
    std::vector<FeatureRecord> recs = out.records();
    for (auto& r : recs) r.label = Label::unlabeled;
    return FeatureSet(out.header(), std::move(recs));
}

FeatureSet labeled_only(const FeatureSet& set) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (is_labeled(set[i].label)) rows.push_back(i);
    }
    return set.subset(rows);
}

void require_nonempty(const FeatureSet& set, const std::string& what) {
    if (set.empty()) throw InputError(what + " is empty after matching the split manifest to the features");
}

std::vector<ScoredRecord> score_records(const ProbeModel& model, const FeatureSet& set, std::optional<InputRoute> route) {
    std::vector<double> p1;
    if (route) {
        p1 = positive_scores(model, to_matrix(set), *route);
    } else {
        for (const auto& p : predict_batch(model, set)) p1.push_back(p.p_nonfactual);
    }
    std::vector<ScoredRecord> out;
    out.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) out.push_back({set[i].question_id, p1[i], label_value(set[i].label)});
    return out;
}

json history_json(const std::vector<EpochLog>& history, bool with_mmd) {
    json rows = json::array();
    for (const auto& e : history) {
        json row = {{"epoch", e.epoch}, {"ce", e.train_loss}};
        if (with_mmd) row["mmd"] = e.mmd_loss;
        row["val_auc"] = e.val_auc;
        rows.push_back(row);
    }
    return rows;
}

json train_config_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"max_epochs", c.max_epochs},
            {"batch_size", c.batch_size},       {"patience", c.patience},         {"seed", c.seed},
            {"hidden_width", c.hidden_width}};
}

// ---- options shared by the training commands ---------------------------------------------

struct TrainFlags {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 100;
    std::size_t batch_size = 64;
    int patience = 10;
    std::size_t hidden = kDefaultHiddenWidth;
    std::uint64_t seed = 0;

    void add(CLI::App* cmd) {
        cmd->add_option("--lr", lr, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--weight-decay", weight_decay, "Decoupled AdamW weight decay")->capture_default_str();
        cmd->add_option("--epochs", epochs, "Maximum epochs")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--batch-size", batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--patience", patience, "Epochs without validation gain before stopping")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--hidden", hidden, "Encoder width")->capture_default_str()->check(CLI::PositiveNumber);
        cmd->add_option("--seed", seed, "Seed for initialization and batching")->capture_default_str();
    }

    TrainConfig config() const {
        TrainConfig c;
        c.learning_rate = lr;
        c.weight_decay = weight_decay;
        c.max_epochs = epochs;
        c.batch_size = batch_size;
        c.patience = patience;
        c.hidden_width = hidden;
        c.seed = seed;
        return c;
    }
};

// ---- build-dataset -------------------------------------------------------------------------

struct BuildDatasetArgs {
    std::string qa, out, splits_out, manifest;
    std::uint64_t seed = 0;
    double train_fraction = 0.2, val_fraction = 0.1;
    std::size_t min_answer_chars = 4;
    bool case_sensitive = false;
};

int run_build_dataset(const BuildDatasetArgs& a) {
    require_file(a.qa, "QA file");
    RunManifest man("build-dataset");
    Stopwatch sw;
    std::ifstream in(a.qa);
    const std::vector<QARecord> all = read_qa_jsonl(in);
    const std::vector<QARecord> kept = filter_questions(all, a.min_answer_chars);
    const MatchOptions match{!a.case_sensitive};

    std::vector<LabeledQA> rows;
    std::vector<std::string> ids;
    SplitManifest sm;
    for (const auto& r : kept) {
        const int y = label_response(r, match);
        rows.push_back({r, y});
        ids.push_back(r.question_id);
        sm.labels[r.question_id] = y;
    }
    sm.spec = SplitSpec{a.train_fraction, a.val_fraction, a.seed};
    sm.splits = split(ids, sm.spec);

    const fs::path out = a.out;
    const fs::path splits_out = a.splits_out.empty() ? fs::path(a.out + ".splits.json") : fs::path(a.splits_out);
    std::ostringstream labeled;
    write_labeled_jsonl(rows, labeled);
    write_text(out, labeled.str());
    write_text(splits_out, split_manifest_json(sm));

    std::size_t positives = 0;
    for (const auto& r : rows) positives += static_cast<std::size_t>(r.label);
    man.set_config({{"train_fraction", a.train_fraction},
                    {"val_fraction", a.val_fraction},
                    {"min_answer_chars", a.min_answer_chars},
                    {"case_insensitive", !a.case_sensitive}});
    man.add_seed("split", a.seed);
    man.add_input("qa", a.qa);
    man.add_output("labels", out);
    man.add_output("splits", splits_out);
    man.details() = {{"records_read", all.size()},
                     {"records_kept", kept.size()},
                     {"non_factual", positives},
                     {"split_sizes", {sm.splits.train.size(), sm.splits.val.size(), sm.splits.test.size()}}};
    man.phase("build", sw.seconds());
    man.write(manifest_path(a.manifest, out));
    std::printf("kept %zu of %zu questions (%zu non-factual); splits %zu/%zu/%zu\n", kept.size(), all.size(),
                positives, sm.splits.train.size(), sm.splits.val.size(), sm.splits.test.size());
    return 0;
}

// ---- train -----------------------------------------------------------------------------------

struct TrainArgs {
    std::string features, splits, out, manifest;
    bool lr_grid = false;
    TrainFlags flags;
};

int run_train(const TrainArgs& a) {
    require_file(a.features, "feature file");
    require_file(a.splits, "split manifest");
    RunManifest man("train");
    Stopwatch sw;
    const FeatureSet features = load_feature_set(a.features);
    const SplitManifest sm = load_split_manifest(a.splits);
    const FeatureSet train_set = select_split(features, sm, SplitName::train, true);
    const FeatureSet val_set = select_split(features, sm, SplitName::val, true);
    require_nonempty(train_set, "training split");
    require_nonempty(val_set, "validation split");
    man.phase("load", sw.seconds());

    TrainConfig cfg = a.flags.config();
    std::vector<double> rates = {cfg.learning_rate};
    if (a.lr_grid) rates.assign(kLearningRateGrid.begin(), kLearningRateGrid.end());

    Stopwatch fit_sw;
    std::optional<TrainResult> best;
    double best_lr = rates.front();
    json runs = json::array();
    for (double lr : rates) {
        cfg.learning_rate = lr;
        TrainResult r = train(train_set, val_set, cfg);
        runs.push_back({{"learning_rate", lr}, {"best_epoch", r.best_epoch}, {"best_val_auc", r.best_val_auc},
                        {"history", history_json(r.history, false)}});
        if (!best || r.best_val_auc > best->best_val_auc) {
            best_lr = lr;
            best = std::move(r);
        }
    }
    man.phase("fit", fit_sw.seconds());
    cfg.learning_rate = best_lr;

    json ck_cfg = {{"command", "train"}, {"train", train_config_json(cfg)}, {"lr_grid", a.lr_grid},
                   {"best_epoch", best->best_epoch}, {"best_val_auc", best->best_val_auc},
                   {"features", features.header().llm_id}, {"dataset", features.header().dataset_id}};
    ensure_parent(a.out);
    save_checkpoint({best->model, ck_cfg.dump()}, a.out);

    man.set_config({{"train", train_config_json(cfg)}, {"lr_grid", a.lr_grid}});
    man.add_seed("train", cfg.seed);
    man.add_input("features", a.features);
    man.add_input("splits", a.splits);
    man.add_output("checkpoint", a.out);
    man.details() = {{"train_records", train_set.size()}, {"val_records", val_set.size()},
                     {"selected_learning_rate", best_lr}, {"best_epoch", best->best_epoch},
                     {"best_val_auc", best->best_val_auc}, {"runs", runs}};
    man.write(manifest_path(a.manifest, a.out));
    std::printf("best val AUC %.6f at epoch %d (lr %g)\n", best->best_val_auc, best->best_epoch, best_lr);
    return 0;
}

// ---- adapt -----------------------------------------------------------------------------------

struct AdaptArgs {
    std::string source, target, splits, target_splits, out, manifest, init, kernel = "linear";
    std::optional<double> sigma;
    bool no_align = false;
    bool force_adapter = false;
    double mmd_weight = 1.0;
    TrainFlags flags;
};

int run_adapt(const AdaptArgs& a) {
    require_file(a.source, "source features");
    require_file(a.target, "target features");
    require_file(a.splits, "split manifest");
    if (!a.init.empty()) require_file(a.init, "initial checkpoint");
    RunManifest man("adapt");
    Stopwatch sw;
    const FeatureSet source = load_feature_set(a.source);
    const FeatureSet target = load_feature_set(a.target);
    const SplitManifest sm = load_split_manifest(a.splits);
    const SplitManifest tm = a.target_splits.empty() ? sm : load_split_manifest(a.target_splits);
    const FeatureSet source_train = select_split(source, sm, SplitName::train, true);
    const FeatureSet source_val = select_split(source, sm, SplitName::val, true);
    const FeatureSet target_train = select_split(target, tm, SplitName::train, false);
    require_nonempty(source_train, "source training split");
    require_nonempty(source_val, "source validation split");
    require_nonempty(target_train, "target training split");

    DAConfig cfg;
    cfg.train = a.flags.config();
    cfg.kernel = KernelSpec{parse_kernel(a.kernel), a.sigma};
    cfg.question_aligned = !a.no_align;
    cfg.mmd_weight = a.mmd_weight;
    cfg.force_adapter = a.force_adapter;
    std::optional<ProbeModel> init;
    if (!a.init.empty()) init = load_checkpoint(a.init).model;
    man.phase("load", sw.seconds());

    Stopwatch fit_sw;
    const DAResult r = train_da(source_train, target_train, source_val, cfg, init);
    man.phase("fit", fit_sw.seconds());

    const json kernel = {{"kind", to_string(cfg.kernel.kind)},
                         {"bandwidth", cfg.kernel.kind == KernelKind::gaussian ? json(r.sigma) : json(nullptr)},
                         {"bandwidth_source", cfg.kernel.bandwidth ? "flag" : (cfg.kernel.kind == KernelKind::gaussian ? "median_heuristic" : "n/a")}};
    const json da_cfg = {{"train", train_config_json(cfg.train)}, {"kernel", kernel},
                         {"question_aligned", cfg.question_aligned}, {"mmd_weight", cfg.mmd_weight},
                         {"force_adapter", cfg.force_adapter}, {"init", a.init.empty() ? json(nullptr) : json(a.init)}};
    json ck_cfg = {{"command", "adapt"}, {"da", da_cfg}, {"best_epoch", r.fit.best_epoch},
                   {"best_source_val_auc", r.fit.best_val_auc}, {"source", source.header().llm_id},
                   {"target", target.header().llm_id}};
    ensure_parent(a.out);
    save_checkpoint({r.fit.model, ck_cfg.dump()}, a.out);

    man.set_config(da_cfg);
    man.add_seed("train", cfg.train.seed);
    man.add_input("source", a.source);
    man.add_input("target", a.target);
    man.add_input("splits", a.splits);
    if (!a.target_splits.empty()) man.add_input("target_splits", a.target_splits);
    if (!a.init.empty()) man.add_input("init", a.init);
    man.add_output("checkpoint", a.out);
    man.details() = {{"source_path", a.source},
                     {"target_path", a.target},
                     {"kernel", kernel},
                     {"adapter", r.fit.model.adapter ? json({{"in", r.fit.model.adapter->in_dim()}, {"out", r.fit.model.adapter->out_dim()}})
                                                     : json(nullptr)},
                     {"aligned_questions", r.aligned_questions},
                     {"unmatched_source", r.unmatched_source},
                     {"unmatched_target", r.unmatched_target},
                     {"selected_checkpoint", {{"path", a.out}, {"epoch", r.fit.best_epoch}, {"source_val_auc", r.fit.best_val_auc}}},
                     {"loss_curves", history_json(r.fit.history, true)}};
    man.write(manifest_path(a.manifest, a.out));
    std::printf("aligned %zu questions; best source-val AUC %.6f at epoch %d\n", r.aligned_questions,
                r.fit.best_val_auc, r.fit.best_epoch);
    return 0;
}

// ---- eval ------------------------------------------------------------------------------------

struct EvalArgs {
    std::string model, features, splits, out, manifest, logprobs, layer = "auto", route = "auto";
    std::string split = "test";
    bool calibrate = false;
    bool ppl = false;
};

std::optional<InputRoute> parse_route(const std::string& s) {
    if (s == "auto") return std::nullopt;
    if (s == "native") return InputRoute::native;
    if (s == "adapted") return InputRoute::adapted;
    throw InputError("--route must be auto, native or adapted");
}

int run_eval(const EvalArgs& a) {
    RunManifest man("eval");
    Stopwatch sw;
    const SplitName which = kSplitNames.at(a.split);
    std::optional<SplitManifest> sm;
    if (!a.splits.empty()) {
        require_file(a.splits, "split manifest");
        sm = load_split_manifest(a.splits);
        man.add_input("splits", a.splits);
    }
    if (a.calibrate && !sm) throw InputError("--calibrate needs --splits (thresholds come from the validation split)");

    EvalReport report;
    json cfg = {{"split", a.split}, {"calibrate", a.calibrate}, {"ppl", a.ppl}};
    if (a.ppl) {
        if (a.logprobs.empty()) throw InputError("--ppl needs --logprobs");
        if (!sm) throw InputError("--ppl needs --splits for labels");
        require_file(a.logprobs, "log-prob file");
        man.add_input("logprobs", a.logprobs);
        const LogProbSet lp = load_logprob_set(a.logprobs);
        const auto labeled_ids = [&](SplitName s) {
            std::vector<ScoredRecord> out;
            std::vector<std::string> ids;
            if (s == SplitName::train || s == SplitName::all) ids.insert(ids.end(), sm->splits.train.begin(), sm->splits.train.end());
            if (s == SplitName::val || s == SplitName::all) ids.insert(ids.end(), sm->splits.val.begin(), sm->splits.val.end());
            if (s == SplitName::test || s == SplitName::all) ids.insert(ids.end(), sm->splits.test.begin(), sm->splits.test.end());
            for (const auto& id : ids) {
                auto it = sm->labels.find(id);
                if (it != sm->labels.end() && lp.find(id) != nullptr) out.push_back({id, 0.0, it->second});
            }
            return out;
        };
        std::int32_t layer = 0;
        json per_layer = json::array();
        if (a.layer == "auto") {
            const LayerChoice choice = ppl_layer_select(lp, labeled_ids(SplitName::val));
            layer = choice.layer;
            for (const auto& [l, v] : choice.per_layer) per_layer.push_back({{"layer", l}, {"val_auc", v}});
        } else {
            try {
                std::size_t used = 0;
                layer = std::stoi(a.layer, &used);
                if (used != a.layer.size()) throw std::invalid_argument("layer");
            } catch (const std::exception&) {
                throw InputError("--layer must be 'auto' or an integer");
            }
        }
        std::vector<ScoredRecord> recs = labeled_ids(which);
        for (auto& r : recs) r.score = ppl_score(lp, r.question_id, layer);
        report = make_report(std::move(recs));
        report.score_kind = "ppl";
        report.ppl_layer = layer;
        cfg["layer"] = a.layer;
        if (!per_layer.empty()) man.details()["layer_selection"] = per_layer;
    } else {
        if (a.model.empty() || a.features.empty()) throw InputError("eval needs --model and --features (or --ppl)");
        require_file(a.model, "checkpoint");
        require_file(a.features, "feature file");
        man.add_input("model", a.model);
        man.add_input("features", a.features);
        const ProbeModel model = load_checkpoint(a.model).model;
        const FeatureSet features = load_feature_set(a.features);
        const std::optional<InputRoute> route = parse_route(a.route);
        const FeatureSet eval_set = sm ? select_split(features, *sm, which, true) : labeled_only(features);
        require_nonempty(eval_set, "evaluation set");
        report = make_report(score_records(model, eval_set, route));
        if (a.calibrate) {
            const FeatureSet val = select_split(features, *sm, SplitName::val, true);
            require_nonempty(val, "validation split");
            report.thresholds = calibrate_thresholds(score_records(model, val, route));
        }
        cfg["route"] = a.route;
    }
    man.phase("eval", sw.seconds());
    man.set_config(cfg);

    const std::string text = eval_report_json(report);
    if (a.out.empty()) {
        std::cout << text;
    } else {
        write_text(a.out, text);
        man.add_output("report", a.out);
        man.write(manifest_path(a.manifest, a.out));
        std::printf("AUC %.6f over %zu positives / %zu negatives\n", report.auc, report.n_pos, report.n_neg);
    }
    return 0;
}

// ---- delta -----------------------------------------------------------------------------------

struct DeltaArgs {
    std::string model_a, model_b, features, splits, out, manifest, split = "test";
    std::size_t bins = 50;
};

int run_delta(const DeltaArgs& a) {
    require_file(a.model_a, "checkpoint");
    require_file(a.model_b, "checkpoint");
    require_file(a.features, "feature file");
    RunManifest man("delta");
    Stopwatch sw;
    const ProbeModel ma = load_checkpoint(a.model_a).model;
    const ProbeModel mb = load_checkpoint(a.model_b).model;
    FeatureSet features = load_feature_set(a.features);
    if (!a.splits.empty()) {
        require_file(a.splits, "split manifest");
        features = select_split(features, load_split_manifest(a.splits), kSplitNames.at(a.split), true);
        man.add_input("splits", a.splits);
    }
    require_nonempty(features, "feature set");
    const std::vector<double> delta = concept_shift_delta(ma, mb, features);
    const Histogram h = delta_histogram(delta, a.bins);
    std::ostringstream csv;
    write_histogram_csv(h, csv);
    write_text(a.out, csv.str());
    man.phase("delta", sw.seconds());

    const double med = median(delta);
    man.set_config({{"bins", a.bins}, {"split", a.splits.empty() ? "all" : a.split}});
    man.add_input("model_a", a.model_a);
    man.add_input("model_b", a.model_b);
    man.add_input("features", a.features);
    man.add_output("histogram", a.out);
    man.details() = {{"records", delta.size()}, {"median_delta", med}};
    man.write(manifest_path(a.manifest, a.out));
    std::printf("median delta %.6f over %zu records\n", med, delta.size());
    return 0;
}

// ---- export-features ---------------------------------------------------------------------------

struct ExportArgs {
    std::string model, features, splits, out, manifest, split = "all";
};

int run_export(const ExportArgs& a) {
    require_file(a.model, "checkpoint");
    require_file(a.features, "feature file");
    RunManifest man("export-features");
    const ProbeModel model = load_checkpoint(a.model).model;
    FeatureSet features = load_feature_set(a.features);
    if (!a.splits.empty()) {
        require_file(a.splits, "split manifest");
        features = select_split(features, load_split_manifest(a.splits), kSplitNames.at(a.split), true);
        man.add_input("splits", a.splits);
    }
    std::ostringstream csv;
    export_encoder_features(model, features, csv);
    write_text(a.out, csv.str());
    man.set_config({{"split", a.splits.empty() ? "all" : a.split}});
    man.add_input("model", a.model);
    man.add_input("features", a.features);
    man.add_output("csv", a.out);
    man.details() = {{"records", features.size()}, {"width", model.hidden_width()}};
    man.write(manifest_path(a.manifest, a.out));
    return 0;
}

// ---- mix ---------------------------------------------------------------------------------------

struct MixArgs {
    std::vector<std::string> features, splits;
    std::vector<double> weights;
    std::string out, splits_out, manifest;
};

int run_mix(const MixArgs& a) {
    if (a.features.size() != a.splits.size()) {
        throw InputError("mix: give one --splits manifest per --features file");
    }
    RunManifest man("mix");
    std::vector<FeatureSet> parts[3];
    for (std::size_t i = 0; i < a.features.size(); ++i) {
        require_file(a.features[i], "feature file");
        require_file(a.splits[i], "split manifest");
        man.add_input("features", a.features[i]);
        man.add_input("splits", a.splits[i]);
        const FeatureSet f = load_feature_set(a.features[i]);
        const SplitManifest sm = load_split_manifest(a.splits[i]);
        int k = 0;
        for (SplitName s : {SplitName::train, SplitName::val, SplitName::test}) {
            FeatureSet part = labeled_only(select_split(f, sm, s, true));
            require_nonempty(part, a.features[i] + " " + split_label(s) + " split");
            parts[k++].push_back(std::move(part));
        }
    }
    // Each split is mixed on its own so the mixture keeps the members' partition.
    SplitManifest out_sm;
    out_sm.spec = load_split_manifest(a.splits.front()).spec;
    std::vector<FeatureRecord> records;
    std::optional<FeatureHeader> header;
    std::vector<std::string>* lists[3] = {&out_sm.splits.train, &out_sm.splits.val, &out_sm.splits.test};
    json counts = json::object();
    for (int k = 0; k < 3; ++k) {
        const FeatureSet mixed = build_mixture(parts[k], a.weights);
        if (!header) header = mixed.header();
        std::map<std::string, std::size_t> per_llm;
        for (std::size_t i = 0; i < mixed.size(); ++i) {
            FeatureRecord r = mixed[i];
            r.llm_id = mixed.llm_of(i);
            ++per_llm[r.llm_id];
            lists[k]->push_back(r.question_id);
            out_sm.labels[r.question_id] = label_value(r.label);
            records.push_back(std::move(r));
        }
        counts[split_label(static_cast<SplitName>(k))] = per_llm;
    }
    const FeatureSet mix(*header, std::move(records));
    ensure_parent(a.out);
    save_feature_set(mix, a.out);
    const fs::path splits_out = a.splits_out.empty() ? fs::path(a.out + ".splits.json") : fs::path(a.splits_out);
    write_text(splits_out, split_manifest_json(out_sm));

    man.set_config({{"weights", a.weights.empty() ? json("uniform") : json(a.weights)}});
    man.add_output("features", a.out);
    man.add_output("splits", splits_out);
    man.details() = {{"records_per_llm", counts}};
    man.write(manifest_path(a.manifest, a.out));
    std::printf("mixture of %zu domains: %zu records\n", a.features.size(), mix.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"faclens: hidden-state probes for predicting non-factual LLM responses"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML-style file of option values; flags on the command line win");
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    BuildDatasetArgs bd;
    auto* c_bd = app.add_subcommand("build-dataset", "Label QA responses and split them into train/val/test");
    c_bd->add_option("--qa", bd.qa, "Line-delimited JSON questions with responses")->required();
    c_bd->add_option("--out", bd.out, "Labeled JSON lines output")->required();
    c_bd->add_option("--splits-out", bd.splits_out, "Split manifest output (default <out>.splits.json)");
    c_bd->add_option("--seed", bd.seed, "Split seed")->capture_default_str();
    c_bd->add_option("--train-fraction", bd.train_fraction)->capture_default_str();
    c_bd->add_option("--val-fraction", bd.val_fraction)->capture_default_str();
    c_bd->add_option("--min-answer-chars", bd.min_answer_chars, "Drop questions whose answers are all shorter")
        ->capture_default_str();
    c_bd->add_flag("--case-sensitive", bd.case_sensitive, "Match answers without lowercasing");
    c_bd->add_option("--manifest", bd.manifest, "Run manifest path (default <out>.manifest.json)");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "Train a probe on one domain");
    c_tr->add_option("--features", tr.features, "FLNS feature file")->required();
    c_tr->add_option("--splits", tr.splits, "Split manifest with labels")->required();
    c_tr->add_option("--out", tr.out, "Checkpoint output")->required();
    c_tr->add_flag("--lr-grid", tr.lr_grid, "Try each learning rate of the default grid, keep the best on validation");
    c_tr->add_option("--manifest", tr.manifest, "Run manifest path (default <out>.manifest.json)");
    tr.flags.add(c_tr);

    AdaptArgs ad;
    ad.flags.lr = DAConfig::default_train().learning_rate;
    auto* c_ad = app.add_subcommand("adapt", "Transfer a probe to an unlabeled target LLM");
    c_ad->add_option("--source", ad.source, "Labeled source-LLM features")->required();
    c_ad->add_option("--target", ad.target, "Target-LLM features (labels ignored)")->required();
    c_ad->add_option("--splits", ad.splits, "Split manifest for the source (and target unless --target-splits)")
        ->required();
    c_ad->add_option("--target-splits", ad.target_splits, "Separate split manifest for the target");
    c_ad->add_option("--out", ad.out, "Checkpoint output")->required();
    c_ad->add_option("--kernel", ad.kernel, "MMD kernel")->check(CLI::IsMember({"linear", "gaussian", "rbf"}))
        ->capture_default_str();
    c_ad->add_option("--sigma", ad.sigma, "Gaussian bandwidth (default: median heuristic)")->check(CLI::PositiveNumber);
    c_ad->add_flag("--no-align", ad.no_align, "Shuffle source and target batches independently");
    c_ad->add_option("--mmd-weight", ad.mmd_weight, "Weight on the MMD term")->capture_default_str();
    c_ad->add_option("--init", ad.init, "Start from this checkpoint instead of a fresh model");
    c_ad->add_flag("--force-adapter", ad.force_adapter, "Add an input adapter even when widths match");
    c_ad->add_option("--manifest", ad.manifest, "Run manifest path (default <out>.manifest.json)");
    ad.flags.add(c_ad);

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "AUC report for a probe or the perplexity baseline");
    c_ev->add_option("--model", ev.model, "Checkpoint");
    c_ev->add_option("--features", ev.features, "FLNS feature file");
    c_ev->add_option("--splits", ev.splits, "Split manifest with labels");
    c_ev->add_option("--split", ev.split, "Which split to score")->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();
    c_ev->add_flag("--calibrate", ev.calibrate, "Add dual thresholds fitted on the validation split");
    c_ev->add_option("--route", ev.route, "Input path through the model")->check(CLI::IsMember({"auto", "native", "adapted"}))
        ->capture_default_str();
    c_ev->add_flag("--ppl", ev.ppl, "Score by question perplexity instead of a probe");
    c_ev->add_option("--logprobs", ev.logprobs, "FLPP log-prob file for --ppl");
    c_ev->add_option("--layer", ev.layer, "Log-prob layer for --ppl, or 'auto' to pick on validation")->capture_default_str();
    c_ev->add_option("--out", ev.out, "Report output (default stdout)");
    c_ev->add_option("--manifest", ev.manifest, "Run manifest path (default <out>.manifest.json)");

    DeltaArgs de;
    auto* c_de = app.add_subcommand("delta", "Histogram of |p_a(y=1|x) - p_b(y=1|x)| over a feature set");
    c_de->add_option("--model-a", de.model_a, "First checkpoint")->required();
    c_de->add_option("--model-b", de.model_b, "Second checkpoint")->required();
    c_de->add_option("--features", de.features, "FLNS feature file")->required();
    c_de->add_option("--splits", de.splits, "Restrict to one split of this manifest");
    c_de->add_option("--split", de.split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();
    c_de->add_option("--bins", de.bins, "Histogram bins over [0, 1]")->capture_default_str()->check(CLI::PositiveNumber);
    c_de->add_option("--out", de.out, "CSV output")->required();
    c_de->add_option("--manifest", de.manifest, "Run manifest path (default <out>.manifest.json)");

    ExportArgs ex;
    auto* c_ex = app.add_subcommand("export-features", "Write encoder outputs as CSV");
    c_ex->add_option("--model", ex.model, "Checkpoint")->required();
    c_ex->add_option("--features", ex.features, "FLNS feature file")->required();
    c_ex->add_option("--splits", ex.splits, "Restrict to one split and take labels from this manifest");
    c_ex->add_option("--split", ex.split)->check(CLI::IsMember({"train", "val", "test", "all"}))->capture_default_str();
    c_ex->add_option("--out", ex.out, "CSV output")->required();
    c_ex->add_option("--manifest", ex.manifest, "Run manifest path (default <out>.manifest.json)");

    MixArgs mx;
    auto* c_mx = app.add_subcommand("mix", "Combine labeled domains into a mixture domain");
    c_mx->add_option("--features", mx.features, "FLNS files, one per domain")->required();
    c_mx->add_option("--splits", mx.splits, "Split manifests, in the same order")->required();
    c_mx->add_option("--weights", mx.weights, "Mixture weights (default uniform)");
    c_mx->add_option("--out", mx.out, "Mixture FLNS output")->required();
    c_mx->add_option("--splits-out", mx.splits_out, "Mixture split manifest (default <out>.splits.json)");
    c_mx->add_option("--manifest", mx.manifest, "Run manifest path (default <out>.manifest.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (const char* env = std::getenv("FACLENS_THREADS"); env != nullptr && *env != '\0') {
            if (kernels::apply_thread_cap_from_env() == 0) {
                throw InputError(std::string("FACLENS_THREADS must be a positive integer, got '") + env + "'");
            }
        }
        if (c_bd->parsed()) return run_build_dataset(bd);
        if (c_tr->parsed()) return run_train(tr);
        if (c_ad->parsed()) return run_adapt(ad);
        if (c_ev->parsed()) return run_eval(ev);
        if (c_de->parsed()) return run_delta(de);
        if (c_ex->parsed()) return run_export(ex);
        if (c_mx->parsed()) return run_mix(mx);
    } catch (const InputError& e) {
        std::fprintf(stderr, "faclens: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "faclens: error: %s\n", e.what());
        return 1;
    }
    return 1;
}

}  // namespace faclens::cli

int main(int argc, char** argv) { return faclens::cli::main(argc, argv); }
