#include "bsdgan/benchmark.hpp"

#include "bsdgan/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

namespace bsdgan {

using nlohmann::json;

std::int64_t ConfusionMatrix::total() const
{
    std::int64_t n = 0;
    for (const auto& row : counts)
        for (auto v : row)
            n += v;
    return n;
}

double ConfusionMatrix::recall(int label) const
{
    const auto& row = counts[static_cast<std::size_t>(label)];
    std::int64_t n = 0;
    for (auto v : row)
        n += v;
    return n == 0 ? 0.0 : static_cast<double>(row[static_cast<std::size_t>(label)]) / static_cast<double>(n);
}

double ConfusionMatrix::accuracy() const
{
    const auto n = total();
    std::int64_t hit = 0;
    for (std::size_t c = 0; c < counts.size(); ++c)
        hit += counts[c][c];
    return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted, int class_count)
{
    if (truth.size() != predicted.size())
        throw ShapeError("confusion_matrix: label vectors differ in length");
    ConfusionMatrix m;
    m.counts.assign(static_cast<std::size_t>(class_count), std::vector<std::int64_t>(static_cast<std::size_t>(class_count), 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= class_count || predicted[i] < 0 || predicted[i] >= class_count)
            throw ShapeError("confusion_matrix: label out of range");
        ++m.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    }
    return m;
}

std::vector<const ModelRun*> BenchmarkReport::find(ModelKind model, const std::string& variant) const
{
    std::vector<const ModelRun*> out;
    for (const auto& r : runs)
        if (r.model == model && r.variant == variant)
            out.push_back(&r);
    return out;
}

PurityAudit audit_purity(const LabeledDataset& train, const LabeledDataset& eval)
{
    std::unordered_set<std::uint64_t> train_ids;
    for (const auto& w : train.windows)
        if (!w.synthetic)
            train_ids.insert(w.id);
    PurityAudit audit;
    for (const auto& w : eval.windows) {
        ++audit.evaluated;
        audit.synthetic += w.synthetic;
        audit.shared_with_train += train_ids.count(w.id) != 0;
    }
    if (audit.synthetic > 0)
        throw Error("evaluation split holds " + std::to_string(audit.synthetic) + " synthetic windows");
    if (audit.shared_with_train > 0)
        throw Error("evaluation split shares " + std::to_string(audit.shared_with_train) + " windows with train");
    return audit;
}

std::vector<ModelRun> benchmark_variant(const std::string& variant, const LabeledDataset& train,
                                        const LabeledDataset& val, const LabeledDataset& test,
                                        const BenchmarkConfig& config, PurityAudit* audit)
{
    const PurityAudit test_audit = audit_purity(train, test);
    const PurityAudit val_audit = audit_purity(train, val);
    if (audit) {
        audit->evaluated += test_audit.evaluated + val_audit.evaluated;
    }
    std::vector<ModelRun> runs;
    for (auto model : config.models)
        for (auto seed : config.seeds) {
            ModelRun run;
            run.model = model;
            run.variant = variant;
            run.seed = seed;
            try {
                auto clf = make_classifier(model, config.options);
                clf->fit(train, val, seed);
                run.confusion = confusion_matrix(test.labels, clf->predict(test), test.class_count());
                for (int c = 0; c < test.class_count(); ++c)
                    run.recall.push_back(run.confusion.recall(c));
                run.accuracy = run.confusion.accuracy();
                run.hyperparameters = clf->hyperparameters();
            } catch (const TrainingError& e) {
                run.failed = true;
                run.error = e.what();
            }
            runs.push_back(std::move(run));
        }
    return runs;
}

BenchmarkReport benchmark(const LabeledDataset& imbalanced, const LabeledDataset& balanced, const LabeledDataset& val,
                          const LabeledDataset& test, const BenchmarkConfig& config)
{
    if (imbalanced.class_names != test.class_names || balanced.class_names != test.class_names)
        throw Error("benchmark: class tables differ between splits");
    BenchmarkReport report;
    report.class_names = test.class_names;
    report.seeds = config.seeds;
    report.split_sizes = {{"train_imbalanced", static_cast<std::int64_t>(imbalanced.size())},
                          {"train_balanced", static_cast<std::int64_t>(balanced.size())},
                          {"val", static_cast<std::int64_t>(val.size())},
                          {"test", static_cast<std::int64_t>(test.size())}};
    const std::pair<const char*, const LabeledDataset*> variants[] = {{"imbalanced", &imbalanced},
                                                                     {"balanced", &balanced}};
    for (const auto& [variant, train] : variants)
        for (auto& r : benchmark_variant(variant, *train, val, test, config, &report.audit))
            report.runs.push_back(std::move(r));
    return report;
}

double median(std::vector<double> values)
{
    if (values.empty())
        return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

json to_json(const BenchmarkReport& report)
{
    json runs = json::array();
    for (const auto& r : report.runs)
        runs.push_back({{"model", to_string(r.model)},
                        {"variant", r.variant},
                        {"seed", r.seed},
                        {"confusion", r.confusion.counts},
                        {"recall", r.recall},
                        {"accuracy", r.accuracy},
                        {"hyperparameters", r.hyperparameters},
                        {"failed", r.failed},
                        {"error", r.error}});
    return {{"class_names", report.class_names},
            {"split_sizes", report.split_sizes},
            {"seeds", report.seeds},
            {"audit",
             {{"evaluated", report.audit.evaluated},
              {"synthetic", report.audit.synthetic},
              {"shared_with_train", report.audit.shared_with_train}}},
            {"runs", runs}};
}

BenchmarkReport benchmark_from_json(const json& j)
{
    try {
        BenchmarkReport report;
        report.class_names = j.at("class_names").get<std::vector<std::string>>();
        report.split_sizes = j.at("split_sizes").get<std::map<std::string, std::int64_t>>();
        report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        const auto& a = j.at("audit");
        report.audit = {a.at("evaluated").get<std::int64_t>(), a.at("synthetic").get<std::int64_t>(),
                        a.at("shared_with_train").get<std::int64_t>()};
        for (const auto& r : j.at("runs")) {
            ModelRun run;
            run.model = model_from_string(r.at("model").get<std::string>());
            run.variant = r.at("variant").get<std::string>();
            run.seed = r.at("seed").get<std::uint64_t>();
            run.confusion.counts = r.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
            run.hyperparameters = r.at("hyperparameters");
            run.failed = r.at("failed").get<bool>();
            run.error = r.at("error").get<std::string>();
            // Scalars are recomputed from the stored confusion matrix.
            if (!run.failed) {
                for (int c = 0; c < run.confusion.class_count(); ++c)
                    run.recall.push_back(run.confusion.recall(c));
                run.accuracy = run.confusion.accuracy();
            }
            report.runs.push_back(std::move(run));
        }
        return report;
    } catch (const json::exception& e) {
        throw FormatError(std::string("benchmark report: ") + e.what());
    }
}

std::string benchmark_table(const BenchmarkReport& report)
{
    std::string out;
    char buf[64];
    for (const std::string variant : {"imbalanced", "balanced"}) {
        out += "# " + variant + " train split, median over " + std::to_string(report.seeds.size()) + " seed(s)\n";
        out += "activity";
        std::vector<ModelKind> models;
        for (auto m : all_models())
            if (!report.find(m, variant).empty()) {
                models.push_back(m);
                out += "\t" + to_string(m);
            }
        out += "\n";
        const int k = static_cast<int>(report.class_names.size());
        for (int c = 0; c <= k; ++c) {
            out += c < k ? report.class_names[static_cast<std::size_t>(c)] : std::string("overall");
            for (auto m : models) {
                std::vector<double> v;
                for (const auto* r : report.find(m, variant))
                    if (!r->failed)
                        v.push_back(c < k ? r->recall[static_cast<std::size_t>(c)] : r->accuracy);
                if (v.empty())
                    out += "\tfailed";
                else {
                    std::snprintf(buf, sizeof buf, "\t%.4f", median(v));
                    out += buf;
                }
            }
            out += "\n";
        }
        out += "\n";
    }
    return out;
}

} // namespace bsdgan
