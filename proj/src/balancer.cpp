#include "bsdgan/balancer.hpp"

#include "bsdgan/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace bsdgan {

using nlohmann::json;

bool verify(const Eigen::Ref<const Vector>& probs, int target)
{
    const auto k = static_cast<int>(probs.size()) - 1;
    if (target < 0 || target >= k)
        return false;
    for (Eigen::Index i = 0; i < probs.size(); ++i)
        if (i != target && !(probs(target) > probs(i)))
            return false;
    return true;
}

bool verify(const NetworkParams& discriminator, const Matrix& window, int target)
{
    const int labels[1] = {target};
    const Matrix probs = discriminate(discriminator, Tensor(window, static_cast<int>(window.cols())), labels);
    return verify(probs.col(0), target);
}

WindowGenerator network_generator(const NetworkParams& generator)
{
    return [&generator](int label, int count, Rng& rng) {
        Matrix z(generator.arch.latent_dim, count);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (Eigen::Index i = 0; i < z.size(); ++i)
            z.data()[i] = dist(rng);
        const std::vector<int> labels(static_cast<std::size_t>(count), label);
        return generate(generator, z, labels);
    };
}

WindowVerifier network_verifier(const NetworkParams& discriminator)
{
    return [&discriminator](const Tensor& batch, int label) {
        const std::vector<int> labels(static_cast<std::size_t>(batch.batch()), label);
        const Matrix probs = discriminate(discriminator, batch, labels);
        std::vector<bool> keep(labels.size());
        for (std::size_t i = 0; i < keep.size(); ++i)
            keep[i] = verify(probs.col(static_cast<Eigen::Index>(i)), label);
        return keep;
    };
}

Rng class_rng(std::uint64_t seed, int label)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(label), 0xBA1Au};
    return Rng(seq);
}

VerifiedBatch generate_verified(const WindowGenerator& generate_windows, const WindowVerifier& verify_windows,
                                int label, std::int64_t wanted, std::int64_t budget, int gen_batch, Rng& rng)
{
    VerifiedBatch out;
    while (static_cast<std::int64_t>(out.windows.size()) < wanted && out.attempts < budget) {
        const int count = static_cast<int>(std::min<std::int64_t>(gen_batch, budget - out.attempts));
        const Tensor batch = generate_windows(label, count, rng);
        if (batch.batch() != count)
            throw ShapeError("generator returned " + std::to_string(batch.batch()) + " windows, asked for " +
                             std::to_string(count));
        const auto keep = verify_windows(batch, label);
        if (keep.size() != static_cast<std::size_t>(count))
            throw ShapeError("verifier returned " + std::to_string(keep.size()) + " flags for " +
                             std::to_string(count) + " windows");
        out.attempts += count;
        for (int i = 0; i < count; ++i)
            if (keep[static_cast<std::size_t>(i)])
                out.windows.emplace_back(batch.sample(i));
    }
    return out;
}

void BalanceConfig::validate() const
{
    if (gen_batch < 1)
        throw ConfigError("gen_batch must be >= 1");
    if (max_attempts_per_class < 0)
        throw ConfigError("max_attempts_per_class must be >= 0");
    if (attempts_per_deficit < 1)
        throw ConfigError("attempts_per_deficit must be >= 1");
    if (acceptance_floor < 0 || acceptance_floor > 1)
        throw ConfigError("acceptance_floor must lie in [0, 1]");
}

bool BalanceReport::success() const { return failures().empty(); }

std::vector<const ClassBalance*> BalanceReport::failures() const
{
    std::vector<const ClassBalance*> out;
    for (const auto& c : classes)
        if (c.failed)
            out.push_back(&c);
    return out;
}

BalanceResult balance(const LabeledDataset& real, const WindowGenerator& generate_windows,
                      const WindowVerifier& verify_windows, const BalanceConfig& config)
{
    config.validate();
    if (real.empty())
        throw Error("balance needs a non-empty dataset");
    if (real.split == Split::val || real.split == Split::test)
        throw Error("only the train split may be balanced, got " + to_string(real.split));
    const auto start_time = std::chrono::steady_clock::now();

    BalanceResult result;
    result.balanced = real;
    result.synthetic.class_names = real.class_names;
    result.synthetic.split = real.split;
    auto& report = result.report;
    report.gen_batch = config.gen_batch;

    const auto histogram = class_histogram(real);
    report.target = histogram.max_count();
    std::uint64_t next_id = synthetic_id_base;
    for (const auto& w : real.windows)
        if (w.id >= synthetic_id_base)
            next_id = std::max(next_id, w.id + 1);

    for (int label = 0; label < real.class_count(); ++label) {
        ClassBalance entry;
        entry.label = label;
        entry.name = real.class_names[static_cast<std::size_t>(label)];
        entry.initial = histogram.count(label);
        entry.requested = report.target - entry.initial;
        if (entry.requested <= 0) {
            entry.requested = 0;
            report.classes.push_back(entry);
            continue;
        }
        entry.budget = config.max_attempts_per_class > 0 ? config.max_attempts_per_class
                                                         : config.attempts_per_deficit * entry.requested;
        Rng rng = class_rng(config.seed, label);
        auto batch = generate_verified(generate_windows, verify_windows, label, entry.requested, entry.budget,
                                       config.gen_batch, rng);
        entry.attempts = batch.attempts;
        for (auto& values : batch.windows) {
            if (values.rows() != real.channels() || values.cols() != real.length())
                throw ShapeError("generator produced windows of the wrong shape for class " + entry.name);
            SensorWindow w;
            w.values = std::move(values);
            w.id = next_id++;
            w.synthetic = true;
            result.synthetic.windows.push_back(w);
            result.synthetic.labels.push_back(label);
            result.balanced.windows.push_back(std::move(w));
            result.balanced.labels.push_back(label);
            ++entry.generated;
        }
        entry.acceptance_rate = entry.attempts > 0 ? static_cast<double>(entry.generated) / entry.attempts : 0.0;
        if (entry.generated < entry.requested) {
            entry.failed = true;
            char buf[160];
            std::snprintf(buf, sizeof buf, "attempts exhausted (%lld of %lld) at acceptance %.4f%s",
                          static_cast<long long>(entry.attempts), static_cast<long long>(entry.budget),
                          entry.acceptance_rate, entry.acceptance_rate < config.acceptance_floor ? ", below floor" : "");
            entry.note = buf;
        }
        report.classes.push_back(entry);
    }
    report.final_histogram = class_histogram(result.balanced);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
    return result;
}

BalanceResult balance(const LabeledDataset& real, const NetworkParams& generator, const NetworkParams& discriminator,
                      const BalanceConfig& config)
{
    if (generator.role != Role::generator || discriminator.role != Role::discriminator)
        throw Error("balance needs a generator and a discriminator checkpoint");
    if (generator.arch.class_count != real.class_count())
        throw ShapeError("generator has " + std::to_string(generator.arch.class_count) + " classes, dataset has " +
                         std::to_string(real.class_count()));
    return balance(real, network_generator(generator), network_verifier(discriminator), config);
}

std::vector<std::filesystem::path> export_balanced(DatasetContainer base, const LabeledDataset& balanced,
                                                   const std::filesystem::path& dir)
{
    if (balanced.class_names != base.class_names)
        throw Error("balanced dataset's classes differ from the container's");
    for (const auto& [split, ds] : base.splits)
        for (const auto& w : ds.windows)
            if (w.synthetic && split != Split::train)
                throw Error("synthetic window in the " + to_string(split) + " split");
    LabeledDataset train = balanced;
    train.split = Split::train;
    base.splits[Split::train] = std::move(train);
    return save_container(base, dir);
}

json to_json(const BalanceReport& report)
{
    json classes = json::array();
    for (const auto& c : report.classes)
        classes.push_back({{"label", c.label},
                           {"name", c.name},
                           {"initial", c.initial},
                           {"requested", c.requested},
                           {"generated", c.generated},
                           {"attempts", c.attempts},
                           {"budget", c.budget},
                           {"acceptance_rate", c.acceptance_rate},
                           {"failed", c.failed},
                           {"note", c.note}});
    json hist = json::object();
    for (const auto& [label, n] : report.final_histogram.counts)
        hist[std::to_string(label)] = n;
    return {{"target", report.target},
            {"gen_batch", report.gen_batch},
            {"success", report.success()},
            {"classes", classes},
            {"final_histogram", hist}};
}

std::string balance_table(const BalanceReport& report)
{
    std::string out = "class\tbefore\trequested\tgenerated\tattempts\tacceptance\tafter\tstatus\n";
    char line[512];
    for (const auto& c : report.classes) {
        std::snprintf(line, sizeof line, "%s\t%lld\t%lld\t%lld\t%lld\t%.4f\t%lld\t%s\n", c.name.c_str(),
                      static_cast<long long>(c.initial), static_cast<long long>(c.requested),
                      static_cast<long long>(c.generated), static_cast<long long>(c.attempts), c.acceptance_rate,
                      static_cast<long long>(report.final_histogram.count(c.label)),
                      c.failed ? ("FAILED: " + c.note).c_str() : "ok");
        out += line;
    }
    return out;
}

} // namespace bsdgan
