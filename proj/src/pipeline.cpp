#include "bsdgan/pipeline.hpp"

#include "bsdgan/container.hpp"
#include "bsdgan/errors.hpp"
#include "bsdgan/io.hpp"
#include "bsdgan/plot.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <sstream>

namespace bsdgan {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DescriptorError*>(&e))
        return exit_code::config;
    if (dynamic_cast<const MissingArtifactError*>(&e))
        return exit_code::missing_artifact;
    if (dynamic_cast<const TrainingError*>(&e))
        return exit_code::training;
    return exit_code::failure;
}

// Config ----------------------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!trim(item).empty())
            out.push_back(trim(item));
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text)
{
    const auto s = trim(text);
    T value{};
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
        throw ConfigError(key + ": cannot parse '" + text + "' as a number");
    return value;
}

bool parse_bool(const std::string& key, const std::string& text)
{
    std::string s;
    for (char c : trim(text))
        s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "true" || s == "1" || s == "yes" || s == "on")
        return true;
    if (s == "false" || s == "0" || s == "no" || s == "off")
        return false;
    throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

// "none" stands for an unlimited depth (0).
std::vector<int> parse_int_list(const std::string& key, const std::string& text, bool allow_none = false)
{
    std::vector<int> out;
    for (const auto& item : split_list(text)) {
        if (allow_none && item == "none")
            out.push_back(0);
        else
            out.push_back(parse_number<int>(key, item));
    }
    if (out.empty())
        throw ConfigError(key + ": empty list");
    return out;
}

std::string num(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string num(std::int64_t v) { return std::to_string(v); }

std::string join(const std::vector<int>& v, bool none_for_zero = false)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + (none_for_zero && v[i] == 0 ? std::string("none") : std::to_string(v[i]));
    return out;
}

std::string to_string(DataKind k)
{
    switch (k) {
    case DataKind::wisdm: return "wisdm";
    case DataKind::unimib: return "unimib";
    case DataKind::toy: return "toy";
    }
    return "?";
}

struct KeySpec {
    std::string section;
    std::string key;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&)> set;
};

#define BSDGAN_INT(sec, name, field)                                                                            \
    KeySpec{sec, name, [](const PipelineConfig& c) { return num(static_cast<std::int64_t>(c.field)); },          \
            [](PipelineConfig& c, const std::string& v) {                                                        \
                c.field = parse_number<std::int64_t>(std::string(sec) + "." + name, v);                          \
            }}
#define BSDGAN_REAL(sec, name, field)                                                                           \
    KeySpec{sec, name, [](const PipelineConfig& c) { return num(static_cast<double>(c.field)); },                \
            [](PipelineConfig& c, const std::string& v) {                                                        \
                c.field = parse_number<double>(std::string(sec) + "." + name, v);                                \
            }}

const std::vector<KeySpec>& registry()
{
    static const std::vector<KeySpec> keys = {
        KeySpec{"run", "seed", [](const PipelineConfig& c) { return std::to_string(c.seed); },
                [](PipelineConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("run.seed", v); }},
        KeySpec{"run", "out_dir", [](const PipelineConfig& c) { return c.out_dir; },
                [](PipelineConfig& c, const std::string& v) { c.out_dir = trim(v); }},
        KeySpec{"data", "kind", [](const PipelineConfig& c) { return to_string(c.data_kind); },
                [](PipelineConfig& c, const std::string& v) {
                    const auto s = trim(v);
                    if (s == "wisdm")
                        c.data_kind = DataKind::wisdm;
                    else if (s == "unimib")
                        c.data_kind = DataKind::unimib;
                    else if (s == "toy")
                        c.data_kind = DataKind::toy;
                    else
                        throw ConfigError("data.kind: expected wisdm, unimib or toy, got '" + v + "'");
                }},
        KeySpec{"data", "path", [](const PipelineConfig& c) { return c.data_path; },
                [](PipelineConfig& c, const std::string& v) { c.data_path = trim(v); }},
        BSDGAN_INT("data", "window_length", window_length),
        BSDGAN_INT("data", "window_stride", window_stride),
        BSDGAN_REAL("data", "train_fraction", split_fractions[0]),
        BSDGAN_REAL("data", "val_fraction", split_fractions[1]),
        BSDGAN_REAL("data", "test_fraction", split_fractions[2]),
        BSDGAN_INT("toy", "length", toy.length),
        KeySpec{"toy", "train_counts",
                [](const PipelineConfig& c) {
                    return join({c.toy.train_counts[0], c.toy.train_counts[1], c.toy.train_counts[2]});
                },
                [](PipelineConfig& c, const std::string& v) {
                    const auto l = parse_int_list("toy.train_counts", v);
                    if (l.size() != 3)
                        throw ConfigError("toy.train_counts: expected three counts (burst, sine, square)");
                    c.toy.train_counts = {l[0], l[1], l[2]};
                }},
        BSDGAN_INT("toy", "val_per_class", toy.val_per_class),
        BSDGAN_INT("toy", "test_per_class", toy.test_per_class),
        BSDGAN_REAL("toy", "noise", toy.noise),
        BSDGAN_INT("model", "latent_dim", model.latent_dim),
        KeySpec{"model", "conv_filters",
                [](const PipelineConfig& c) {
                    std::vector<int> f;
                    for (const auto& b : c.model.conv_blocks)
                        f.push_back(b.filters);
                    return join(f);
                },
                [](PipelineConfig& c, const std::string& v) {
                    const auto f = parse_int_list("model.conv_filters", v);
                    const ConvBlock proto = c.model.conv_blocks.empty() ? ConvBlock{} : c.model.conv_blocks.front();
                    c.model.conv_blocks.clear();
                    for (int n : f)
                        c.model.conv_blocks.push_back({n, proto.kernel, proto.stride});
                }},
        KeySpec{"model", "conv_kernel",
                [](const PipelineConfig& c) { return std::to_string(c.model.conv_blocks.front().kernel); },
                [](PipelineConfig& c, const std::string& v) {
                    const int k = parse_number<int>("model.conv_kernel", v);
                    for (auto& b : c.model.conv_blocks)
                        b.kernel = k;
                }},
        KeySpec{"model", "conv_stride",
                [](const PipelineConfig& c) { return std::to_string(c.model.conv_blocks.front().stride); },
                [](PipelineConfig& c, const std::string& v) {
                    const int s = parse_number<int>("model.conv_stride", v);
                    for (auto& b : c.model.conv_blocks)
                        b.stride = s;
                }},
        BSDGAN_REAL("model", "leaky_slope", model.leaky_slope),
        BSDGAN_INT("model", "label_embedding_dim", model.label_embedding_dim),
        BSDGAN_INT("model", "fusion_width", model.fusion_width),
        BSDGAN_INT("pretrain", "epochs", pretrain.epochs),
        BSDGAN_INT("pretrain", "batch_size", pretrain.batch_size),
        BSDGAN_INT("pretrain", "patience", pretrain.patience),
        BSDGAN_REAL("pretrain", "learning_rate", pretrain.adam.learning_rate),
        BSDGAN_REAL("pretrain", "beta1", pretrain.adam.beta1),
        BSDGAN_REAL("pretrain", "beta2", pretrain.adam.beta2),
        BSDGAN_INT("train", "epochs", train.epochs),
        BSDGAN_INT("train", "batch_size", train.batch_size),
        BSDGAN_REAL("train", "learning_rate", train.adam.learning_rate),
        BSDGAN_REAL("train", "beta1", train.adam.beta1),
        BSDGAN_REAL("train", "beta2", train.adam.beta2),
        BSDGAN_REAL("train", "lambda_gp", train.lambda_gp),
        BSDGAN_INT("train", "critic_steps", train.critic_steps),
        BSDGAN_REAL("train", "penalty_fd_step", train.penalty_fd_step),
        KeySpec{"train", "balanced_real_batches",
                [](const PipelineConfig& c) { return std::string(c.train.balanced_real_batches ? "true" : "false"); },
                [](PipelineConfig& c, const std::string& v) {
                    c.train.balanced_real_batches = parse_bool("train.balanced_real_batches", v);
                }},
        BSDGAN_INT("balance", "gen_batch", balance.gen_batch),
        BSDGAN_INT("balance", "attempts_per_deficit", balance.attempts_per_deficit),
        BSDGAN_INT("balance", "max_attempts_per_class", balance.max_attempts_per_class),
        BSDGAN_REAL("balance", "acceptance_floor", balance.acceptance_floor),
        KeySpec{"fid", "verify", [](const PipelineConfig& c) { return std::string(c.fid_verify ? "true" : "false"); },
                [](PipelineConfig& c, const std::string& v) { c.fid_verify = parse_bool("fid.verify", v); }},
        KeySpec{"fid", "match_train_counts",
                [](const PipelineConfig& c) { return std::string(c.fid.match_train_counts ? "true" : "false"); },
                [](PipelineConfig& c, const std::string& v) {
                    c.fid.match_train_counts = parse_bool("fid.match_train_counts", v);
                }},
        KeySpec{"benchmark", "models",
                [](const PipelineConfig& c) {
                    std::string out;
                    for (std::size_t i = 0; i < c.benchmark_models.size(); ++i)
                        out += (i ? "," : "") + to_string(c.benchmark_models[i]);
                    return out;
                },
                [](PipelineConfig& c, const std::string& v) {
                    c.benchmark_models.clear();
                    for (const auto& m : split_list(v))
                        c.benchmark_models.push_back(model_from_string(m));
                }},
        BSDGAN_INT("benchmark", "repeats", benchmark_repeats),
        KeySpec{"benchmark", "knn_k", [](const PipelineConfig& c) { return join(c.classifier.knn_k); },
                [](PipelineConfig& c, const std::string& v) { c.classifier.knn_k = parse_int_list("benchmark.knn_k", v); }},
        KeySpec{"benchmark", "dt_depths", [](const PipelineConfig& c) { return join(c.classifier.dt_depths, true); },
                [](PipelineConfig& c, const std::string& v) {
                    c.classifier.dt_depths = parse_int_list("benchmark.dt_depths", v, true);
                }},
        KeySpec{"benchmark", "rf_trees", [](const PipelineConfig& c) { return join(c.classifier.rf_trees); },
                [](PipelineConfig& c, const std::string& v) {
                    c.classifier.rf_trees = parse_int_list("benchmark.rf_trees", v);
                }},
        KeySpec{"benchmark", "rf_depths", [](const PipelineConfig& c) { return join(c.classifier.rf_depths, true); },
                [](PipelineConfig& c, const std::string& v) {
                    c.classifier.rf_depths = parse_int_list("benchmark.rf_depths", v, true);
                }},
        BSDGAN_INT("benchmark", "deep_epochs", classifier.deep.epochs),
        BSDGAN_INT("benchmark", "deep_batch_size", classifier.deep.batch_size),
        BSDGAN_INT("benchmark", "deep_patience", classifier.deep.patience),
        BSDGAN_REAL("benchmark", "deep_learning_rate", classifier.deep.adam.learning_rate),
    };
    return keys;
}

#undef BSDGAN_INT
#undef BSDGAN_REAL

std::string upper(std::string s)
{
    for (auto& c : s)
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

} // namespace

std::vector<std::string> config_keys()
{
    std::vector<std::string> out;
    for (const auto& k : registry())
        out.push_back(k.section + "." + k.key);
    return out;
}

std::optional<std::string> process_env(const std::string& name)
{
    if (const char* v = std::getenv(name.c_str()))
        return std::string(v);
    return std::nullopt;
}

PipelineConfig parse_config(const std::string& ini_text, const EnvLookup& env)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(ini_text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    PipelineConfig config;
    const auto& keys = registry();
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("config: key '" + section + "' outside any section");
        for (const auto& [key, value] : body) {
            const auto it = std::find_if(keys.begin(), keys.end(),
                                         [&](const KeySpec& k) { return k.section == section && k.key == key; });
            if (it == keys.end())
                throw ConfigError("config: unknown key '" + section + "." + key + "'");
            it->set(config, value.data());
        }
    }
    if (env)
        for (const auto& k : keys)
            if (auto v = env("BSDGAN_" + upper(k.section) + "_" + upper(k.key)))
                k.set(config, *v);
    return config;
}

PipelineConfig load_config(const fs::path& path, const EnvLookup& env)
{
    if (!fs::exists(path))
        throw ConfigError("config file not found: " + path.string());
    return parse_config(io::read_file(path), env);
}

void PipelineConfig::validate() const
{
    if (out_dir.empty())
        throw ConfigError("run.out_dir must not be empty");
    if (data_kind != DataKind::toy && data_path.empty())
        throw ConfigError("data.path is required for data.kind = " + to_string(data_kind));
    if (window_length < 1 || window_stride < 1)
        throw ConfigError("data.window_length and data.window_stride must be >= 1");
    double sum = 0;
    for (double f : split_fractions) {
        if (f < 0)
            throw ConfigError("split fractions must be >= 0");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1, got " + num(sum));
    if (toy.length < 8)
        throw ConfigError("toy.length must be >= 8");
    for (int n : toy.train_counts)
        if (n < 1)
            throw ConfigError("toy.train_counts must be >= 1");
    if (toy.val_per_class < 2 || toy.test_per_class < 1)
        throw ConfigError("toy.val_per_class must be >= 2 and toy.test_per_class >= 1");
    if (toy.noise < 0)
        throw ConfigError("toy.noise must be >= 0");
    if (model.latent_dim < 1 || model.conv_blocks.empty() || model.label_embedding_dim < 1 || model.fusion_width < 1)
        throw ConfigError("model widths must be >= 1 and at least one conv block is required");
    for (const auto& b : model.conv_blocks)
        if (b.filters < 1 || b.kernel < 1 || b.stride < 1)
            throw ConfigError("conv filters, kernel and stride must be >= 1");
    if (pretrain.epochs < 0 || pretrain.batch_size < 1 || pretrain.patience < 0 || !(pretrain.adam.learning_rate > 0))
        throw ConfigError("pretrain settings out of range");
    train.validate();
    balance.validate();
    if (benchmark_models.empty() || benchmark_repeats < 1)
        throw ConfigError("benchmark needs at least one model and one repeat");
    if (classifier.deep.epochs < 0 || classifier.deep.batch_size < 1 || !(classifier.deep.adam.learning_rate > 0))
        throw ConfigError("deep classifier settings out of range");
    for (int k : classifier.knn_k)
        if (k < 1)
            throw ConfigError("benchmark.knn_k entries must be >= 1");
    for (int t : classifier.rf_trees)
        if (t < 1)
            throw ConfigError("benchmark.rf_trees entries must be >= 1");
}

std::string PipelineConfig::canonical() const
{
    std::map<std::string, std::map<std::string, std::string>> sections;
    for (const auto& k : registry())
        sections[k.section][k.key] = k.get(*this);
    std::string out;
    for (const auto& [section, keys] : sections) {
        out += "[" + section + "]\n";
        for (const auto& [key, value] : keys)
            out += key + " = " + value + "\n";
    }
    return out;
}

std::string PipelineConfig::hash() const { return io::sha256_hex(canonical()); }

std::vector<std::uint64_t> PipelineConfig::benchmark_seeds() const
{
    std::vector<std::uint64_t> out;
    for (int i = 0; i < benchmark_repeats; ++i)
        out.push_back(seed * 1000 + 5 + static_cast<std::uint64_t>(i));
    return out;
}

// Manifests --------------------------------------------------------------------------------------

json to_json(const RunManifest& m)
{
    auto hashes = [](const std::vector<ArtifactHash>& v) {
        json a = json::array();
        for (const auto& h : v)
            a.push_back({{"path", h.path}, {"sha256", h.sha256}});
        return a;
    };
    return {{"format", "bsdgan-run-manifest"},
            {"stage", m.stage},
            {"status", m.status},
            {"config_hash", m.config_hash},
            {"config", m.config_text},
            {"seed", m.seed},
            {"inputs", hashes(m.inputs)},
            {"outputs", hashes(m.outputs)},
            {"wall_seconds", m.wall_seconds},
            {"summary", m.summary}};
}

RunManifest manifest_from_json(const json& j)
{
    try {
        RunManifest m;
        m.stage = j.at("stage").get<std::string>();
        m.status = j.at("status").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.config_text = j.at("config").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& h : j.at("inputs"))
            m.inputs.push_back({h.at("path").get<std::string>(), h.at("sha256").get<std::string>()});
        for (const auto& h : j.at("outputs"))
            m.outputs.push_back({h.at("path").get<std::string>(), h.at("sha256").get<std::string>()});
        m.wall_seconds = j.at("wall_seconds").get<double>();
        m.summary = j.at("summary");
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("run manifest: ") + e.what());
    }
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock")
{
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw Error("output directory " + dir.string() + " is locked by another invocation (remove " +
                    path_.string() + " if that run is gone)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

DirectoryLock::~DirectoryLock()
{
    std::error_code ec;
    fs::remove(path_, ec);
}

// Stage plumbing -------------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

/// Files under `dir` (recursively, manifests excluded) with hashes, paths relative to `base`.
std::vector<ArtifactHash> hash_tree(const fs::path& dir, const fs::path& base)
{
    std::vector<ArtifactHash> out;
    if (!fs::exists(dir))
        return out;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().filename() == manifest_file)
            continue;
        out.push_back({fs::relative(entry.path(), base).generic_string(), io::sha256_file(entry.path())});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    return out;
}

/// Builds a stage in `<out>/.<stage>.partial` and swaps it into place on commit.
class StageWriter {
public:
    StageWriter(const PipelineConfig& config, std::string stage)
        : config_(config), stage_(std::move(stage)), started_(Clock::now())
    {
        final_ = fs::path(config.out_dir) / stage_;
        staging_ = fs::path(config.out_dir) / ("." + stage_ + ".partial");
        fs::remove_all(staging_);
        fs::create_directories(staging_);
    }

    ~StageWriter()
    {
        std::error_code ec;
        if (!committed_)
            fs::remove_all(staging_, ec);
    }

    const fs::path& dir() const { return staging_; }

    void write(const std::string& name, const std::string& bytes) const { io::write_file_atomic(staging_ / name, bytes); }

    void consume(const RunManifest& upstream)
    {
        for (const auto& h : upstream.outputs)
            inputs_.push_back(h);
    }

    RunManifest commit(json summary, const std::string& status = "ok")
    {
        RunManifest m;
        m.stage = stage_;
        m.status = status;
        m.config_hash = config_.hash();
        m.config_text = config_.canonical();
        m.seed = config_.seed;
        m.inputs = inputs_;
        m.summary = std::move(summary);
        // Hash paths relative to the final location.
        for (auto h : hash_tree(staging_, staging_))
            m.outputs.push_back({stage_ + "/" + h.path, h.sha256});
        m.wall_seconds = std::chrono::duration<double>(Clock::now() - started_).count();
        io::write_file_atomic(staging_ / manifest_file, to_json(m).dump(1) + "\n");
        fs::remove_all(final_);
        fs::rename(staging_, final_);
        committed_ = true;
        return m;
    }

private:
    const PipelineConfig& config_;
    std::string stage_;
    fs::path final_, staging_;
    std::vector<ArtifactHash> inputs_;
    Clock::time_point started_;
    bool committed_ = false;
};

LabeledDataset normalized(const DatasetContainer& c, Split s)
{
    if (!c.normalization)
        throw FormatError("dataset container has no normalization statistics");
    return c.normalization->applied(c.split(s));
}

ArchitectureDescriptor descriptor_for(const PipelineConfig& config, const DatasetContainer& c)
{
    ArchitectureDescriptor d = config.model;
    d.channels = c.channels;
    d.length = c.length;
    d.class_count = static_cast<int>(c.class_names.size());
    validate(d);
    return d;
}

json histogram_json(const LabeledDataset& ds)
{
    json out = json::object();
    const auto h = class_histogram(ds);
    for (int c = 0; c < ds.class_count(); ++c)
        out[ds.class_names[static_cast<std::size_t>(c)]] = h.count(c);
    return out;
}

std::string histogram_table(const DatasetContainer& c)
{
    std::string out = "class";
    std::vector<Split> splits;
    for (const auto& [s, ds] : c.splits) {
        splits.push_back(s);
        out += "\t" + to_string(s);
    }
    out += "\ttotal\n";
    for (std::size_t k = 0; k < c.class_names.size(); ++k) {
        out += c.class_names[k];
        std::int64_t total = 0;
        for (auto s : splits) {
            const auto n = class_histogram(c.split(s)).count(static_cast<int>(k));
            total += n;
            out += "\t" + std::to_string(n);
        }
        out += "\t" + std::to_string(total) + "\n";
    }
    return out;
}

std::vector<plot::Series> window_series(const Matrix& w)
{
    std::vector<plot::Series> out;
    const char* axis[] = {"x", "y", "z"};
    for (Eigen::Index c = 0; c < w.rows(); ++c) {
        plot::Series s{c < 3 ? axis[c] : "ch" + std::to_string(c), {}};
        for (Eigen::Index t = 0; t < w.cols(); ++t)
            s.y.push_back(w(c, t));
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

Pipeline::Pipeline(PipelineConfig config, std::ostream& log) : config_(std::move(config)), log_(log)
{
    config_.validate();
}

RunManifest Pipeline::verified_manifest(const std::string& stage) const
{
    const auto path = stage_dir(stage) / manifest_file;
    if (!fs::exists(path))
        throw MissingArtifactError("stage '" + stage + "' has no output in " + out().string() + "; run `bsdgan " +
                                   stage + "` first");
    json j;
    try {
        j = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw MissingArtifactError("unreadable manifest " + path.string() + ": " + e.what());
    }
    auto m = manifest_from_json(j);
    if (m.status != "ok")
        throw MissingArtifactError("stage '" + stage + "' finished with status " + m.status + "; rerun `bsdgan " +
                                   stage + "`");
    for (const auto& h : m.outputs) {
        const auto file = out() / h.path;
        if (!fs::exists(file))
            throw MissingArtifactError("artifact " + file.string() + " listed by stage '" + stage +
                                       "' is missing; rerun `bsdgan " + stage + "`");
        if (io::sha256_file(file) != h.sha256)
            throw MissingArtifactError("artifact " + file.string() + " no longer matches the hash recorded by stage '" +
                                       stage + "'; rerun `bsdgan " + stage + "`");
    }
    return m;
}

void Pipeline::publish_dataset(const DatasetContainer& container, const Warnings& warnings)
{
    StageWriter stage(config_, "prepare");
    save_container(container, stage.dir());
    stage.write("histogram.tsv", histogram_table(container));
    std::vector<std::pair<std::string, double>> slices;
    std::map<std::string, std::int64_t> totals;
    for (std::size_t k = 0; k < container.class_names.size(); ++k) {
        std::int64_t n = 0;
        for (const auto& [s, ds] : container.splits)
            n += class_histogram(ds).count(static_cast<int>(k));
        slices.emplace_back(container.class_names[k], static_cast<double>(n));
        totals[container.class_names[k]] = n;
    }
    stage.write("distribution.svg", plot::pie_chart("Class distribution", slices));
    json summary{{"classes", container.class_names},
                 {"channels", container.channels},
                 {"length", container.length},
                 {"totals", totals},
                 {"warnings", warnings}};
    for (const auto& [s, ds] : container.splits)
        summary["splits"][to_string(s)] = histogram_json(ds);
    std::int64_t total = 0;
    for (const auto& [name, n] : totals)
        total += n;
    summary["windows"] = total;
    stage.commit(summary);
    for (const auto& w : warnings)
        log_ << "warning: " << w << "\n";
    log_ << "prepare: " << total << " windows, " << container.class_names.size() << " classes\n";
}

void Pipeline::prepare()
{
    if (config_.data_kind == DataKind::toy) {
        toy_data();
        return;
    }
    Warnings warnings;
    LabeledDataset all;
    if (config_.data_kind == DataKind::wisdm) {
        if (!fs::exists(config_.data_path))
            throw MissingArtifactError("WISDM raw file not found: " + config_.data_path);
        auto table = parse_wisdm_raw(config_.data_path);
        warnings = table.warnings;
        if (table.skipped)
            warnings.push_back("skipped " + std::to_string(table.skipped) + " malformed records");
        all = window(table.rows, config_.window_length, config_.window_stride, &warnings);
    } else {
        if (!fs::exists(config_.data_path))
            throw MissingArtifactError("UniMiB-SHAR directory not found: " + config_.data_path);
        all = parse_unimib(config_.data_path);
    }
    if (all.empty())
        throw IngestionError("no windows produced from " + config_.data_path);
    auto parts = stratified_split(all, config_.split_fractions, config_.split_seed(), &warnings);
    DatasetContainer c;
    c.class_names = all.class_names;
    c.channels = all.channels();
    c.length = all.length();
    c.seed = config_.seed;
    c.normalization = fit_normalization(parts.train, &warnings);
    c.splits[Split::train] = std::move(parts.train);
    if (!parts.val.empty())
        c.splits[Split::val] = std::move(parts.val);
    if (!parts.test.empty())
        c.splits[Split::test] = std::move(parts.test);
    publish_dataset(c, warnings);
}

void Pipeline::toy_data()
{
    ToyConfig toy = config_.toy;
    toy.seed = config_.split_seed();
    auto data = make_toy(toy);
    Warnings warnings;
    DatasetContainer c;
    c.class_names = data.train.class_names;
    c.channels = data.train.channels();
    c.length = data.train.length();
    c.seed = config_.seed;
    c.normalization = fit_normalization(data.train, &warnings);
    c.splits[Split::train] = std::move(data.train);
    c.splits[Split::val] = std::move(data.val);
    c.splits[Split::test] = std::move(data.test);
    publish_dataset(c, warnings);
}

void Pipeline::pretrain()
{
    const auto prep = verified_manifest("prepare");
    const auto container = load_container(stage_dir("prepare"));
    if (!container.has(Split::val))
        throw MissingArtifactError("the prepared dataset has no val split");
    StageWriter stage(config_, "pretrain");
    stage.consume(prep);
    const auto train = normalized(container, Split::train);
    const auto val = normalized(container, Split::val);
    const auto desc = descriptor_for(config_, container);
    PretrainConfig pc = config_.pretrain;
    pc.seed = config_.pretrain_seed();
    log_ << "pretrain: " << train.size() << " train / " << val.size() << " val windows, " << pc.epochs
         << " epochs\n";
    const auto result = train_autoencoder(train, val, desc, pc);
    const auto& r = result.report;
    json report{{"initial_train_mae", r.initial_train_mae},
                {"initial_val_mae", r.initial_val_mae},
                {"train_mae", r.train_mae},
                {"val_mae", r.val_mae},
                {"epochs_run", r.epochs_run},
                {"best_epoch", r.best_epoch},
                {"diverged", r.diverged},
                {"seed", r.seed}};
    stage.write("pretrain_report.json", report.dump(1) + "\n");
    std::vector<plot::Series> curves{{"train MAE", r.train_mae}, {"val MAE", r.val_mae}};
    stage.write("mae_curve.svg", plot::line_chart("Autoencoder reconstruction MAE", curves, "epoch", "MAE"));
    if (r.diverged) {
        stage.commit(report, "diverged");
        throw TrainingError("autoencoder pretraining diverged after " + std::to_string(r.epochs_run) +
                            " epochs; report kept in " + stage_dir("pretrain").string());
    }
    const auto prior = fit_latent_prior(result.autoencoder.encoder, train);
    save_checkpoint(result.autoencoder.encoder, stage.dir(), "encoder");
    save_checkpoint(result.autoencoder.decoder, stage.dir(), "decoder");
    save_prior(prior, stage.dir());
    const double final_mae = reconstruction_mae(result.autoencoder, train);
    report["final_train_mae"] = final_mae;
    report["mae_ratio"] = r.initial_train_mae > 0 ? final_mae / r.initial_train_mae : 0.0;
    stage.commit(report);
    log_ << "pretrain: train MAE " << r.initial_train_mae << " -> " << final_mae << "\n";
}

void Pipeline::train(bool resume)
{
    const auto prep = verified_manifest("prepare");
    const auto pre = verified_manifest("pretrain");
    const auto container = load_container(stage_dir("prepare"));
    const auto train_set = normalized(container, Split::train);
    const auto dir = stage_dir("train");
    const auto ckpt_root = dir / "checkpoints";
    TrainConfig tc = config_.train;
    tc.seed = config_.gan_seed();

    GanTrainState state;
    bool resumed = false;
    if (resume && fs::exists(ckpt_root / "latest")) {
        const auto latest = trim(io::read_file(ckpt_root / "latest"));
        const auto ckpt = ckpt_root / latest;
        if (!fs::exists(ckpt / manifest_file))
            throw MissingArtifactError("checkpoint " + ckpt.string() + " is incomplete");
        const auto m = manifest_from_json(json::parse(io::read_file(ckpt / manifest_file)));
        for (const auto& h : m.outputs)
            if (io::sha256_file(out() / h.path) != h.sha256)
                throw MissingArtifactError("checkpoint file " + h.path + " does not match its hash");
        state = load_gan_state(ckpt, tc.adam);
        resumed = true;
        log_ << "train: resuming at epoch " << state.epoch << ", step " << state.step << "\n";
    } else {
        fs::remove_all(dir);
        const auto encoder = load_checkpoint(stage_dir("pretrain"), "encoder");
        const auto decoder = load_checkpoint(stage_dir("pretrain"), "decoder");
        const auto prior = load_prior(stage_dir("pretrain"));
        state = init_gan_state(encoder, decoder, prior, tc);
    }
    fs::create_directories(ckpt_root);
    // A finished manifest no longer describes the directory once training continues.
    fs::remove(dir / manifest_file);

    const auto started = Clock::now();
    auto save_epoch = [&](const GanTrainState& s) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04d", s.epoch);
        const auto ckpt = ckpt_root / name;
        save_gan_state(s, ckpt);
        RunManifest m;
        m.stage = "train-checkpoint";
        m.config_hash = config_.hash();
        m.config_text = config_.canonical();
        m.seed = config_.seed;
        m.outputs = hash_tree(ckpt, out());
        m.summary = {{"epoch", s.epoch}, {"step", s.step}};
        io::write_file_atomic(ckpt / manifest_file, to_json(m).dump(1) + "\n");
        io::write_file_atomic(ckpt_root / "latest", std::string(name) + "\n");
        const auto& last = s.history.empty() ? LossRecord{} : s.history.back();
        log_ << "train: epoch " << s.epoch << " step " << s.step << " d_loss " << last.d_loss << " g_loss "
             << last.g_loss << "\n";
    };
    if (!resumed && state.epoch == 0)
        save_epoch(state);

    std::string status = "ok";
    std::string failure;
    try {
        run_gan_epochs(state, train_set, tc, save_epoch);
    } catch (const TrainingError& e) {
        status = "failed";
        failure = e.what();
    }

    double max_abs = 0;
    for (const auto& r : state.history)
        max_abs = std::max({max_abs, std::abs(r.d_loss), std::abs(r.g_loss)});
    io::write_file_atomic(dir / "loss_curve.tsv", loss_curve_table(state.history));
    std::vector<plot::Series> curves{{"discriminator", {}}, {"generator", {}}};
    for (const auto& r : state.history) {
        curves[0].y.push_back(r.d_loss);
        curves[1].y.push_back(r.g_loss);
    }
    io::write_file_atomic(dir / "loss_curve.svg", plot::line_chart("Adversarial losses", curves, "step", "loss"));
    if (status == "ok") {
        save_checkpoint(state.generator, dir, "generator");
        save_checkpoint(state.discriminator, dir, "discriminator");
    }
    RunManifest m;
    m.stage = "train";
    m.status = status;
    m.config_hash = config_.hash();
    m.config_text = config_.canonical();
    m.seed = config_.seed;
    m.inputs = prep.outputs;
    m.inputs.insert(m.inputs.end(), pre.outputs.begin(), pre.outputs.end());
    m.outputs = hash_tree(dir, out());
    m.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
    m.summary = {{"epochs", state.epoch}, {"steps", state.step}, {"max_abs_loss", max_abs}, {"resumed", resumed}};
    if (!state.history.empty())
        m.summary["final"] = {{"d_loss", state.history.back().d_loss}, {"g_loss", state.history.back().g_loss}};
    if (!failure.empty())
        m.summary["error"] = failure;
    io::write_file_atomic(dir / manifest_file, to_json(m).dump(1) + "\n");
    if (status != "ok")
        throw TrainingError(failure + "; last good checkpoint kept under " + ckpt_root.string());
    log_ << "train: " << state.step << " steps, max |loss| " << max_abs << "\n";
}

void Pipeline::balance()
{
    const auto prep = verified_manifest("prepare");
    const auto tr = verified_manifest("train");
    const auto container = load_container(stage_dir("prepare"));
    const auto generator = load_checkpoint(stage_dir("train"), "generator");
    const auto discriminator = load_checkpoint(stage_dir("train"), "discriminator");
    StageWriter stage(config_, "balance");
    stage.consume(prep);
    stage.consume(tr);
    const auto train = normalized(container, Split::train);
    BalanceConfig bc = config_.balance;
    bc.seed = config_.balance_seed();
    auto result = bsdgan::balance(train, generator, discriminator, bc);

    // Export in raw units: real windows are taken unchanged from the container.
    LabeledDataset exported = container.split(Split::train);
    LabeledDataset synthetic_raw = container.normalization->inverted(result.synthetic);
    for (std::size_t i = 0; i < synthetic_raw.size(); ++i) {
        exported.windows.push_back(synthetic_raw.windows[i]);
        exported.labels.push_back(synthetic_raw.labels[i]);
    }
    export_balanced(container, exported, stage.dir());
    stage.write("balance_report.json", to_json(result.report).dump(1) + "\n");
    stage.write("balance_table.tsv", balance_table(result.report));

    std::vector<std::pair<std::string, std::vector<plot::Series>>> panels;
    for (int c = 0; c < train.class_count(); ++c) {
        const auto& name = train.class_names[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < exported.size(); ++i)
            if (exported.labels[i] == c && !exported.windows[i].synthetic) {
                panels.push_back({name + " (real)", window_series(exported.windows[i].values)});
                break;
            }
        for (std::size_t i = 0; i < synthetic_raw.size(); ++i)
            if (synthetic_raw.labels[i] == c) {
                panels.push_back({name + " (generated)", window_series(synthetic_raw.windows[i].values)});
                break;
            }
    }
    stage.write("signals.svg", plot::panel_grid(panels, 2));
    stage.commit(to_json(result.report));
    log_ << balance_table(result.report);
    for (const auto* f : result.report.failures())
        log_ << "warning: balancing class " << f->name << " failed: " << f->note << "\n";
}

void Pipeline::evaluate_fid()
{
    const auto prep = verified_manifest("prepare");
    const auto pre = verified_manifest("pretrain");
    const auto tr = verified_manifest("train");
    const auto container = load_container(stage_dir("prepare"));
    if (!container.has(Split::val))
        throw MissingArtifactError("the prepared dataset has no val split");
    Autoencoder ae{load_checkpoint(stage_dir("pretrain"), "encoder"), load_checkpoint(stage_dir("pretrain"), "decoder")};
    const auto generator = load_checkpoint(stage_dir("train"), "generator");
    const auto discriminator = load_checkpoint(stage_dir("train"), "discriminator");
    StageWriter stage(config_, "evaluate-fid");
    stage.consume(prep);
    stage.consume(pre);
    stage.consume(tr);
    const auto train = normalized(container, Split::train);
    const auto val = normalized(container, Split::val);

    // Generated windows: n_c per class, verified like balancing output unless disabled.
    LabeledDataset generated;
    generated.class_names = train.class_names;
    const auto gen = network_generator(generator);
    const auto accept_all = [](const Tensor& b, int) { return std::vector<bool>(static_cast<std::size_t>(b.batch()), true); };
    const auto verifier = config_.fid_verify ? network_verifier(discriminator) : WindowVerifier(accept_all);
    const auto hist = class_histogram(train);
    json generation = json::array();
    for (int c = 0; c < train.class_count(); ++c) {
        const auto wanted = hist.count(c);
        Rng rng = class_rng(config_.fid_seed(), c);
        const std::int64_t budget = config_.balance.attempts_per_deficit * std::max<std::int64_t>(wanted, 1);
        auto batch = generate_verified(gen, verifier, c, wanted, budget, config_.balance.gen_batch, rng);
        generation.push_back({{"class", train.class_names[static_cast<std::size_t>(c)]},
                              {"wanted", wanted},
                              {"accepted", batch.windows.size()},
                              {"attempts", batch.attempts}});
        for (auto& w : batch.windows) {
            generated.windows.push_back({std::move(w), std::nullopt, synthetic_id_base + generated.size(), true});
            generated.labels.push_back(c);
        }
    }
    const FeatureExtractor extractor(ae.encoder);
    const auto report = fid_protocol(generated, train, val, ae, extractor, config_.fid);
    auto j = to_json(report);
    j["generation"] = generation;
    j["verified"] = config_.fid_verify;
    stage.write("fid_report.json", j.dump(1) + "\n");
    stage.write("fid_table.tsv", fid_table(report));
    stage.commit(j);
    log_ << fid_table(report);
    for (const auto& w : report.warnings)
        log_ << "warning: " << w << "\n";
}

void Pipeline::benchmark()
{
    const auto prep = verified_manifest("prepare");
    const auto bal = verified_manifest("balance");
    const auto container = load_container(stage_dir("prepare"));
    const auto balanced_container = load_container(stage_dir("balance"));
    if (!container.has(Split::val) || !container.has(Split::test))
        throw MissingArtifactError("the prepared dataset needs val and test splits for benchmarking");
    StageWriter stage(config_, "benchmark");
    stage.consume(prep);
    stage.consume(bal);
    const auto& stats = *container.normalization;
    const auto imbalanced = stats.applied(container.split(Split::train));
    const auto balanced = stats.applied(balanced_container.split(Split::train));
    const auto val = stats.applied(container.split(Split::val));
    const auto test = stats.applied(container.split(Split::test));
    BenchmarkConfig bc;
    bc.models = config_.benchmark_models;
    bc.seeds = config_.benchmark_seeds();
    bc.options = config_.classifier;
    log_ << "benchmark: " << bc.models.size() << " model(s) x " << bc.seeds.size() << " seed(s) x 2 variants\n";
    const auto report = bsdgan::benchmark(imbalanced, balanced, val, test, bc);
    const auto j = to_json(report);
    stage.write("benchmark_report.json", j.dump(1) + "\n");
    stage.write("benchmark_table.tsv", benchmark_table(report));
    stage.commit({{"runs", report.runs.size()}, {"split_sizes", report.split_sizes}});
    log_ << benchmark_table(report);
    for (const auto& r : report.runs)
        if (r.failed)
            log_ << "warning: " << to_string(r.model) << " (" << r.variant << ", seed " << r.seed
                 << ") failed: " << r.error << "\n";
}

void Pipeline::report()
{
    std::vector<std::string> missing;
    std::map<std::string, RunManifest> manifests;
    for (const auto& s : stages) {
        if (s == "report")
            continue;
        try {
            manifests[s] = verified_manifest(s);
        } catch (const MissingArtifactError& e) {
            missing.push_back(s);
        }
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& s : missing)
            list += (list.empty() ? "" : ", ") + s;
        throw MissingArtifactError("report needs the outputs of: " + list);
    }
    StageWriter stage(config_, "report");
    for (const auto& [s, m] : manifests)
        stage.consume(m);

    const auto container = load_container(stage_dir("prepare"));
    const auto balanced = load_container(stage_dir("balance"));
    const auto fid = json::parse(io::read_file(stage_dir("evaluate-fid") / "fid_report.json"));
    const auto bench = benchmark_from_json(json::parse(io::read_file(stage_dir("benchmark") / "benchmark_report.json")));
    const auto pre = json::parse(io::read_file(stage_dir("pretrain") / "pretrain_report.json"));
    const auto bal = json::parse(io::read_file(stage_dir("balance") / "balance_report.json"));

    std::ostringstream md;
    md << "# BSDGAN run report\n\nSeed " << config_.seed << ", config hash `" << config_.hash().substr(0, 16)
       << "`.\n\n";
    md << "## Data amount (train split)\n\n| | ";
    for (const auto& n : container.class_names)
        md << n << " | ";
    md << "\n|---|";
    for (std::size_t i = 0; i < container.class_names.size(); ++i)
        md << "---|";
    for (const auto* which : {&container, &balanced}) {
        md << "\n| " << (which == &container ? "imbalanced" : "balanced") << " | ";
        const auto h = class_histogram(which->split(Split::train));
        for (std::size_t i = 0; i < container.class_names.size(); ++i)
            md << h.count(static_cast<int>(i)) << " | ";
    }
    md << "\n\n## Autoencoder\n\nTrain MAE " << pre.value("initial_train_mae", 0.0) << " -> "
       << pre.value("final_train_mae", 0.0) << " over " << pre.value("epochs_run", 0) << " epochs (best epoch "
       << pre.value("best_epoch", 0) << ").\n\n";
    const auto& ts = manifests["train"].summary;
    md << "## Adversarial training\n\n" << ts.value("steps", 0) << " steps over " << ts.value("epochs", 0)
       << " epochs, max |loss| " << ts.value("max_abs_loss", 0.0) << ". Curves: `train/loss_curve.svg`.\n\n";
    md << "## Balancing\n\n| class | before | generated | attempts | acceptance | status |\n|---|---|---|---|---|---|\n";
    for (const auto& c : bal.at("classes"))
        md << "| " << c.at("name").get<std::string>() << " | " << c.at("initial").get<std::int64_t>() << " | "
           << c.at("generated").get<std::int64_t>() << " | " << c.at("attempts").get<std::int64_t>() << " | "
           << c.at("acceptance_rate").get<double>() << " | "
           << (c.at("failed").get<bool>() ? "failed: " + c.at("note").get<std::string>() : std::string("ok")) << " |\n";
    md << "\n## FID (lower is better)\n\n| class | real data | BSDGAN | autoencoder |\n|---|---|---|---|\n";
    auto cell = [](const json& v) {
        char buf[32];
        if (v.is_null())
            return std::string("-");
        std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
        return std::string(buf);
    };
    for (const auto& c : fid.at("classes"))
        md << "| " << c.at("name").get<std::string>() << " | " << cell(c.at("best")) << " | "
           << cell(c.at("generated")) << " | " << cell(c.at("worst")) << " |\n";
    md << "\n## Classifier benchmark (per-class recall, overall accuracy)\n\n```\n" << benchmark_table(bench)
       << "```\n";
    stage.write("report.md", md.str());

    json j{{"histograms",
            {{"imbalanced", histogram_json(container.split(Split::train))},
             {"balanced", histogram_json(balanced.split(Split::train))}}},
           {"pretrain", pre},
           {"train", ts},
           {"balance", bal},
           {"fid", fid},
           {"benchmark", to_json(bench)}};
    stage.write("report.json", j.dump(1) + "\n");
    stage.commit({{"stages", stages.size() - 1}});
    log_ << md.str();
}

void Pipeline::run(const std::string& command, bool resume)
{
    DirectoryLock lock(out());
    if (command == "prepare")
        prepare();
    else if (command == "toy-data")
        toy_data();
    else if (command == "pretrain")
        pretrain();
    else if (command == "train")
        train(resume);
    else if (command == "balance")
        balance();
    else if (command == "evaluate-fid")
        evaluate_fid();
    else if (command == "benchmark")
        benchmark();
    else if (command == "report")
        report();
    else
        throw ConfigError("unknown command '" + command + "'");
}

} // namespace bsdgan
