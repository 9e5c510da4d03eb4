#include "bsdgan/dataset.hpp"

#include "bsdgan/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string_view>

namespace bsdgan {
namespace {

std::string_view trim(std::string_view s)
{
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

template <class T>
bool parse_number(std::string_view s, T& out)
{
    s = trim(s);
    if (s.empty())
        return false;
    if (s.front() == '+')
        s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_fields(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

bool parse_record(std::string_view record, RawRow& row)
{
    const auto fields = split_fields(record, ',');
    if (fields.size() != 6)
        return false;
    const auto user = trim(fields[0]);
    const auto activity = trim(fields[1]);
    if (user.empty() || activity.empty())
        return false;
    if (!parse_number(fields[2], row.timestamp) || !parse_number(fields[3], row.x) ||
        !parse_number(fields[4], row.y) || !parse_number(fields[5], row.z))
        return false;
    if (!std::isfinite(row.x) || !std::isfinite(row.y) || !std::isfinite(row.z))
        return false;
    row.user.assign(user);
    row.activity.assign(activity);
    return true;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IngestionError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad())
        throw IngestionError("read failure on " + path.string());
    return ss.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path)
{
    std::vector<std::string> lines;
    std::istringstream in(read_file(path));
    for (std::string line; std::getline(in, line);) {
        auto t = trim(line);
        if (!t.empty())
            lines.emplace_back(t);
    }
    return lines;
}

} // namespace

std::string to_string(Split split)
{
    switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::none: break;
    }
    return "none";
}

Split split_from_string(const std::string& name)
{
    if (name == "train")
        return Split::train;
    if (name == "val")
        return Split::val;
    if (name == "test")
        return Split::test;
    if (name == "none")
        return Split::none;
    throw FormatError("unknown split '" + name + "'");
}

int LabeledDataset::channels() const { return windows.empty() ? 0 : static_cast<int>(windows.front().values.rows()); }

int LabeledDataset::length() const { return windows.empty() ? 0 : static_cast<int>(windows.front().values.cols()); }

void LabeledDataset::validate() const
{
    if (windows.size() != labels.size())
        throw FormatError("dataset has " + std::to_string(windows.size()) + " windows but " +
                          std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count())
            throw FormatError("window " + std::to_string(i) + " has label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(class_count()) + ")");
        const auto& v = windows[i].values;
        if (v.rows() != channels() || v.cols() != length())
            throw FormatError("window " + std::to_string(i) + " has shape " + std::to_string(v.rows()) + "x" +
                              std::to_string(v.cols()) + ", dataset shape is " + std::to_string(channels()) + "x" +
                              std::to_string(length()));
        if (!v.allFinite())
            throw FormatError("window " + std::to_string(i) + " contains non-finite values");
    }
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& indices) const
{
    LabeledDataset out;
    out.class_names = class_names;
    out.split = split;
    out.windows.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (auto i : indices) {
        out.windows.push_back(windows.at(i));
        out.labels.push_back(labels.at(i));
    }
    return out;
}

Tensor LabeledDataset::to_tensor(const std::vector<std::size_t>& indices) const
{
    const std::size_t n = indices.empty() ? windows.size() : indices.size();
    Tensor t(Matrix(channels(), static_cast<Eigen::Index>(n) * length()), length());
    for (std::size_t i = 0; i < n; ++i)
        t.sample(static_cast<int>(i)) = windows[indices.empty() ? i : indices[i]].values;
    return t;
}

std::vector<int> LabeledDataset::labels_of(const std::vector<std::size_t>& indices) const
{
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices)
        out.push_back(labels.at(i));
    return out;
}

std::int64_t ClassHistogram::total() const
{
    std::int64_t t = 0;
    for (const auto& [k, v] : counts)
        t += v;
    return t;
}

std::int64_t ClassHistogram::max_count() const
{
    std::int64_t m = 0;
    for (const auto& [k, v] : counts)
        m = std::max(m, v);
    return m;
}

std::int64_t ClassHistogram::min_count() const
{
    if (counts.empty())
        return 0;
    std::int64_t m = counts.begin()->second;
    for (const auto& [k, v] : counts)
        m = std::min(m, v);
    return m;
}

std::int64_t ClassHistogram::count(int label) const
{
    auto it = counts.find(label);
    return it == counts.end() ? 0 : it->second;
}

ClassHistogram class_histogram(const LabeledDataset& ds)
{
    ClassHistogram h;
    for (int label : ds.labels)
        ++h.counts[label];
    return h;
}

RawTable parse_wisdm_text(const std::string& text)
{
    RawTable table;
    std::size_t records = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos)
            end = text.size();
        const std::string_view line = trim(std::string_view(text).substr(pos, end - pos));
        pos = end + 1;
        if (line.empty())
            continue;
        // Some lines of the public log carry several ';'-terminated records.
        for (auto record : split_fields(line, ';')) {
            record = trim(record);
            if (record.empty())
                continue;
            ++records;
            RawRow row;
            if (parse_record(record, row))
                table.rows.push_back(std::move(row));
            else
                ++table.skipped;
        }
    }
    if (records > 0 && static_cast<double>(table.skipped) > malformed_warning_fraction * static_cast<double>(records))
        table.warnings.push_back(std::to_string(table.skipped) + " of " + std::to_string(records) +
                                 " records malformed (more than 5%)");
    return table;
}

RawTable parse_wisdm_raw(const std::filesystem::path& path)
{
    return parse_wisdm_text(read_file(path));
}

LabeledDataset window(const std::vector<RawRow>& rows, int length, int stride, Warnings* warnings)
{
    if (length < 1 || stride < 1)
        throw IngestionError("window length and stride must be >= 1");
    std::set<std::string> names;
    for (const auto& r : rows)
        names.insert(r.activity);
    LabeledDataset ds;
    ds.class_names.assign(names.begin(), names.end());
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < ds.class_names.size(); ++i)
        index[ds.class_names[i]] = static_cast<int>(i);

    std::size_t longest = 0;
    std::size_t begin = 0;
    while (begin < rows.size()) {
        std::size_t end = begin + 1;
        while (end < rows.size() && rows[end].user == rows[begin].user && rows[end].activity == rows[begin].activity)
            ++end;
        const std::size_t run = end - begin;
        longest = std::max(longest, run);
        for (std::size_t start = 0; start + static_cast<std::size_t>(length) <= run; start += stride) {
            SensorWindow w;
            w.values.resize(3, length);
            for (int t = 0; t < length; ++t) {
                const auto& r = rows[begin + start + static_cast<std::size_t>(t)];
                w.values(0, t) = r.x;
                w.values(1, t) = r.y;
                w.values(2, t) = r.z;
            }
            w.source_id = rows[begin].user;
            w.id = ds.windows.size();
            ds.windows.push_back(std::move(w));
            ds.labels.push_back(index.at(rows[begin].activity));
        }
        begin = end;
    }
    if (warnings && !rows.empty() && static_cast<std::size_t>(length) > longest)
        warnings->push_back("window length " + std::to_string(length) + " exceeds the longest run (" +
                            std::to_string(longest) + " rows); dataset is empty");
    return ds;
}

const std::vector<std::string>& unimib_adl_names()
{
    static const std::vector<std::string> names = {"StandingUpFS", "StandingUpFL", "Walking",
                                                   "Running",      "GoingUpS",     "Jumping",
                                                   "GoingDownS",   "LyingDownFS",  "SittingDown"};
    return names;
}

LabeledDataset parse_unimib(const std::filesystem::path& dir)
{
    const auto data_lines = read_lines(dir / "adl_data.csv");
    const auto label_lines = read_lines(dir / "adl_labels.csv");
    std::vector<std::string> archive_names = unimib_adl_names();
    if (std::filesystem::exists(dir / "adl_names.csv")) {
        archive_names.clear();
        for (const auto& line : read_lines(dir / "adl_names.csv")) {
            auto fields = split_fields(line, ',');
            archive_names.emplace_back(trim(fields.back()));
        }
    }
    if (data_lines.size() != label_lines.size())
        throw FormatError("adl_data.csv has " + std::to_string(data_lines.size()) + " instances but adl_labels.csv has " +
                          std::to_string(label_lines.size()));

    std::vector<std::string> sorted = archive_names;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> remap(archive_names.size());
    for (std::size_t i = 0; i < archive_names.size(); ++i)
        remap[i] = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), archive_names[i]) - sorted.begin());

    LabeledDataset ds;
    ds.class_names = sorted;
    ds.windows.reserve(data_lines.size());
    for (std::size_t i = 0; i < data_lines.size(); ++i) {
        const auto fields = split_fields(data_lines[i], ',');
        if (fields.size() != 3 * unimib_length)
            throw FormatError("instance " + std::to_string(i) + ": expected " + std::to_string(3 * unimib_length) +
                              " values (3 x " + std::to_string(unimib_length) + "), found " +
                              std::to_string(fields.size()));
        SensorWindow w;
        w.values.resize(3, unimib_length);
        for (int c = 0; c < 3; ++c)
            for (int t = 0; t < unimib_length; ++t)
                if (!parse_number(fields[static_cast<std::size_t>(c * unimib_length + t)], w.values(c, t)) ||
                    !std::isfinite(w.values(c, t)))
                    throw FormatError("instance " + std::to_string(i) + ": bad value at channel " + std::to_string(c) +
                                      ", sample " + std::to_string(t));
        const auto label_fields = split_fields(label_lines[i], ',');
        int cls = 0;
        if (!parse_number(label_fields[0], cls) || cls < 1 || cls > static_cast<int>(archive_names.size()))
            throw FormatError("instance " + std::to_string(i) + ": bad class label '" + label_lines[i] + "'");
        if (label_fields.size() > 1)
            w.source_id = std::string(trim(label_fields[1]));
        w.id = i;
        ds.windows.push_back(std::move(w));
        ds.labels.push_back(remap[static_cast<std::size_t>(cls - 1)]);
    }
    return ds;
}

void NormalizationStats::apply(Matrix& window) const
{
    window = ((window.colwise() - mean).array().colwise() / std.array()).matrix();
}

void NormalizationStats::invert(Matrix& window) const
{
    window = ((window.array().colwise() * std.array()).matrix().colwise() + mean);
}

void NormalizationStats::apply(Tensor& batch) const { apply(batch.data); }

void NormalizationStats::invert(Tensor& batch) const { invert(batch.data); }

LabeledDataset NormalizationStats::applied(const LabeledDataset& ds) const
{
    LabeledDataset out = ds;
    for (auto& w : out.windows)
        apply(w.values);
    return out;
}

LabeledDataset NormalizationStats::inverted(const LabeledDataset& ds) const
{
    LabeledDataset out = ds;
    for (auto& w : out.windows)
        invert(w.values);
    return out;
}

NormalizationStats fit_normalization(const LabeledDataset& train, Warnings* warnings)
{
    if (train.empty())
        throw IngestionError("cannot fit normalization on an empty dataset");
    const int c = train.channels();
    Vector sum = Vector::Zero(c);
    double count = 0;
    for (const auto& w : train.windows) {
        sum += w.values.rowwise().sum();
        count += static_cast<double>(w.values.cols());
    }
    NormalizationStats stats;
    stats.mean = sum / count;
    Vector sq = Vector::Zero(c);
    for (const auto& w : train.windows)
        sq += (w.values.colwise() - stats.mean).array().square().matrix().rowwise().sum();
    stats.std = (sq / count).cwiseSqrt();
    for (int i = 0; i < c; ++i)
        if (!(stats.std[i] > normalization_std_floor)) {
            stats.std[i] = normalization_std_floor;
            if (warnings)
                warnings->push_back("channel " + std::to_string(i) + " has zero variance; std clamped to 1e-8");
        }
    return stats;
}

SplitDatasets stratified_split(const LabeledDataset& ds, std::array<double, 3> fractions, std::uint64_t seed,
                               Warnings* warnings)
{
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9 || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0)
        throw IngestionError("split fractions must be non-negative and sum to 1");
    const int nonempty = static_cast<int>(std::count_if(fractions.begin(), fractions.end(), [](double f) { return f > 0; }));

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < ds.labels.size(); ++i)
        by_class[ds.labels[i]].push_back(i);

    std::array<std::vector<std::size_t>, 3> parts;
    for (auto& [label, idx] : by_class) {
        Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(label + 1)));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = idx.size();
        if (n < static_cast<std::size_t>(nonempty)) {
            if (warnings)
                warnings->push_back("class " + ds.class_names.at(static_cast<std::size_t>(label)) + " has only " +
                                    std::to_string(n) + " windows; all assigned to train");
            parts[0].insert(parts[0].end(), idx.begin(), idx.end());
            continue;
        }
        std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
        std::size_t n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
        // keep every non-empty split populated
        if (fractions[1] > 0 && n_val == 0)
            n_val = 1;
        if (fractions[2] > 0 && n_train + n_val >= n)
            n_train = n - n_val - 1;
        n_train = std::min(n_train, n);
        n_val = std::min(n_val, n - n_train);
        parts[0].insert(parts[0].end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        parts[1].insert(parts[1].end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                        idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
        parts[2].insert(parts[2].end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
    }
    for (auto& p : parts)
        std::sort(p.begin(), p.end());
    SplitDatasets out{ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
    out.train.split = Split::train;
    out.val.split = Split::val;
    out.test.split = Split::test;
    return out;
}

} // namespace bsdgan
