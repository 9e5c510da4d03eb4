#include "bsdgan/container.hpp"

#include "bsdgan/errors.hpp"
#include "bsdgan/io.hpp"

#include <json.hpp>

namespace bsdgan {

using nlohmann::json;

const LabeledDataset& DatasetContainer::split(Split s) const
{
    auto it = splits.find(s);
    if (it == splits.end())
        throw MissingArtifactError("dataset container has no '" + to_string(s) + "' split");
    return it->second;
}

std::vector<std::filesystem::path> save_container(const DatasetContainer& c, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    json manifest;
    manifest["format"] = "bsdgan-dataset";
    manifest["version"] = 1;
    manifest["class_names"] = c.class_names;
    manifest["channels"] = c.channels;
    manifest["length"] = c.length;
    manifest["seed"] = c.seed;
    if (c.normalization) {
        manifest["normalization"]["mean"] = std::vector<double>(c.normalization->mean.begin(), c.normalization->mean.end());
        manifest["normalization"]["std"] = std::vector<double>(c.normalization->std.begin(), c.normalization->std.end());
    } else {
        manifest["normalization"] = nullptr;
    }
    manifest["splits"] = json::object();
    for (const auto& [split, ds] : c.splits) {
        ds.validate();
        if (!ds.empty() && (ds.channels() != c.channels || ds.length() != c.length))
            throw FormatError("split '" + to_string(split) + "' shape differs from container shape");
        std::vector<double> flat;
        flat.reserve(ds.size() * static_cast<std::size_t>(c.channels * c.length));
        json ids = json::array(), synthetic = json::array(), sources = json::array();
        for (const auto& w : ds.windows) {
            for (int ch = 0; ch < c.channels; ++ch)
                for (int t = 0; t < c.length; ++t)
                    flat.push_back(w.values(ch, t));
            ids.push_back(w.id);
            synthetic.push_back(w.synthetic ? 1 : 0);
            sources.push_back(w.source_id ? json(*w.source_id) : json(nullptr));
        }
        const std::string blob = io::encode_f32(flat);
        const auto file = to_string(split) + ".f32";
        io::write_file_atomic(dir / file, blob);
        written.push_back(dir / file);
        json entry;
        entry["file"] = file;
        entry["count"] = ds.size();
        entry["bytes"] = blob.size();
        entry["labels"] = ds.labels;
        entry["ids"] = std::move(ids);
        entry["synthetic"] = std::move(synthetic);
        entry["source_ids"] = std::move(sources);
        manifest["splits"][to_string(split)] = std::move(entry);
    }
    io::write_file_atomic(dir / container_manifest_name, manifest.dump(1) + "\n");
    written.push_back(dir / container_manifest_name);
    return written;
}

DatasetContainer load_container(const std::filesystem::path& dir)
{
    const auto manifest_path = dir / container_manifest_name;
    if (!std::filesystem::exists(manifest_path))
        throw MissingArtifactError("no dataset container at " + dir.string());
    json m;
    try {
        m = json::parse(io::read_file(manifest_path));
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    if (m.value("format", "") != "bsdgan-dataset")
        throw FormatError(manifest_path.string() + " is not a dataset manifest");
    try {
        DatasetContainer c;
        c.class_names = m.at("class_names").get<std::vector<std::string>>();
        c.channels = m.at("channels").get<int>();
        c.length = m.at("length").get<int>();
        c.seed = m.at("seed").get<std::uint64_t>();
        if (!m.at("normalization").is_null()) {
            const auto mean = m["normalization"].at("mean").get<std::vector<double>>();
            const auto sd = m["normalization"].at("std").get<std::vector<double>>();
            NormalizationStats stats;
            stats.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
            stats.std = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
            c.normalization = std::move(stats);
        }
        for (const auto& [name, entry] : m.at("splits").items()) {
            const Split split = split_from_string(name);
            const std::string blob = io::read_file(dir / entry.at("file").get<std::string>());
            const auto count = entry.at("count").get<std::size_t>();
            if (blob.size() != entry.at("bytes").get<std::size_t>() ||
                blob.size() != count * static_cast<std::size_t>(c.channels * c.length) * sizeof(float))
                throw FormatError("split '" + name + "': blob has " + std::to_string(blob.size()) +
                                  " bytes, manifest expects " + std::to_string(entry.at("bytes").get<std::size_t>()));
            const auto values = io::decode_f32(blob);
            const auto labels = entry.at("labels").get<std::vector<int>>();
            const auto& ids = entry.at("ids");
            const auto& synthetic = entry.at("synthetic");
            const auto& sources = entry.at("source_ids");
            if (labels.size() != count || ids.size() != count || synthetic.size() != count || sources.size() != count)
                throw FormatError("split '" + name + "': per-window columns disagree with count");
            LabeledDataset ds;
            ds.class_names = c.class_names;
            ds.split = split;
            ds.labels = labels;
            ds.windows.resize(count);
            std::size_t k = 0;
            for (std::size_t i = 0; i < count; ++i) {
                auto& w = ds.windows[i];
                w.values.resize(c.channels, c.length);
                for (int ch = 0; ch < c.channels; ++ch)
                    for (int t = 0; t < c.length; ++t)
                        w.values(ch, t) = values[k++];
                w.id = ids[i].get<std::uint64_t>();
                w.synthetic = synthetic[i].get<int>() != 0;
                if (!sources[i].is_null())
                    w.source_id = sources[i].get<std::string>();
            }
            ds.validate();
            c.splits.emplace(split, std::move(ds));
        }
        return c;
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
}

} // namespace bsdgan
