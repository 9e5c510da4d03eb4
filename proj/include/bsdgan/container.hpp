#pragma once

#include "bsdgan/dataset.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

namespace bsdgan {

/**
 * On-disk dataset: `dataset.json` (class names, shape, seed, normalization,
 * per-split labels / ids / provenance flags and blob byte lengths) plus one
 * `<split>.f32` blob per split holding little-endian float32 values in
 * row-major [N x channels x length] order.
 */
struct DatasetContainer {
    std::vector<std::string> class_names;
    int channels = 0;
    int length = 0;
    std::uint64_t seed = 0;
    std::optional<NormalizationStats> normalization;
    std::map<Split, LabeledDataset> splits;

    bool has(Split s) const { return splits.count(s) != 0; }
    const LabeledDataset& split(Split s) const;
};

inline constexpr const char* container_manifest_name = "dataset.json";

/// Returns the files written, manifest last.
std::vector<std::filesystem::path> save_container(const DatasetContainer& container, const std::filesystem::path& dir);

/// Validates blob lengths, shapes and labels against the manifest.
DatasetContainer load_container(const std::filesystem::path& dir);

} // namespace bsdgan
