#pragma once

#include "bsdgan/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bsdgan {

using Warnings = std::vector<std::string>;

enum class Split { none, train, val, test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

/// One fixed-shape [channels x length] slice of accelerometer samples (m/s^2 for real data).
struct SensorWindow {
    Matrix values;
    std::optional<std::string> source_id;
    /// Stable identity; splits of one dataset never share an id.
    std::uint64_t id = 0;
    bool synthetic = false;
};

struct LabeledDataset {
    std::vector<SensorWindow> windows;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    Split split = Split::none;

    std::size_t size() const { return windows.size(); }
    bool empty() const { return windows.empty(); }
    int channels() const;
    int length() const;
    int class_count() const { return static_cast<int>(class_names.size()); }

    /// Throws FormatError on misaligned labels, out-of-range labels, mixed shapes or non-finite values.
    void validate() const;

    LabeledDataset subset(const std::vector<std::size_t>& indices) const;

    /// Stacks the selected windows (all when `indices` is empty) into a [channels, N*length] batch.
    Tensor to_tensor(const std::vector<std::size_t>& indices = {}) const;
    std::vector<int> labels_of(const std::vector<std::size_t>& indices) const;
};

struct ClassHistogram {
    std::map<int, std::int64_t> counts;

    std::int64_t total() const;
    std::int64_t max_count() const;
    std::int64_t min_count() const;
    std::int64_t count(int label) const;
};

ClassHistogram class_histogram(const LabeledDataset& ds);

// WISDM raw log ---------------------------------------------------------------

struct RawRow {
    std::string user;
    std::string activity;
    std::int64_t timestamp = 0;
    double x = 0, y = 0, z = 0;
};

struct RawTable {
    std::vector<RawRow> rows;
    std::size_t skipped = 0;
    Warnings warnings;
};

/// Fraction of malformed records above which parsing emits a warning.
inline constexpr double malformed_warning_fraction = 0.05;

/// Parses `user,activity,timestamp,x,y,z;` records. Malformed records are skipped and counted.
RawTable parse_wisdm_raw(const std::filesystem::path& path);
RawTable parse_wisdm_text(const std::string& text);

/**
 * Slices raw rows into windows.
 *
 * Rows are grouped into runs of consecutive rows sharing (user, activity);
 * windows start every `stride` rows inside a run and partial tails are
 * dropped, so no window ever straddles two runs. Class indices follow the
 * alphabetical order of activity names.
 */
LabeledDataset window(const std::vector<RawRow>& rows, int length, int stride, Warnings* warnings = nullptr);

// UniMiB-SHAR ------------------------------------------------------------------

inline constexpr int unimib_length = 151;

/// ADL activity names in the archive's 1-based label order.
const std::vector<std::string>& unimib_adl_names();

/**
 * Loads a CSV export of the UniMiB-SHAR ADL archive from `dir`:
 * `adl_data.csv` (one instance per row: 151 x, then 151 y, then 151 z values),
 * `adl_labels.csv` (class, subject, trial; class is 1-based) and an optional
 * `adl_names.csv` (one activity name per line).
 */
LabeledDataset parse_unimib(const std::filesystem::path& dir);

// Normalization ------------------------------------------------------------------

inline constexpr double normalization_std_floor = 1e-8;

struct NormalizationStats {
    Vector mean;
    Vector std;

    void apply(Matrix& window) const;
    void invert(Matrix& window) const;
    void apply(Tensor& batch) const;
    void invert(Tensor& batch) const;
    LabeledDataset applied(const LabeledDataset& ds) const;
    LabeledDataset inverted(const LabeledDataset& ds) const;
};

/// Per-channel z-score statistics over every sample of every window in `train`.
NormalizationStats fit_normalization(const LabeledDataset& train, Warnings* warnings = nullptr);

// Splitting ------------------------------------------------------------------------

struct SplitDatasets {
    LabeledDataset train;
    LabeledDataset val;
    LabeledDataset test;
};

/**
 * Per-class shuffled split. Each class contributes round(f * n) windows to
 * train and val and the remainder to test; classes too small to populate every
 * non-empty split go entirely to train.
 */
SplitDatasets stratified_split(const LabeledDataset& ds, std::array<double, 3> fractions, std::uint64_t seed,
                               Warnings* warnings = nullptr);

} // namespace bsdgan
