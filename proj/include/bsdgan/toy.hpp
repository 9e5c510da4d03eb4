#pragma once

#include "bsdgan/dataset.hpp"

#include <array>
#include <cstdint>

namespace bsdgan {

/// Classes in index order.
inline const std::array<const char*, 3> toy_class_names{"burst", "sine", "square"};

/**
 * Three waveform classes on three channels sharing a slow base oscillation
 * with random frequency, phase and amplitude: "burst" adds a band-limited
 * packet at a random position to a damped base sine, "sine" is the base
 * alone and "square" a softened square wave. Gaussian noise is added last.
 */
struct ToyConfig {
    int length = 32;
    /// Train counts for burst, sine, square.
    std::array<int, 3> train_counts{20, 500, 100};
    /// Held-out real windows per class in val and test.
    int val_per_class = 100;
    int test_per_class = 100;
    double noise = 0.05;
    std::uint64_t seed = 0;
};

struct ToyData {
    LabeledDataset train;
    LabeledDataset val;
    LabeledDataset test;
};

/// `counts[c]` windows of class c; ids start at `first_id`.
LabeledDataset toy_windows(const std::array<int, 3>& counts, int length, double noise, std::uint64_t seed,
                           std::uint64_t first_id = 0);

ToyData make_toy(const ToyConfig& config);

} // namespace bsdgan
