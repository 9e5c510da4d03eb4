#include "bsdgan/toy.hpp"

#include "bsdgan/errors.hpp"

#include <array>
#include <cmath>
#include <numbers>

namespace bsdgan {

namespace {

Matrix toy_window(int label, int length, double noise, Rng& rng)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double two_pi = 2.0 * std::numbers::pi;
    Matrix w(3, length);
    const double cycles = 2.0 + unit(rng);
    const double phase = 0.5 * std::numbers::pi * unit(rng);
    const double amp = 0.8 + 0.6 * unit(rng);
    const double centre = length * (0.3 + 0.4 * unit(rng));
    const double width = length * (0.06 + 0.06 * unit(rng));
    // Burst carrier: a few random components between 4 and 8 cycles per window, so the noise is band-limited.
    constexpr int components = 3;
    std::array<double, components> freq{}, phases{};
    for (int j = 0; j < components; ++j) {
        freq[static_cast<std::size_t>(j)] = 4.0 + 4.0 * unit(rng);
        phases[static_cast<std::size_t>(j)] = two_pi * unit(rng);
    }
    for (int c = 0; c < 3; ++c) {
        std::array<double, components> weight{};
        for (auto& a : weight)
            a = gauss(rng) / std::sqrt(static_cast<double>(components));
        const double gain = amp * (1.0 - 0.25 * c);
        const double offset = c * std::numbers::pi / 3.0;
        for (int t = 0; t < length; ++t) {
            const double arg = two_pi * cycles * t / length + phase + offset;
            double v = 0;
            switch (label) {
            case 0: {
                const double env = std::exp(-0.5 * std::pow((t - centre) / width, 2.0));
                double carrier = 0;
                for (int j = 0; j < components; ++j)
                    carrier += weight[static_cast<std::size_t>(j)] *
                               std::sin(two_pi * freq[static_cast<std::size_t>(j)] * t / length + phases[static_cast<std::size_t>(j)]);
                v = 0.6 * gain * std::sin(arg) + 1.2 * gain * env * carrier;
                break;
            }
            case 1: v = gain * std::sin(arg); break;
            default: v = gain * std::tanh(4.0 * std::sin(arg)); break;
            }
            w(c, t) = v + noise * gauss(rng);
        }
    }
    return w;
}

} // namespace

LabeledDataset toy_windows(const std::array<int, 3>& counts, int length, double noise, std::uint64_t seed,
                           std::uint64_t first_id)
{
    if (length < 8)
        throw ConfigError("toy windows need length >= 8");
    LabeledDataset ds;
    for (const char* name : toy_class_names)
        ds.class_names.emplace_back(name);
    std::uint64_t id = first_id;
    for (int label = 0; label < 3; ++label) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(first_id)};
        Rng rng(seq);
        for (int i = 0; i < counts[static_cast<std::size_t>(label)]; ++i) {
            SensorWindow w;
            w.values = toy_window(label, length, noise, rng);
            w.id = id++;
            w.source_id = "toy";
            ds.windows.push_back(std::move(w));
            ds.labels.push_back(label);
        }
    }
    return ds;
}

ToyData make_toy(const ToyConfig& config)
{
    for (int n : config.train_counts)
        if (n < 1)
            throw ConfigError("toy train counts must be >= 1");
    if (config.val_per_class < 2 || config.test_per_class < 1)
        throw ConfigError("toy val needs >= 2 and test >= 1 windows per class");
    ToyData data;
    const auto n_train = static_cast<std::uint64_t>(config.train_counts[0] + config.train_counts[1] +
                                                    config.train_counts[2]);
    const int v = config.val_per_class, t = config.test_per_class;
    data.train = toy_windows(config.train_counts, config.length, config.noise, config.seed, 0);
    data.val = toy_windows({v, v, v}, config.length, config.noise, config.seed, n_train);
    data.test = toy_windows({t, t, t}, config.length, config.noise, config.seed, n_train + 3u * v);
    data.train.split = Split::train;
    data.val.split = Split::val;
    data.test.split = Split::test;
    return data;
}

} // namespace bsdgan
