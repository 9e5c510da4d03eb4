#pragma once

#include "bsdgan/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace bsdgan {

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double epsilon = 1e-7;
};

/// Adam with bias correction. Moments exist only for keys that have received a gradient.
class Adam {
public:
    struct Moments {
        Vector first;
        Vector second;
    };

    Adam() = default;
    explicit Adam(AdamConfig config) : config_(config) {}

    /// One update of every parameter named in `grads`; other entries of `params` are untouched.
    void step(ParamSet& params, const GradSet& grads);

    const AdamConfig& config() const { return config_; }
    std::int64_t steps() const { return steps_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }

    /// Restores optimizer state from a checkpoint.
    void restore(std::int64_t steps, std::map<std::string, Moments> moments);

private:
    AdamConfig config_;
    std::int64_t steps_ = 0;
    std::map<std::string, Moments> moments_;
};

} // namespace bsdgan
