#include "bsdgan/optim.hpp"

#include "bsdgan/errors.hpp"

#include <cmath>

namespace bsdgan {

void Adam::step(ParamSet& params, const GradSet& grads)
{
    ++steps_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end())
            throw ShapeError("optimizer: gradient for unknown parameter '" + name + "'");
        Vector& w = it->second.values;
        if (g.size() != w.size())
            throw ShapeError("optimizer: gradient size mismatch for '" + name + "'");
        auto [mit, inserted] = moments_.try_emplace(name);
        Moments& m = mit->second;
        if (inserted) {
            m.first = Vector::Zero(w.size());
            m.second = Vector::Zero(w.size());
        }
        m.first = config_.beta1 * m.first + (1.0 - config_.beta1) * g;
        m.second = config_.beta2 * m.second + (1.0 - config_.beta2) * g.cwiseAbs2();
        w.array() -= config_.learning_rate * (m.first.array() / c1) /
                     ((m.second.array() / c2).sqrt() + config_.epsilon);
    }
}

void Adam::restore(std::int64_t steps, std::map<std::string, Moments> moments)
{
    steps_ = steps;
    moments_ = std::move(moments);
}

} // namespace bsdgan
