#include "bsdgan/tensor.hpp"

#include "bsdgan/errors.hpp"

namespace bsdgan {

Tensor reshape(const Tensor& t, int channels, int length)
{
    const auto total = t.data.size();
    if (channels <= 0 || length <= 0 || total % (static_cast<Eigen::Index>(channels) * length) != 0)
        throw ShapeError("reshape: " + std::to_string(total) + " values do not split into [" +
                         std::to_string(channels) + " x " + std::to_string(length) + "] samples");
    const Eigen::Index per_sample = static_cast<Eigen::Index>(channels) * length;
    const Eigen::Index batch = total / per_sample;
    const Eigen::Index old_per_sample = t.data.rows() * t.length;
    if (old_per_sample != per_sample)
        throw ShapeError("reshape: per-sample size changes from " + std::to_string(old_per_sample) + " to " +
                         std::to_string(per_sample));
    Matrix out = Eigen::Map<const Matrix>(t.data.data(), channels, batch * length);
    return {std::move(out), length};
}

Tensor gather_samples(const Tensor& t, const std::vector<int>& indices)
{
    Tensor out(Matrix(t.channels(), static_cast<Eigen::Index>(indices.size()) * t.length), t.length);
    for (std::size_t i = 0; i < indices.size(); ++i)
        out.sample(static_cast<int>(i)) = t.sample(indices[i]);
    return out;
}

std::int64_t ParamArray::size() const
{
    std::int64_t n = 1;
    for (int d : shape)
        n *= d;
    return n;
}

void accumulate(GradSet& grads, const std::string& name, const Eigen::Ref<const Vector>& g)
{
    auto it = grads.find(name);
    if (it == grads.end())
        grads.emplace(name, g);
    else
        it->second += g;
}

bool all_finite(const ParamSet& params)
{
    for (const auto& [name, array] : params)
        if (!array.values.allFinite())
            return false;
    return true;
}

bool all_finite(const GradSet& grads)
{
    for (const auto& [name, g] : grads)
        if (!g.allFinite())
            return false;
    return true;
}

} // namespace bsdgan
