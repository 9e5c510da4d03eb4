#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace bsdgan {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/**
 * Batched sequence activations.
 *
 * `data` is [channels, batch * length] column-major; sample n owns the
 * contiguous column range [n * length, (n + 1) * length). A dense batch is
 * the length == 1 case, so a flatten is a free reshape of the same memory
 * (element (c, t) of a sample lands at flat index t * channels + c).
 */
struct Tensor {
    Matrix data;
    int length = 1;

    Tensor() = default;
    Tensor(Matrix d, int len) : data(std::move(d)), length(len) {}

    int channels() const { return static_cast<int>(data.rows()); }
    int batch() const { return length == 0 ? 0 : static_cast<int>(data.cols()) / length; }

    auto sample(int n) { return data.middleCols(static_cast<Eigen::Index>(n) * length, length); }
    auto sample(int n) const { return data.middleCols(static_cast<Eigen::Index>(n) * length, length); }
};

/// Reinterprets a [C, N*L] tensor as [C*L, N] (and back) without copying values.
Tensor reshape(const Tensor& t, int channels, int length);

/// Selects samples `indices` (in order) into a new tensor.
Tensor gather_samples(const Tensor& t, const std::vector<int>& indices);

/// Named parameter array; `values` is the flat column-major storage.
struct ParamArray {
    std::vector<int> shape;
    Vector values;

    std::int64_t size() const;
    Eigen::Map<Matrix> as_matrix(int rows, int cols) { return {values.data(), rows, cols}; }
    Eigen::Map<const Matrix> as_matrix(int rows, int cols) const { return {values.data(), rows, cols}; }
};

using ParamSet = std::map<std::string, ParamArray>;
using GradSet = std::map<std::string, Vector>;

/// Adds `g` into grads[name], creating a zero entry first if needed.
void accumulate(GradSet& grads, const std::string& name, const Eigen::Ref<const Vector>& g);

bool all_finite(const ParamSet& params);
bool all_finite(const GradSet& grads);

} // namespace bsdgan
