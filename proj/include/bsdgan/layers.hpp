#pragma once

#include "bsdgan/tensor.hpp"

#include <string>
#include <variant>
#include <vector>

namespace bsdgan::nn {

/// 1D convolution. Weight is stored as [out, kernel * in] with column j * in + c.
struct Conv1d {
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
};

/// 1D transposed convolution. Weight is stored as [kernel * out, in] with row j * out + c.
struct ConvTranspose1d {
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    int output_padding = 0;
};

struct Dense {
    std::string name;
    int in_features = 0;
    int out_features = 0;
};

/// Single-layer LSTM over the length axis; emits the final hidden state (length 1).
struct Lstm {
    std::string name;
    int in_channels = 0;
    int hidden = 0;
};

struct LeakyRelu {
    double slope = 0.2;
};

struct Relu {};

/// Non-overlapping max pooling; trailing positions that do not fill a window are dropped.
struct MaxPool1d {
    int size = 2;
};

/// Reinterprets activations as [channels, length] per sample.
struct Reshape {
    int channels = 0;
    int length = 1;
};

using Layer = std::variant<Conv1d, ConvTranspose1d, Dense, Lstm, LeakyRelu, Relu, MaxPool1d, Reshape>;

int output_length(const Layer& layer, int input_length);

/// Glorot-uniform weights and zero biases (LSTM forget-gate bias starts at 1).
void init_params(const Layer& layer, ParamSet& params, Rng& rng);

struct TapeEntry {
    Tensor input;
    Matrix cols;
    std::vector<Matrix> states;
    std::vector<int> argmax;
};

using Tape = std::vector<TapeEntry>;

class Sequential {
public:
    Sequential() = default;
    explicit Sequential(std::vector<Layer> layers) : layers_(std::move(layers)) {}

    void add(Layer layer) { layers_.push_back(std::move(layer)); }
    const std::vector<Layer>& layers() const { return layers_; }
    bool empty() const { return layers_.empty(); }

    void init(ParamSet& params, Rng& rng) const;
    std::vector<std::string> param_names() const;
    int output_length(int input_length) const;

    /// Runs the stack. When `tape` is given, everything backward() needs is recorded in it.
    Tensor forward(const ParamSet& params, const Tensor& x, Tape* tape = nullptr) const;

    /// Propagates dL/dy back to dL/dx. Parameter gradients are accumulated only when `grads` is non-null.
    Tensor backward(const ParamSet& params, const Tape& tape, const Tensor& dy, GradSet* grads) const;

private:
    std::vector<Layer> layers_;
};

/// cols(j*C + c, n*Lc + o) = x(c, n*Lx + o*stride - pad + j), zero outside [0, Lx).
Matrix gather_windows(const Matrix& x, int batch, int lx, int lc, int kernel, int stride, int pad);

/// Adjoint of gather_windows: scatter-adds columns back into a [C, N*Lx] map.
Matrix scatter_windows(const Matrix& cols, int channels, int batch, int lx, int lc, int kernel, int stride, int pad);

/// Column-wise softmax.
Matrix softmax(const Matrix& logits);

/// dL/dlogits given softmax output `probs` and upstream dL/dprobs.
Matrix softmax_backward(const Matrix& probs, const Matrix& dprobs);

} // namespace bsdgan::nn
