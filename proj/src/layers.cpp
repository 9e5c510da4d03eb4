#include "bsdgan/layers.hpp"

#include "bsdgan/errors.hpp"

#include <cmath>

namespace bsdgan::nn {
namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

const ParamArray& param(const ParamSet& params, const std::string& name, std::int64_t expected_size)
{
    auto it = params.find(name);
    if (it == params.end())
        throw ShapeError("missing parameter '" + name + "'");
    if (it->second.values.size() != expected_size)
        throw ShapeError("parameter '" + name + "' has " + std::to_string(it->second.values.size()) +
                         " values, expected " + std::to_string(expected_size));
    return it->second;
}

void require_channels(const Tensor& x, int expected, const std::string& layer)
{
    if (x.channels() != expected)
        throw ShapeError(layer + ": input has " + std::to_string(x.channels()) + " channels, expected " +
                         std::to_string(expected));
}

void glorot(ParamSet& params, const std::string& name, std::vector<int> shape, int fan_in, int fan_out, Rng& rng)
{
    ParamArray a;
    a.shape = std::move(shape);
    a.values.resize(a.size());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < a.values.size(); ++i)
        a.values[i] = dist(rng);
    params[name] = std::move(a);
}

void zeros(ParamSet& params, const std::string& name, int n)
{
    params[name] = ParamArray{{n}, Vector::Zero(n)};
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Columns {n*L + t} for all n, i.e. timestep t of every sample.
Matrix timestep(const Matrix& m, int batch, int length, int t)
{
    Matrix out(m.rows(), batch);
    for (int n = 0; n < batch; ++n)
        out.col(n) = m.col(static_cast<Eigen::Index>(n) * length + t);
    return out;
}

void set_timestep(Matrix& m, int batch, int length, int t, const Matrix& v)
{
    for (int n = 0; n < batch; ++n)
        m.col(static_cast<Eigen::Index>(n) * length + t) = v.col(n);
}

} // namespace

Matrix gather_windows(const Matrix& x, int batch, int lx, int lc, int kernel, int stride, int pad)
{
    const auto c = x.rows();
    Matrix cols = Matrix::Zero(kernel * c, static_cast<Eigen::Index>(batch) * lc);
    for (int n = 0; n < batch; ++n)
        for (int o = 0; o < lc; ++o)
            for (int j = 0; j < kernel; ++j) {
                const int t = o * stride - pad + j;
                if (t < 0 || t >= lx)
                    continue;
                cols.block(j * c, static_cast<Eigen::Index>(n) * lc + o, c, 1) =
                    x.col(static_cast<Eigen::Index>(n) * lx + t);
            }
    return cols;
}

Matrix scatter_windows(const Matrix& cols, int channels, int batch, int lx, int lc, int kernel, int stride, int pad)
{
    Matrix x = Matrix::Zero(channels, static_cast<Eigen::Index>(batch) * lx);
    for (int n = 0; n < batch; ++n)
        for (int o = 0; o < lc; ++o)
            for (int j = 0; j < kernel; ++j) {
                const int t = o * stride - pad + j;
                if (t < 0 || t >= lx)
                    continue;
                x.col(static_cast<Eigen::Index>(n) * lx + t) +=
                    cols.block(j * channels, static_cast<Eigen::Index>(n) * lc + o, channels, 1);
            }
    return x;
}

Matrix softmax(const Matrix& logits)
{
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index n = 0; n < logits.cols(); ++n) {
        const double m = logits.col(n).maxCoeff();
        p.col(n) = (logits.col(n).array() - m).exp().matrix();
        p.col(n) /= p.col(n).sum();
    }
    return p;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& dprobs)
{
    Matrix d(probs.rows(), probs.cols());
    for (Eigen::Index n = 0; n < probs.cols(); ++n) {
        const double dot = probs.col(n).dot(dprobs.col(n));
        d.col(n) = (probs.col(n).array() * (dprobs.col(n).array() - dot)).matrix();
    }
    return d;
}

int output_length(const Layer& layer, int input_length)
{
    return std::visit(
        overloaded{
            [&](const Conv1d& l) { return (input_length + 2 * l.padding - l.kernel) / l.stride + 1; },
            [&](const ConvTranspose1d& l) {
                return (input_length - 1) * l.stride - 2 * l.padding + l.kernel + l.output_padding;
            },
            [&](const Dense&) { return 1; },
            [&](const Lstm&) { return 1; },
            [&](const MaxPool1d& l) { return input_length / l.size; },
            [&](const Reshape& l) { return l.length; },
            [&](const auto&) { return input_length; },
        },
        layer);
}

void init_params(const Layer& layer, ParamSet& params, Rng& rng)
{
    std::visit(overloaded{
                   [&](const Conv1d& l) {
                       glorot(params, l.name + ".weight", {l.out_channels, l.kernel, l.in_channels},
                              l.in_channels * l.kernel, l.out_channels * l.kernel, rng);
                       zeros(params, l.name + ".bias", l.out_channels);
                   },
                   [&](const ConvTranspose1d& l) {
                       glorot(params, l.name + ".weight", {l.kernel, l.out_channels, l.in_channels},
                              l.in_channels * l.kernel, l.out_channels * l.kernel, rng);
                       zeros(params, l.name + ".bias", l.out_channels);
                   },
                   [&](const Dense& l) {
                       glorot(params, l.name + ".weight", {l.out_features, l.in_features}, l.in_features,
                              l.out_features, rng);
                       zeros(params, l.name + ".bias", l.out_features);
                   },
                   [&](const Lstm& l) {
                       glorot(params, l.name + ".input_weight", {4 * l.hidden, l.in_channels}, l.in_channels,
                              4 * l.hidden, rng);
                       glorot(params, l.name + ".recurrent_weight", {4 * l.hidden, l.hidden}, l.hidden,
                              4 * l.hidden, rng);
                       zeros(params, l.name + ".bias", 4 * l.hidden);
                       params[l.name + ".bias"].values.segment(l.hidden, l.hidden).setOnes();
                   },
                   [&](const auto&) {},
               },
               layer);
}

void Sequential::init(ParamSet& params, Rng& rng) const
{
    for (const auto& layer : layers_)
        init_params(layer, params, rng);
}

std::vector<std::string> Sequential::param_names() const
{
    std::vector<std::string> names;
    for (const auto& layer : layers_)
        std::visit(overloaded{
                       [&](const Lstm& l) {
                           names.push_back(l.name + ".input_weight");
                           names.push_back(l.name + ".recurrent_weight");
                           names.push_back(l.name + ".bias");
                       },
                       [&](const auto& l) {
                           if constexpr (requires { l.name; }) {
                               names.push_back(l.name + ".weight");
                               names.push_back(l.name + ".bias");
                           }
                       },
                   },
                   layer);
    return names;
}

int Sequential::output_length(int input_length) const
{
    int len = input_length;
    for (const auto& layer : layers_)
        len = nn::output_length(layer, len);
    return len;
}

Tensor Sequential::forward(const ParamSet& params, const Tensor& input, Tape* tape) const
{
    if (tape) {
        tape->clear();
        tape->reserve(layers_.size());
    }
    Tensor x = input;
    for (const auto& layer : layers_) {
        TapeEntry entry;
        Tensor y = std::visit(
            overloaded{
                [&](const Conv1d& l) {
                    require_channels(x, l.in_channels, l.name);
                    const int n = x.batch();
                    const int lo = nn::output_length(layer, x.length);
                    if (lo < 1)
                        throw ShapeError(l.name + ": input length " + std::to_string(x.length) + " too short");
                    const auto& w = param(params, l.name + ".weight",
                                          std::int64_t(l.out_channels) * l.kernel * l.in_channels);
                    const auto& b = param(params, l.name + ".bias", l.out_channels);
                    Matrix cols = gather_windows(x.data, n, x.length, lo, l.kernel, l.stride, l.padding);
                    Matrix out = w.as_matrix(l.out_channels, l.kernel * l.in_channels) * cols;
                    out.colwise() += b.values;
                    if (tape)
                        entry.cols = std::move(cols);
                    return Tensor(std::move(out), lo);
                },
                [&](const ConvTranspose1d& l) {
                    require_channels(x, l.in_channels, l.name);
                    const int n = x.batch();
                    const int lo = nn::output_length(layer, x.length);
                    const auto& w = param(params, l.name + ".weight",
                                          std::int64_t(l.out_channels) * l.kernel * l.in_channels);
                    const auto& b = param(params, l.name + ".bias", l.out_channels);
                    Matrix cols = w.as_matrix(l.kernel * l.out_channels, l.in_channels) * x.data;
                    Matrix out =
                        scatter_windows(cols, l.out_channels, n, lo, x.length, l.kernel, l.stride, l.padding);
                    out.colwise() += b.values;
                    return Tensor(std::move(out), lo);
                },
                [&](const Dense& l) {
                    if (x.length != 1)
                        throw ShapeError(l.name + ": dense input must be flattened (length 1)");
                    require_channels(x, l.in_features, l.name);
                    const auto& w =
                        param(params, l.name + ".weight", std::int64_t(l.out_features) * l.in_features);
                    const auto& b = param(params, l.name + ".bias", l.out_features);
                    Matrix out = w.as_matrix(l.out_features, l.in_features) * x.data;
                    out.colwise() += b.values;
                    return Tensor(std::move(out), 1);
                },
                [&](const Lstm& l) {
                    require_channels(x, l.in_channels, l.name);
                    const int n = x.batch();
                    const int h = l.hidden;
                    const auto& wi = param(params, l.name + ".input_weight", std::int64_t(4) * h * l.in_channels);
                    const auto& wr = param(params, l.name + ".recurrent_weight", std::int64_t(4) * h * h);
                    const auto& b = param(params, l.name + ".bias", 4 * h);
                    const Matrix projected = wi.as_matrix(4 * h, l.in_channels) * x.data;
                    const auto recurrent = wr.as_matrix(4 * h, h);
                    Matrix hidden = Matrix::Zero(h, n);
                    Matrix cell = Matrix::Zero(h, n);
                    for (int t = 0; t < x.length; ++t) {
                        Matrix a = timestep(projected, n, x.length, t) + recurrent * hidden;
                        a.colwise() += b.values;
                        Matrix gates(4 * h, n);
                        gates.topRows(2 * h) = a.topRows(2 * h).unaryExpr(&sigmoid);
                        gates.middleRows(2 * h, h) = a.middleRows(2 * h, h).array().tanh().matrix();
                        gates.bottomRows(h) = a.bottomRows(h).unaryExpr(&sigmoid);
                        Matrix next_cell = (gates.middleRows(h, h).array() * cell.array() +
                                            gates.topRows(h).array() * gates.middleRows(2 * h, h).array())
                                               .matrix();
                        Matrix next_hidden =
                            (gates.bottomRows(h).array() * next_cell.array().tanh()).matrix();
                        if (tape) {
                            // [gates; previous cell; previous hidden] per timestep
                            Matrix state(6 * h, n);
                            state << gates, cell, hidden;
                            entry.states.push_back(std::move(state));
                        }
                        cell = std::move(next_cell);
                        hidden = std::move(next_hidden);
                    }
                    if (tape)
                        entry.states.push_back(cell);
                    return Tensor(std::move(hidden), 1);
                },
                [&](const LeakyRelu& l) {
                    Matrix out = x.data.unaryExpr([s = l.slope](double v) { return v > 0 ? v : s * v; });
                    return Tensor(std::move(out), x.length);
                },
                [&](const Relu&) { return Tensor(x.data.cwiseMax(0.0), x.length); },
                [&](const MaxPool1d& l) {
                    const int n = x.batch();
                    const int lo = x.length / l.size;
                    Matrix out(x.channels(), static_cast<Eigen::Index>(n) * lo);
                    std::vector<int> arg(static_cast<std::size_t>(out.size()));
                    for (int s = 0; s < n; ++s)
                        for (int o = 0; o < lo; ++o)
                            for (int c = 0; c < x.channels(); ++c) {
                                int best = s * x.length + o * l.size;
                                for (int j = 1; j < l.size; ++j) {
                                    const int col = s * x.length + o * l.size + j;
                                    if (x.data(c, col) > x.data(c, best))
                                        best = col;
                                }
                                const Eigen::Index oc = static_cast<Eigen::Index>(s) * lo + o;
                                out(c, oc) = x.data(c, best);
                                arg[static_cast<std::size_t>(oc * x.channels() + c)] = best;
                            }
                    if (tape)
                        entry.argmax = std::move(arg);
                    return Tensor(std::move(out), lo);
                },
                [&](const Reshape& l) { return reshape(x, l.channels, l.length); },
            },
            layer);
        if (tape) {
            entry.input = std::move(x);
            tape->push_back(std::move(entry));
        }
        x = std::move(y);
    }
    return x;
}

Tensor Sequential::backward(const ParamSet& params, const Tape& tape, const Tensor& output_grad,
                            GradSet* grads) const
{
    if (tape.size() != layers_.size())
        throw ShapeError("backward: tape does not match layer stack");
    Tensor dy = output_grad;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const auto& layer = layers_[i];
        const auto& entry = tape[i];
        const Tensor& x = entry.input;
        Tensor dx = std::visit(
            overloaded{
                [&](const Conv1d& l) {
                    const auto& w = params.at(l.name + ".weight").as_matrix(l.out_channels, l.kernel * l.in_channels);
                    if (grads) {
                        Matrix dw = dy.data * entry.cols.transpose();
                        accumulate(*grads, l.name + ".weight", dw.reshaped());
                        accumulate(*grads, l.name + ".bias", dy.data.rowwise().sum());
                    }
                    Matrix dcols = w.transpose() * dy.data;
                    return Tensor(scatter_windows(dcols, l.in_channels, x.batch(), x.length, dy.length, l.kernel,
                                                  l.stride, l.padding),
                                  x.length);
                },
                [&](const ConvTranspose1d& l) {
                    const auto& w = params.at(l.name + ".weight").as_matrix(l.kernel * l.out_channels, l.in_channels);
                    Matrix dcols =
                        gather_windows(dy.data, x.batch(), dy.length, x.length, l.kernel, l.stride, l.padding);
                    if (grads) {
                        Matrix dw = dcols * x.data.transpose();
                        accumulate(*grads, l.name + ".weight", dw.reshaped());
                        accumulate(*grads, l.name + ".bias", dy.data.rowwise().sum());
                    }
                    return Tensor(w.transpose() * dcols, x.length);
                },
                [&](const Dense& l) {
                    const auto& w = params.at(l.name + ".weight").as_matrix(l.out_features, l.in_features);
                    if (grads) {
                        Matrix dw = dy.data * x.data.transpose();
                        accumulate(*grads, l.name + ".weight", dw.reshaped());
                        accumulate(*grads, l.name + ".bias", dy.data.rowwise().sum());
                    }
                    return Tensor(w.transpose() * dy.data, 1);
                },
                [&](const Lstm& l) {
                    const int n = x.batch();
                    const int h = l.hidden;
                    const auto wi = params.at(l.name + ".input_weight").as_matrix(4 * h, l.in_channels);
                    const auto wr = params.at(l.name + ".recurrent_weight").as_matrix(4 * h, h);
                    Matrix dproj = Matrix::Zero(4 * h, static_cast<Eigen::Index>(n) * x.length);
                    Matrix dwr = Matrix::Zero(4 * h, h);
                    Vector db = Vector::Zero(4 * h);
                    Matrix dh = dy.data;
                    Matrix dc = Matrix::Zero(h, n);
                    for (int t = x.length - 1; t >= 0; --t) {
                        const Matrix& s = entry.states[static_cast<std::size_t>(t)];
                        const auto gi = s.topRows(h).array();
                        const auto gf = s.middleRows(h, h).array();
                        const auto gg = s.middleRows(2 * h, h).array();
                        const auto go = s.middleRows(3 * h, h).array();
                        const auto prev_c = s.middleRows(4 * h, h).array();
                        // cell state produced at step t is the "previous cell" of step t + 1
                        const Eigen::ArrayXXd tc =
                            (t + 1 < x.length
                                 ? Matrix(entry.states[static_cast<std::size_t>(t + 1)].middleRows(4 * h, h))
                                 : entry.states.back())
                                .array()
                                .tanh();
                        dc.array() += dh.array() * go * (1.0 - tc.square());
                        Matrix da(4 * h, n);
                        da.topRows(h) = (dc.array() * gg * gi * (1.0 - gi)).matrix();
                        da.middleRows(h, h) = (dc.array() * prev_c * gf * (1.0 - gf)).matrix();
                        da.middleRows(2 * h, h) = (dc.array() * gi * (1.0 - gg.square())).matrix();
                        da.bottomRows(h) = (dh.array() * tc * go * (1.0 - go)).matrix();
                        set_timestep(dproj, n, x.length, t, da);
                        if (grads) {
                            dwr.noalias() += da * s.bottomRows(h).transpose();
                            db += da.rowwise().sum();
                        }
                        dh = wr.transpose() * da;
                        dc = (dc.array() * gf).matrix();
                    }
                    if (grads) {
                        Matrix dwi = dproj * x.data.transpose();
                        accumulate(*grads, l.name + ".input_weight", dwi.reshaped());
                        accumulate(*grads, l.name + ".recurrent_weight", dwr.reshaped());
                        accumulate(*grads, l.name + ".bias", db);
                    }
                    return Tensor(wi.transpose() * dproj, x.length);
                },
                [&](const LeakyRelu& l) {
                    Matrix d = dy.data.binaryExpr(x.data, [s = l.slope](double g, double v) { return v > 0 ? g : s * g; });
                    return Tensor(std::move(d), x.length);
                },
                [&](const Relu&) {
                    Matrix d = dy.data.binaryExpr(x.data, [](double g, double v) { return v > 0 ? g : 0.0; });
                    return Tensor(std::move(d), x.length);
                },
                [&](const MaxPool1d&) {
                    Matrix d = Matrix::Zero(x.channels(), x.data.cols());
                    const auto c = x.channels();
                    for (Eigen::Index oc = 0; oc < dy.data.cols(); ++oc)
                        for (Eigen::Index ch = 0; ch < c; ++ch)
                            d(ch, entry.argmax[static_cast<std::size_t>(oc * c + ch)]) += dy.data(ch, oc);
                    return Tensor(std::move(d), x.length);
                },
                [&](const Reshape&) { return reshape(dy, x.channels(), x.length); },
            },
            layer);
        dy = std::move(dx);
    }
    return dy;
}

} // namespace bsdgan::nn
