#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mper/detail/conv_kernels.hpp"
#include "mper/tensor.hpp"

// Differentiable primitives. Every forward has an explicit analytic backward;
// reductions accumulate in double regardless of the storage type T.
namespace mper::ad {

inline constexpr double kCosineEps = 1e-8;

// ---------------------------------------------------------------- conv3d

template <typename T>
struct Conv3dGrads {
    FeatureMap<T> input;  // empty when not requested
    BasicTensor<T> kernel;
    BasicTensor<T> bias;
};

namespace detail_ops {

template <typename T>
void check_conv_shapes(std::size_t cin, const BasicTensor<T>& kernel, const BasicTensor<T>& bias) {
    const auto& ks = kernel.shape();
    if (ks.size() != 5) throw ShapeError("conv3d: kernel must be rank 5, got " + shape_string(ks));
    if (ks[1] != cin)
        throw ShapeError("conv3d: kernel axis 1 (input channels) is " + std::to_string(ks[1]) +
                         " but input has " + std::to_string(cin) + " channels");
    for (std::size_t a = 2; a < 5; ++a)
        if (ks[a] != 3)
            throw ShapeError("conv3d: kernel spatial axis " + std::to_string(a) + " must be 3, got " +
                             std::to_string(ks[a]));
    if (bias.rank() != 1 || bias.dim(0) != ks[0])
        throw ShapeError("conv3d: bias axis 0 must match kernel axis 0 (" + std::to_string(ks[0]) +
                         "), got shape " + shape_string(bias.shape()));
}

template <typename T>
std::vector<double> to_double(std::span<const T> v) {
    return std::vector<double>(v.begin(), v.end());
}

}  // namespace detail_ops

/// 3x3x3 convolution, stride 1, zero padding 1. Kernel shape is
/// (cout, cin, kz, ky, kx); spatial dims are preserved.
template <typename T>
FeatureMap<T> conv3d_forward(const FeatureMap<T>& input, const BasicTensor<T>& kernel,
                             const BasicTensor<T>& bias) {
    detail_ops::check_conv_shapes(input.channels, kernel, bias);
    const std::size_t cout = kernel.dim(0);
    mper::detail::PaddedGrid padded(input.channels, input.dims);
    for (std::size_t c = 0; c < input.channels; ++c) padded.load(c, input.channel(c));
    const auto w = detail_ops::to_double(kernel.data());
    const auto b = detail_ops::to_double(bias.data());
    std::vector<double> out(cout * input.voxels());
    mper::detail::conv3d_core(padded, w, b, cout, out);
    FeatureMap<T> result(cout, input.dims);
    std::transform(out.begin(), out.end(), result.data.begin(), [](double v) { return T(v); });
    ensure_finite<T>(result.data, "conv3d_forward");
    return result;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const FeatureMap<T>& input, const BasicTensor<T>& kernel,
                               const FeatureMap<T>& grad_out, bool need_input_grad = true) {
    detail_ops::check_conv_shapes(input.channels, kernel, BasicTensor<T>({kernel.dim(0)}));
    const std::size_t cout = kernel.dim(0);
    const std::size_t cin = input.channels;
    if (grad_out.channels != cout || !(grad_out.dims == input.dims))
        throw ShapeError("conv3d_backward: upstream gradient shape does not match output");
    const std::size_t n = input.voxels();
    Conv3dGrads<T> g;

    mper::detail::PaddedGrid padded_in(cin, input.dims);
    for (std::size_t c = 0; c < cin; ++c) padded_in.load(c, input.channel(c));
    const auto gout = detail_ops::to_double(std::span<const T>(grad_out.data));
    std::vector<double> gw(kernel.size());
    mper::detail::conv3d_weight_grad(padded_in, gout, cout, gw);
    g.kernel = BasicTensor<T>(kernel.shape(), std::vector<T>(gw.begin(), gw.end()));

    std::vector<T> gb(cout);
    for (std::size_t co = 0; co < cout; ++co) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += gout[co * n + i];
        gb[co] = T(s);
    }
    g.bias = BasicTensor<T>({cout}, std::move(gb));

    if (need_input_grad) {
        // Correlating the upstream gradient with the flipped, transposed
        // kernel gives the input gradient.
        std::vector<double> flipped(kernel.size());
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t t = 0; t < 27; ++t)
                    flipped[(ci * cout + co) * 27 + (26 - t)] = double(kernel[(co * cin + ci) * 27 + t]);
        mper::detail::PaddedGrid padded_g(cout, input.dims);
        for (std::size_t c = 0; c < cout; ++c) padded_g.load(c, grad_out.channel(c));
        std::vector<double> gin(cin * n);
        mper::detail::conv3d_core(padded_g, flipped, {}, cin, gin);
        g.input = FeatureMap<T>(cin, input.dims);
        std::transform(gin.begin(), gin.end(), g.input.data.begin(), [](double v) { return T(v); });
        ensure_finite<T>(g.input.data, "conv3d_backward");
    }
    ensure_finite<T>(g.kernel.data(), "conv3d_backward");
    return g;
}

// ---------------------------------------------------------------- relu

template <typename T>
std::vector<T> relu_forward(std::span<const T> x) {
    std::vector<T> y(x.size());
    std::transform(x.begin(), x.end(), y.begin(), [](T v) { return v > T(0) ? v : T(0); });
    return y;
}

/// Gradient passes where the forward input was strictly positive.
template <typename T>
std::vector<T> relu_backward(std::span<const T> x, std::span<const T> grad_out) {
    if (x.size() != grad_out.size()) throw ShapeError("relu_backward: size mismatch");
    std::vector<T> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T(0) ? grad_out[i] : T(0);
    return g;
}

// ---------------------------------------------------------------- linear

template <typename T>
struct LinearGrads {
    std::vector<T> input;
    BasicTensor<T> weights;
    std::vector<T> bias;
};

/// y = W x + b for W of shape (out, in). An empty bias means no bias term.
template <typename T>
std::vector<T> linear_forward(std::span<const T> x, const BasicTensor<T>& weights,
                              std::span<const T> bias = {}) {
    if (weights.rank() != 2 || weights.dim(1) != x.size())
        throw ShapeError("linear: weight axis 1 is " +
                         (weights.rank() == 2 ? std::to_string(weights.dim(1)) : std::string("?")) +
                         " but input has " + std::to_string(x.size()) + " features");
    const std::size_t out = weights.dim(0);
    if (!bias.empty() && bias.size() != out)
        throw ShapeError("linear: bias length does not match weight axis 0");
    std::vector<T> y(out);
    for (std::size_t o = 0; o < out; ++o) {
        double s = bias.empty() ? 0.0 : double(bias[o]);
        for (std::size_t i = 0; i < x.size(); ++i) s += double(weights[o * x.size() + i]) * double(x[i]);
        y[o] = T(s);
    }
    ensure_finite<T>(y, "linear_forward");
    return y;
}

template <typename T>
LinearGrads<T> linear_backward(std::span<const T> x, const BasicTensor<T>& weights,
                               std::span<const T> grad_out) {
    const std::size_t out = weights.dim(0);
    const std::size_t in = weights.dim(1);
    if (x.size() != in || grad_out.size() != out) throw ShapeError("linear_backward: size mismatch");
    LinearGrads<T> g;
    g.input.assign(in, T(0));
    g.weights = BasicTensor<T>(weights.shape());
    g.bias.assign(grad_out.begin(), grad_out.end());
    for (std::size_t i = 0; i < in; ++i) {
        double s = 0.0;
        for (std::size_t o = 0; o < out; ++o) s += double(weights[o * in + i]) * double(grad_out[o]);
        g.input[i] = T(s);
    }
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t i = 0; i < in; ++i) g.weights[o * in + i] = grad_out[o] * x[i];
    return g;
}

// ---------------------------------------------------------------- softmax

/// softmax(logits / temperature), evaluated with max subtraction.
template <typename T>
std::vector<T> softmax(std::span<const T> logits, double temperature = 1.0) {
    if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
    if (logits.empty()) throw ShapeError("softmax: empty input");
    double mx = double(logits[0]);
    for (const T& v : logits) mx = std::max(mx, double(v));
    std::vector<double> e(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp((double(logits[i]) - mx) / temperature);
        sum += e[i];
    }
    std::vector<T> y(logits.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = T(e[i] / sum);
    ensure_finite<T>(y, "softmax");
    return y;
}

/// Given y = softmax(l / temperature) and dL/dy, returns dL/dl.
template <typename T>
std::vector<T> softmax_backward(std::span<const T> y, std::span<const T> grad_out,
                                double temperature = 1.0) {
    if (y.size() != grad_out.size()) throw ShapeError("softmax_backward: size mismatch");
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += double(y[i]) * double(grad_out[i]);
    std::vector<T> g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        g[i] = T(double(y[i]) * (double(grad_out[i]) - dot) / temperature);
    return g;
}

// ---------------------------------------------------------------- cosine

template <typename T, typename U>
double cosine_sim(std::span<const T> a, std::span<const U> b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("cosine_sim: dimension mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * double(b[i]);
        aa += double(a[i]) * double(a[i]);
        bb += double(b[i]) * double(b[i]);
    }
    return ab / std::max(std::sqrt(aa) * std::sqrt(bb), kCosineEps);
}

/// d sim(a, b) / d a, scaled by `upstream` and accumulated into grad.
template <typename T, typename U>
void cosine_sim_backward(std::span<const T> a, std::span<const U> b, double upstream,
                         std::span<T> grad) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * double(b[i]);
        aa += double(a[i]) * double(a[i]);
        bb += double(b[i]) * double(b[i]);
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    const double denom = na * nb;
    if (denom <= kCosineEps) {
        // Clamped denominator: sim = a.b / eps is linear in a.
        for (std::size_t i = 0; i < a.size(); ++i) grad[i] += T(upstream * double(b[i]) / kCosineEps);
        return;
    }
    const double sim = ab / denom;
    for (std::size_t i = 0; i < a.size(); ++i)
        grad[i] += T(upstream * (double(b[i]) / denom - sim * double(a[i]) / aa));
}

// ---------------------------------------------------------------- sgd

/// p <- p - lr * g for every parameter tensor.
template <typename T>
void sgd_step(std::span<BasicTensor<T>* const> params, std::span<const BasicTensor<T>* const> grads,
              double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be > 0");
    if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        const auto& g = *grads[k];
        if (p.shape() != g.shape())
            throw ShapeError("sgd_step: gradient " + std::to_string(k) + " has shape " +
                             shape_string(g.shape()) + ", parameter has " + shape_string(p.shape()));
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = T(double(p[i]) - lr * double(g[i]));
        ensure_finite<T>(p.data(), "sgd_step");
    }
}

}  // namespace mper::ad
