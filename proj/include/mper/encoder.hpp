#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mper/checkpoint.hpp"
#include "mper/ops.hpp"
#include "mper/tensor.hpp"
#include "mper/volume.hpp"

namespace mper {

inline constexpr std::size_t kDefaultMaxVoxels = 64 * 64 * 64;
inline constexpr std::array<std::size_t, 2> kHiddenChannels{8, 16};

template <typename T>
struct ConvLayer {
    BasicTensor<T> kernel;  // (cout, cin, 3, 3, 3)
    BasicTensor<T> bias;    // (cout)
};

/// conv(1->8)+relu, conv(8->16)+relu, conv(16->d).
template <typename T>
struct EncoderNet {
    std::array<ConvLayer<T>, 3> layers;

    [[nodiscard]] std::size_t embed_dim() const { return layers[2].kernel.dim(0); }

    static EncoderNet zeros(std::size_t embed_dim) {
        EncoderNet net;
        const std::size_t chans[4] = {1, kHiddenChannels[0], kHiddenChannels[1], embed_dim};
        for (std::size_t l = 0; l < 3; ++l) {
            net.layers[l].kernel = BasicTensor<T>({chans[l + 1], chans[l], 3, 3, 3});
            net.layers[l].bias = BasicTensor<T>({chans[l + 1]});
        }
        return net;
    }

    /// He-normal kernels, zero biases.
    static EncoderNet random(std::size_t embed_dim, std::mt19937_64& rng) {
        EncoderNet net = zeros(embed_dim);
        for (auto& layer : net.layers) {
            const double fan_in = double(layer.kernel.dim(1) * 27);
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
            for (auto& w : layer.kernel.data()) w = T(dist(rng));
        }
        return net;
    }
};

/// Per-voxel embeddings, voxel-major: the d-vector of voxel i is contiguous.
template <typename T>
struct EmbeddingField {
    Dims dims;
    std::size_t dim = 0;
    std::vector<T> data;

    EmbeddingField() = default;
    EmbeddingField(Dims g, std::size_t d, T fill = T{0}) : dims(g), dim(d), data(g.voxels() * d, fill) {}

    [[nodiscard]] std::size_t voxels() const { return dims.voxels(); }
    [[nodiscard]] std::span<const T> at(std::size_t i) const {
        return std::span<const T>(data).subspan(i * dim, dim);
    }
    [[nodiscard]] std::span<T> at(std::size_t i) { return std::span<T>(data).subspan(i * dim, dim); }
};

/// Activations kept from a forward pass for the backward pass.
template <typename T>
struct EncoderTape {
    FeatureMap<T> input;
    std::array<FeatureMap<T>, 2> pre;   // pre-relu outputs of layers 0 and 1
    std::array<FeatureMap<T>, 2> post;  // relu outputs feeding layers 1 and 2
};

template <typename T>
struct EncoderGrads {
    std::array<ConvLayer<T>, 3> layers;
    FeatureMap<T> input;  // empty unless requested
};

class BudgetError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
EmbeddingField<T> feature_map_to_field(const FeatureMap<T>& fm) {
    EmbeddingField<T> z(fm.dims, fm.channels);
    const std::size_t n = fm.voxels();
    for (std::size_t c = 0; c < fm.channels; ++c)
        for (std::size_t i = 0; i < n; ++i) z.data[i * fm.channels + c] = fm.data[c * n + i];
    return z;
}

template <typename T>
FeatureMap<T> field_to_feature_map(const EmbeddingField<T>& z) {
    FeatureMap<T> fm(z.dim, z.dims);
    const std::size_t n = z.voxels();
    for (std::size_t c = 0; c < z.dim; ++c)
        for (std::size_t i = 0; i < n; ++i) fm.data[c * n + i] = z.data[i * z.dim + c];
    return fm;
}

/// Runs the encoder over a single-channel input. When `tape` is non-null the
/// intermediate activations are recorded for encoder_backward.
template <typename T>
EmbeddingField<T> encode(const EncoderNet<T>& net, const FeatureMap<T>& input,
                         std::size_t max_voxels = kDefaultMaxVoxels, EncoderTape<T>* tape = nullptr) {
    if (input.channels != 1) throw ShapeError("encode: input must have exactly one channel");
    if (input.voxels() > max_voxels)
        throw BudgetError("encode: volume " + to_string(input.dims) + " exceeds the voxel budget of " +
                          std::to_string(max_voxels));
    FeatureMap<T> h0 = ad::conv3d_forward(input, net.layers[0].kernel, net.layers[0].bias);
    FeatureMap<T> a0(h0.channels, h0.dims);
    a0.data = ad::relu_forward<T>(h0.data);
    FeatureMap<T> h1 = ad::conv3d_forward(a0, net.layers[1].kernel, net.layers[1].bias);
    FeatureMap<T> a1(h1.channels, h1.dims);
    a1.data = ad::relu_forward<T>(h1.data);
    FeatureMap<T> out = ad::conv3d_forward(a1, net.layers[2].kernel, net.layers[2].bias);
    if (tape) {
        tape->input = input;
        tape->pre = {std::move(h0), std::move(h1)};
        tape->post = {std::move(a0), std::move(a1)};
    }
    return feature_map_to_field(out);
}

template <typename T>
EmbeddingField<T> encode(const EncoderNet<T>& net, const Volume& x,
                         std::size_t max_voxels = kDefaultMaxVoxels, EncoderTape<T>* tape = nullptr) {
    FeatureMap<T> input(1, x.dims());
    std::copy(x.data().begin(), x.data().end(), input.data.begin());
    return encode(net, input, max_voxels, tape);
}

template <typename T>
EncoderGrads<T> encoder_backward(const EncoderNet<T>& net, const EncoderTape<T>& tape,
                                 const EmbeddingField<T>& grad_z, bool need_input_grad = false) {
    EncoderGrads<T> g;
    FeatureMap<T> upstream = field_to_feature_map(grad_z);
    auto g2 = ad::conv3d_backward(tape.post[1], net.layers[2].kernel, upstream, true);
    g.layers[2] = {std::move(g2.kernel), std::move(g2.bias)};
    FeatureMap<T> d1(g2.input.channels, g2.input.dims);
    d1.data = ad::relu_backward<T>(tape.pre[1].data, g2.input.data);
    auto g1 = ad::conv3d_backward(tape.post[0], net.layers[1].kernel, d1, true);
    g.layers[1] = {std::move(g1.kernel), std::move(g1.bias)};
    FeatureMap<T> d0(g1.input.channels, g1.input.dims);
    d0.data = ad::relu_backward<T>(tape.pre[0].data, g1.input.data);
    auto g0 = ad::conv3d_backward(tape.input, net.layers[0].kernel, d0, need_input_grad);
    g.layers[0] = {std::move(g0.kernel), std::move(g0.bias)};
    if (need_input_grad) g.input = std::move(g0.input);
    return g;
}

/// Encoder plus the linear head weights w_c (one row per class, no bias).
template <typename T>
struct SegModel {
    EncoderNet<T> encoder;
    BasicTensor<T> linear;  // (C, d)

    [[nodiscard]] std::size_t num_classes() const { return linear.dim(0); }
    [[nodiscard]] std::size_t embed_dim() const { return encoder.embed_dim(); }

    static SegModel zeros(std::size_t num_classes, std::size_t embed_dim) {
        return {EncoderNet<T>::zeros(embed_dim), BasicTensor<T>({num_classes, embed_dim})};
    }

    static SegModel random(std::size_t num_classes, std::size_t embed_dim, std::mt19937_64& rng) {
        SegModel m{EncoderNet<T>::random(embed_dim, rng), BasicTensor<T>({num_classes, embed_dim})};
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(double(embed_dim)));
        for (auto& w : m.linear.data()) w = T(dist(rng));
        return m;
    }

    /// Parameter tensors in a fixed order with their checkpoint names.
    [[nodiscard]] auto parameters() { return collect(*this); }
    [[nodiscard]] auto parameters() const { return collect(*this); }

    friend bool operator==(const SegModel& a, const SegModel& b) {
        const auto pa = a.parameters();
        const auto pb = b.parameters();
        for (std::size_t i = 0; i < pa.size(); ++i)
            if (!(*pa[i].second == *pb[i].second)) return false;
        return true;
    }

private:
    template <typename Self>
    static auto collect(Self& self) {
        using Ptr = std::conditional_t<std::is_const_v<Self>, const BasicTensor<T>*, BasicTensor<T>*>;
        std::vector<std::pair<std::string, Ptr>> out;
        for (std::size_t l = 0; l < 3; ++l) {
            const std::string prefix = "encoder.layer" + std::to_string(l);
            out.emplace_back(prefix + ".kernel", &self.encoder.layers[l].kernel);
            out.emplace_back(prefix + ".bias", &self.encoder.layers[l].bias);
        }
        out.emplace_back("linear.weights", &self.linear);
        return out;
    }
};

class ArchitectureMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// teacher <- decay * teacher + (1 - decay) * student, per weight.
template <typename T>
void ema_update(SegModel<T>& teacher, const SegModel<T>& student, double decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("ema_update: decay must lie in [0, 1)");
    auto tp = teacher.parameters();
    auto sp = student.parameters();
    for (std::size_t k = 0; k < tp.size(); ++k)
        if (tp[k].second->shape() != sp[k].second->shape())
            throw ArchitectureMismatch("ema_update: '" + tp[k].first + "' has shape " +
                                       shape_string(tp[k].second->shape()) + " in teacher but " +
                                       shape_string(sp[k].second->shape()) + " in student");
    for (std::size_t k = 0; k < tp.size(); ++k) {
        auto& t = *tp[k].second;
        const auto& s = *sp[k].second;
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = T(decay * double(t[i]) + (1.0 - decay) * double(s[i]));
    }
}

/// Sum of squared differences over all parameters.
template <typename T>
double squared_distance(const SegModel<T>& a, const SegModel<T>& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    double s = 0.0;
    for (std::size_t k = 0; k < pa.size(); ++k)
        for (std::size_t i = 0; i < pa[k].second->size(); ++i) {
            const double diff = double((*pa[k].second)[i]) - double((*pb[k].second)[i]);
            s += diff * diff;
        }
    return s;
}

using Model = SegModel<float>;

/// FNV-1a over the raw parameter bytes.
std::uint64_t checksum(const Model& model);
std::vector<NamedTensor> to_named_tensors(const Model& model);
/// Rebuilds a model from checkpoint tensors; shapes are validated.
Model model_from_tensors(const std::vector<NamedTensor>& tensors);

}  // namespace mper
