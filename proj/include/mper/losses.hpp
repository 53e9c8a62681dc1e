#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "mper/encoder.hpp"
#include "mper/ops.hpp"
#include "mper/prototype_bank.hpp"
#include "mper/volume.hpp"

namespace mper {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kDiceEps = 1e-5;

/// Per-voxel class distributions, voxel-major.
template <typename T>
struct ProbField {
    Dims dims;
    std::size_t num_classes = 0;
    std::vector<T> probs;

    ProbField() = default;
    ProbField(Dims g, std::size_t c, T fill = T{0}) : dims(g), num_classes(c), probs(g.voxels() * c, fill) {}

    [[nodiscard]] std::size_t voxels() const { return dims.voxels(); }
    [[nodiscard]] std::span<const T> at(std::size_t i) const {
        return std::span<const T>(probs).subspan(i * num_classes, num_classes);
    }
    [[nodiscard]] std::span<T> at(std::size_t i) {
        return std::span<T>(probs).subspan(i * num_classes, num_classes);
    }
    /// Lowest class index wins ties.
    [[nodiscard]] std::uint16_t argmax(std::size_t i) const {
        const auto p = at(i);
        return static_cast<std::uint16_t>(std::max_element(p.begin(), p.end()) - p.begin());
    }
};

/// Scalar loss plus its gradient with respect to the loss input.
template <typename T>
struct LossValue {
    double value = 0.0;
    std::vector<T> grad;
};

// ------------------------------------------------------- prototype classifier

/// Softmax over each class's best-of-K cosine similarity, divided by tau1.
template <typename T>
std::vector<T> proto_classify(std::span<const T> z, const PrototypeBank& bank, double tau1) {
    if (!(tau1 > 0.0)) throw std::invalid_argument("proto_classify: tau1 must be > 0");
    const Assignment a = assign(z, bank);
    const std::vector<T> sims(a.best_sim.begin(), a.best_sim.end());
    return ad::softmax<T>(sims, tau1);
}

/// Gradient of the prototype classifier with respect to z only; prototypes
/// are constants. Accumulates into grad_z.
template <typename T>
void proto_classify_backward(std::span<const T> z, const PrototypeBank& bank, double tau1,
                             std::span<const T> probs, std::span<const T> grad_probs, std::span<T> grad_z) {
    const Assignment a = assign(z, bank);
    const auto grad_sims = ad::softmax_backward<T>(probs, grad_probs, tau1);
    for (std::size_t c = 0; c < bank.num_classes(); ++c)
        ad::cosine_sim_backward(z, bank.prototype(c, a.best_proto[c]), double(grad_sims[c]), grad_z);
}

template <typename T>
ProbField<T> proto_head(const EmbeddingField<T>& z, const PrototypeBank& bank, double tau1) {
    if (z.dim != bank.dim()) throw ShapeError("proto_head: embedding dimension does not match bank");
    ProbField<T> out(z.dims, bank.num_classes());
    for (std::size_t i = 0; i < z.voxels(); ++i) {
        const auto p = proto_classify<T>(z.at(i), bank, tau1);
        std::copy(p.begin(), p.end(), out.at(i).begin());
    }
    return out;
}

template <typename T>
EmbeddingField<T> proto_head_backward(const EmbeddingField<T>& z, const PrototypeBank& bank, double tau1,
                                      const ProbField<T>& probs, std::span<const T> grad_probs) {
    EmbeddingField<T> gz(z.dims, z.dim);
    const std::size_t c = probs.num_classes;
    for (std::size_t i = 0; i < z.voxels(); ++i)
        proto_classify_backward<T>(z.at(i), bank, tau1, probs.at(i), grad_probs.subspan(i * c, c), gz.at(i));
    return gz;
}

// ---------------------------------------------------------- linear classifier

/// softmax(W z) for W of shape (C, d).
template <typename T>
std::vector<T> linear_classify(std::span<const T> z, const BasicTensor<T>& weights) {
    const auto logits = ad::linear_forward<T>(z, weights);
    return ad::softmax<T>(logits, 1.0);
}

template <typename T>
ProbField<T> linear_head(const EmbeddingField<T>& z, const BasicTensor<T>& weights) {
    ProbField<T> out(z.dims, weights.dim(0));
    for (std::size_t i = 0; i < z.voxels(); ++i) {
        const auto p = linear_classify<T>(z.at(i), weights);
        std::copy(p.begin(), p.end(), out.at(i).begin());
    }
    return out;
}

template <typename T>
struct LinearHeadGrads {
    EmbeddingField<T> z;
    BasicTensor<T> weights;
};

template <typename T>
LinearHeadGrads<T> linear_head_backward(const EmbeddingField<T>& z, const BasicTensor<T>& weights,
                                        const ProbField<T>& probs, std::span<const T> grad_probs) {
    const std::size_t c = weights.dim(0);
    const std::size_t d = weights.dim(1);
    LinearHeadGrads<T> g{EmbeddingField<T>(z.dims, d), BasicTensor<T>(weights.shape())};
    std::vector<double> gw(c * d, 0.0);
    for (std::size_t i = 0; i < z.voxels(); ++i) {
        const auto glogit = ad::softmax_backward<T>(probs.at(i), grad_probs.subspan(i * c, c), 1.0);
        const auto zi = z.at(i);
        auto gzi = g.z.at(i);
        for (std::size_t k = 0; k < c; ++k) {
            const double gl = double(glogit[k]);
            if (gl == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) {
                gzi[j] += T(gl * double(weights[k * d + j]));
                gw[k * d + j] += gl * double(zi[j]);
            }
        }
    }
    for (std::size_t k = 0; k < c * d; ++k) g.weights[k] = T(gw[k]);
    return g;
}

// ------------------------------------------------------------------ losses

namespace detail_loss {

template <typename T>
void check_pred_target(const ProbField<T>& pred, const LabelVolume& target, std::span<const std::uint8_t> mask) {
    if (!(pred.dims == target.dims()))
        throw ShapeError("loss: prediction dims " + to_string(pred.dims) + " vs target " + to_string(target.dims()));
    if (pred.num_classes != target.num_classes()) throw ShapeError("loss: class count mismatch");
    if (!mask.empty() && mask.size() != pred.voxels()) throw ShapeError("loss: mask length mismatch");
}

}  // namespace detail_loss

/// Mean over (masked) voxels of -log(max(p[target], 1e-12)).
template <typename T>
LossValue<T> ce_loss(const ProbField<T>& pred, const LabelVolume& target, std::span<const std::uint8_t> mask = {}) {
    detail_loss::check_pred_target(pred, target, mask);
    const std::size_t c = pred.num_classes;
    LossValue<T> out{0.0, std::vector<T>(pred.probs.size(), T(0))};
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.voxels(); ++i)
        if (mask.empty() || mask[i]) ++count;
    if (count == 0) return out;
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.voxels(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const double p = double(pred.probs[i * c + target[i]]);
        if (p > kProbFloor) {
            sum -= std::log(p);
            out.grad[i * c + target[i]] = T(-1.0 / (p * double(count)));
        } else {
            sum -= std::log(kProbFloor);
        }
    }
    out.value = sum / double(count);
    return out;
}

/// 1 - mean over foreground classes of (2 sum p g + eps) / (sum p + sum g + eps).
template <typename T>
LossValue<T> dice_loss(const ProbField<T>& pred, const LabelVolume& target, std::span<const std::uint8_t> mask = {}) {
    detail_loss::check_pred_target(pred, target, mask);
    const std::size_t c = pred.num_classes;
    const std::size_t fg = c - 1;
    std::vector<double> inter(c, 0.0), psum(c, 0.0), gsum(c, 0.0);
    for (std::size_t i = 0; i < pred.voxels(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        for (std::size_t k = 1; k < c; ++k) {
            const double p = double(pred.probs[i * c + k]);
            const double g = target[i] == k ? 1.0 : 0.0;
            inter[k] += p * g;
            psum[k] += p;
            gsum[k] += g;
        }
    }
    LossValue<T> out{0.0, std::vector<T>(pred.probs.size(), T(0))};
    double score = 0.0;
    std::vector<double> num(c), den(c);
    for (std::size_t k = 1; k < c; ++k) {
        num[k] = 2.0 * inter[k] + kDiceEps;
        den[k] = psum[k] + gsum[k] + kDiceEps;
        score += num[k] / den[k];
    }
    out.value = 1.0 - score / double(fg);
    for (std::size_t i = 0; i < pred.voxels(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        for (std::size_t k = 1; k < c; ++k) {
            const double g = target[i] == k ? 1.0 : 0.0;
            const double d_ratio = (2.0 * g * den[k] - num[k]) / (den[k] * den[k]);
            out.grad[i * c + k] = T(-d_ratio / double(fg));
        }
    }
    return out;
}

/// Cross-entropy plus Dice against the mixed label, unweighted.
template <typename T>
LossValue<T> consistency_loss(const ProbField<T>& pred, const LabelVolume& mixed_label,
                              std::span<const std::uint8_t> mask = {}) {
    auto ce = ce_loss(pred, mixed_label, mask);
    const auto dice = dice_loss(pred, mixed_label, mask);
    ce.value += dice.value;
    for (std::size_t i = 0; i < ce.grad.size(); ++i) ce.grad[i] += dice.grad[i];
    return ce;
}

/// InfoNCE over all C*K prototypes with raw dot-product logits z.p / tau2.
/// The positive is the cosine-nearest prototype. `grad_z`, when non-empty,
/// receives d loss / d z scaled by `scale`.
template <typename T>
double contrastive_loss(std::span<const T> z, const PrototypeBank& bank, double tau2, std::span<T> grad_z = {},
                        double scale = 1.0) {
    if (!(tau2 > 0.0)) throw std::invalid_argument("contrastive_loss: tau2 must be > 0");
    if (z.size() != bank.dim()) throw ShapeError("contrastive_loss: embedding dimension does not match bank");
    const Assignment a = assign(z, bank);
    const std::size_t m = bank.size();
    const std::size_t d = bank.dim();
    const auto protos = bank.vectors();
    std::vector<double> logits(m);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += double(z[t]) * double(protos[j * d + t]);
        logits[j] = s / tau2;
        mx = std::max(mx, logits[j]);
    }
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    const std::size_t pos = a.cls * bank.per_class() + a.proto;
    const double loss = (mx + std::log(sum)) - logits[pos];
    if (!grad_z.empty()) {
        for (std::size_t j = 0; j < m; ++j) {
            const double w = (std::exp(logits[j] - mx) / sum - (j == pos ? 1.0 : 0.0)) * scale / tau2;
            if (w == 0.0) continue;
            for (std::size_t t = 0; t < d; ++t) grad_z[t] += T(w * double(protos[j * d + t]));
        }
    }
    return loss;
}

/// Voxel-averaged contrastive loss; grad is with respect to the embedding field.
template <typename T>
LossValue<T> contrastive_loss(const EmbeddingField<T>& z, const PrototypeBank& bank, double tau2) {
    LossValue<T> out{0.0, std::vector<T>(z.data.size(), T(0))};
    const double n = double(z.voxels());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.voxels(); ++i)
        sum += contrastive_loss<T>(z.at(i), bank, tau2, std::span<T>(out.grad).subspan(i * z.dim, z.dim), 1.0 / n);
    out.value = sum / n;
    return out;
}

// ---------------------------------------------------------------- objective

struct RampSchedule {
    std::size_t length = 600;  // T
    std::size_t iteration = 0; // t
};

/// exp(-5 (1 - min(t, T) / T)^2).
double ramp_lambda(const RampSchedule& sched);

struct LossBreakdown {
    double l_cons_linear = 0.0;
    double l_cons_proto = 0.0;
    double l_contrastive = 0.0;
    double lambda = 0.0;
    double gamma = 0.0;
    double total = 0.0;
};

/// l_lin + lambda * (l_proto + gamma * l_cont).
LossBreakdown total_loss(double l_lin, double l_proto, double l_cont, double lambda, double gamma);

}  // namespace mper
