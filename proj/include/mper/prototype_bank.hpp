#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "mper/ops.hpp"
#include "mper/tensor.hpp"

namespace mper {

/// Flat list of d-dimensional points.
struct PointSet {
    std::size_t dim = 0;
    std::vector<float> data;

    [[nodiscard]] std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
    [[nodiscard]] std::span<const float> row(std::size_t i) const {
        return std::span<const float>(data).subspan(i * dim, dim);
    }
    template <typename T>
    void push(std::span<const T> v) {
        data.insert(data.end(), v.begin(), v.end());
    }
};

class ClusterStats;

/// C x K prototype vectors of dimension d plus the momentum coefficient eta.
class PrototypeBank {
public:
    PrototypeBank() = default;
    PrototypeBank(std::size_t num_classes, std::size_t per_class, std::size_t dim, double eta,
                  std::vector<float> vectors);

    [[nodiscard]] std::size_t num_classes() const { return classes_; }
    [[nodiscard]] std::size_t per_class() const { return per_class_; }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] std::size_t size() const { return classes_ * per_class_; }
    [[nodiscard]] double eta() const { return eta_; }
    [[nodiscard]] std::span<const float> vectors() const { return vectors_; }
    [[nodiscard]] std::span<const float> prototype(std::size_t c, std::size_t k) const {
        return std::span<const float>(vectors_).subspan((c * per_class_ + k) * dim_, dim_);
    }

    /// Shape (C, K, d).
    [[nodiscard]] Tensor as_tensor() const;
    static PrototypeBank from_tensor(const Tensor& t, double eta);
    [[nodiscard]] std::uint64_t checksum() const;

    friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;
    friend void momentum_update(PrototypeBank& bank, const ClusterStats& stats);

private:
    std::size_t classes_ = 0;
    std::size_t per_class_ = 0;
    std::size_t dim_ = 0;
    double eta_ = 0.999;
    std::vector<float> vectors_;
};

struct KMeansOptions {
    std::size_t per_class = 3;
    std::size_t batch_size = 256;
    std::size_t iters = 10;
    std::uint64_t seed = 0;
};

/// Mini-batch k-means with k-means++ seeding and per-center 1/count learning
/// rates. Returns k centers, row-major. A batch_size >= points.size() uses the
/// full set in every iteration.
std::vector<double> mini_batch_kmeans(const PointSet& points, std::size_t k, std::size_t batch_size,
                                      std::size_t iters, std::mt19937_64& rng);

/// Clusters each class's embeddings independently into K prototypes.
/// Throws std::invalid_argument naming the first class with fewer than K points.
PrototypeBank init_kmeans(const std::vector<PointSet>& per_class, const KMeansOptions& options,
                          double eta);

struct Assignment {
    std::size_t cls = 0;                // class of the most similar prototype
    std::size_t proto = 0;              // its index within that class
    std::vector<double> best_sim;       // per class, best-of-K cosine similarity
    std::vector<std::size_t> best_proto;  // per class, index attaining best_sim
};

/// Cosine-similarity assignment; ties go to the lowest (class, prototype).
template <typename T>
Assignment assign(std::span<const T> z, const PrototypeBank& bank) {
    if (z.size() != bank.dim()) throw ShapeError("assign: embedding dimension does not match bank");
    Assignment a;
    a.best_sim.assign(bank.num_classes(), 0.0);
    a.best_proto.assign(bank.num_classes(), 0);
    double global = 0.0;
    for (std::size_t c = 0; c < bank.num_classes(); ++c) {
        for (std::size_t k = 0; k < bank.per_class(); ++k) {
            const double s = ad::cosine_sim(z, bank.prototype(c, k));
            if (k == 0 || s > a.best_sim[c]) {
                a.best_sim[c] = s;
                a.best_proto[c] = k;
            }
        }
        if (c == 0 || a.best_sim[c] > global) {
            global = a.best_sim[c];
            a.cls = c;
            a.proto = a.best_proto[c];
        }
    }
    return a;
}

/// Indices of voxels eligible for the prototype update: labeled voxels always,
/// unlabeled voxels when their maximum pseudo-probability exceeds alpha.
/// pseudo_probs holds num_classes values per voxel.
std::vector<std::size_t> confidence_filter(std::span<const float> pseudo_probs,
                                           std::size_t num_classes,
                                           std::span<const std::uint8_t> labeled_mask, double alpha);

struct ClusterKey {
    std::size_t cls = 0;
    std::size_t proto = 0;
};

/// Key used for the update: the voxel's (mixed-label) class and the most
/// similar prototype within that class.
inline ClusterKey label_guided_key(const Assignment& a, std::size_t label) {
    return {label, a.best_proto.at(label)};
}

/// Per-(class, prototype) mean embedding and member count.
class ClusterStats {
public:
    ClusterStats(std::size_t num_classes, std::size_t per_class, std::size_t dim);

    void add(const ClusterKey& key, std::span<const float> z);
    [[nodiscard]] std::size_t count(std::size_t c, std::size_t k) const {
        return counts_[c * per_class_ + k];
    }
    /// Absent for empty clusters.
    [[nodiscard]] std::optional<std::vector<double>> mean(std::size_t c, std::size_t k) const;
    [[nodiscard]] std::size_t num_classes() const { return classes_; }
    [[nodiscard]] std::size_t per_class() const { return per_class_; }
    [[nodiscard]] std::size_t dim() const { return dim_; }
    [[nodiscard]] std::size_t total() const;

private:
    std::size_t classes_, per_class_, dim_;
    std::vector<double> sums_;
    std::vector<std::size_t> counts_;
};

ClusterStats cluster_stats(const PointSet& members, std::span<const ClusterKey> keys,
                           std::size_t num_classes, std::size_t per_class);

/// p <- eta * p + (1 - eta) * mean for every non-empty cluster; prototypes of
/// empty clusters are left bit-for-bit unchanged.
void momentum_update(PrototypeBank& bank, const ClusterStats& stats);

/// CSV: class,proto,dim0..dim{d-1}
void write_prototypes_csv(std::ostream& os, const PrototypeBank& bank);

}  // namespace mper
