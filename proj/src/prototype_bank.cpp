#include "mper/prototype_bank.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace mper {

PrototypeBank::PrototypeBank(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                             double eta, std::vector<float> vectors)
    : classes_(num_classes), per_class_(per_class), dim_(dim), eta_(eta), vectors_(std::move(vectors)) {
    if (classes_ == 0 || per_class_ == 0 || dim_ == 0)
        throw std::invalid_argument("PrototypeBank: C, K and d must be positive");
    // eta = 0 is admitted so the update can be checked against exact means.
    if (!(eta_ >= 0.0 && eta_ < 1.0)) throw std::invalid_argument("PrototypeBank: eta must lie in [0, 1)");
    if (vectors_.size() != classes_ * per_class_ * dim_)
        throw ShapeError("PrototypeBank: expected " + std::to_string(classes_ * per_class_ * dim_) +
                         " values, got " + std::to_string(vectors_.size()));
    ensure_finite<float>(vectors_, "PrototypeBank");
}

Tensor PrototypeBank::as_tensor() const { return Tensor({classes_, per_class_, dim_}, vectors_); }

PrototypeBank PrototypeBank::from_tensor(const Tensor& t, double eta) {
    if (t.rank() != 3) throw ShapeError("prototypes tensor must have shape (C, K, d)");
    return PrototypeBank(t.dim(0), t.dim(1), t.dim(2), eta, t.values());
}

std::uint64_t PrototypeBank::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (float v : vectors_) {
        h ^= std::bit_cast<std::uint32_t>(v);
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

double squared_distance(std::span<const float> a, const double* b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = double(a[i]) - b[i];
        s += diff * diff;
    }
    return s;
}

std::size_t nearest_center(std::span<const float> x, const std::vector<double>& centers, std::size_t k) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(x, centers.data() + c * x.size());
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

std::vector<double> kmeans_pp_seed(const PointSet& points, std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = points.size();
    const std::size_t d = points.dim;
    std::vector<double> centers(k * d);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto place = [&](std::size_t c, std::size_t i) {
        const auto row = points.row(i);
        std::copy(row.begin(), row.end(), centers.begin() + std::ptrdiff_t(c * d));
    };
    place(0, pick(rng));
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(points.row(i), centers.data() + (c - 1) * d));
            total += d2[i];
        }
        std::size_t chosen = pick(rng);
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= target && d2[i] > 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        place(c, chosen);
    }
    return centers;
}

}  // namespace

std::vector<double> mini_batch_kmeans(const PointSet& points, std::size_t k, std::size_t batch_size,
                                      std::size_t iters, std::mt19937_64& rng) {
    const std::size_t n = points.size();
    const std::size_t d = points.dim;
    if (k == 0 || n < k) throw std::invalid_argument("mini_batch_kmeans: need at least k points");
    if (batch_size == 0) throw std::invalid_argument("mini_batch_kmeans: batch_size must be positive");
    std::vector<double> centers = kmeans_pp_seed(points, k, rng);
    std::vector<std::size_t> counts(k, 0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t b = std::min(batch_size, n);
    std::vector<std::size_t> nearest(b);
    for (std::size_t it = 0; it < iters; ++it) {
        if (b < n) {
            // Partial Fisher-Yates: the first b entries become the batch.
            for (std::size_t i = 0; i < b; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, n - 1);
                std::swap(order[i], order[pick(rng)]);
            }
        }
        for (std::size_t i = 0; i < b; ++i) nearest[i] = nearest_center(points.row(order[i]), centers, k);
        for (std::size_t i = 0; i < b; ++i) {
            const std::size_t c = nearest[i];
            const double lr = 1.0 / double(++counts[c]);
            const auto x = points.row(order[i]);
            for (std::size_t j = 0; j < d; ++j)
                centers[c * d + j] = (1.0 - lr) * centers[c * d + j] + lr * double(x[j]);
        }
    }
    return centers;
}

PrototypeBank init_kmeans(const std::vector<PointSet>& per_class, const KMeansOptions& options,
                          double eta) {
    if (per_class.size() < 2) throw std::invalid_argument("init_kmeans: need at least two classes");
    const std::size_t k = options.per_class;
    const std::size_t d = per_class.front().dim;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        if (per_class[c].dim != d) throw ShapeError("init_kmeans: class " + std::to_string(c) + " has a different dimension");
        if (per_class[c].size() < k)
            throw std::invalid_argument("init_kmeans: class " + std::to_string(c) + " has " +
                                        std::to_string(per_class[c].size()) + " embeddings, needs at least " +
                                        std::to_string(k));
    }
    std::mt19937_64 rng(options.seed);
    std::vector<float> vectors;
    vectors.reserve(per_class.size() * k * d);
    for (const auto& points : per_class) {
        const auto centers = mini_batch_kmeans(points, k, options.batch_size, options.iters, rng);
        for (double v : centers) vectors.push_back(float(v));
    }
    return PrototypeBank(per_class.size(), k, d, eta, std::move(vectors));
}

std::vector<std::size_t> confidence_filter(std::span<const float> pseudo_probs, std::size_t num_classes,
                                           std::span<const std::uint8_t> labeled_mask, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("confidence_filter: alpha must lie in [0, 1]");
    if (pseudo_probs.size() != labeled_mask.size() * num_classes)
        throw ShapeError("confidence_filter: probability and mask lengths disagree");
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < labeled_mask.size(); ++i) {
        if (labeled_mask[i]) {
            kept.push_back(i);
            continue;
        }
        float mx = pseudo_probs[i * num_classes];
        for (std::size_t c = 1; c < num_classes; ++c) mx = std::max(mx, pseudo_probs[i * num_classes + c]);
        if (double(mx) > alpha) kept.push_back(i);
    }
    return kept;
}

ClusterStats::ClusterStats(std::size_t num_classes, std::size_t per_class, std::size_t dim)
    : classes_(num_classes),
      per_class_(per_class),
      dim_(dim),
      sums_(num_classes * per_class * dim, 0.0),
      counts_(num_classes * per_class, 0) {}

void ClusterStats::add(const ClusterKey& key, std::span<const float> z) {
    if (key.cls >= classes_ || key.proto >= per_class_) throw std::out_of_range("ClusterStats: key out of range");
    if (z.size() != dim_) throw ShapeError("ClusterStats: embedding dimension mismatch");
    const std::size_t slot = key.cls * per_class_ + key.proto;
    ++counts_[slot];
    for (std::size_t j = 0; j < dim_; ++j) sums_[slot * dim_ + j] += double(z[j]);
}

std::optional<std::vector<double>> ClusterStats::mean(std::size_t c, std::size_t k) const {
    const std::size_t slot = c * per_class_ + k;
    if (counts_[slot] == 0) return std::nullopt;
    std::vector<double> m(dim_);
    for (std::size_t j = 0; j < dim_; ++j) m[j] = sums_[slot * dim_ + j] / double(counts_[slot]);
    return m;
}

std::size_t ClusterStats::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

ClusterStats cluster_stats(const PointSet& members, std::span<const ClusterKey> keys, std::size_t num_classes,
                           std::size_t per_class) {
    if (members.size() != keys.size()) throw ShapeError("cluster_stats: one key per member required");
    ClusterStats stats(num_classes, per_class, members.dim);
    for (std::size_t i = 0; i < keys.size(); ++i) stats.add(keys[i], members.row(i));
    return stats;
}

void momentum_update(PrototypeBank& bank, const ClusterStats& stats) {
    if (stats.num_classes() != bank.num_classes() || stats.per_class() != bank.per_class() ||
        stats.dim() != bank.dim())
        throw ShapeError("momentum_update: statistics do not match the bank layout");
    const double eta = bank.eta();
    for (std::size_t c = 0; c < bank.num_classes(); ++c)
        for (std::size_t k = 0; k < bank.per_class(); ++k) {
            const auto mean = stats.mean(c, k);
            if (!mean) continue;
            float* p = bank.vectors_.data() + (c * bank.per_class() + k) * bank.dim();
            for (std::size_t j = 0; j < bank.dim(); ++j)
                p[j] = float(eta * double(p[j]) + (1.0 - eta) * (*mean)[j]);
        }
    ensure_finite<float>(bank.vectors_, "momentum_update");
}

void write_prototypes_csv(std::ostream& os, const PrototypeBank& bank) {
    os << "class,proto";
    for (std::size_t j = 0; j < bank.dim(); ++j) os << ",dim" << j;
    os << '\n';
    os.precision(9);
    for (std::size_t c = 0; c < bank.num_classes(); ++c)
        for (std::size_t k = 0; k < bank.per_class(); ++k) {
            os << c << ',' << k;
            for (float v : bank.prototype(c, k)) os << ',' << v;
            os << '\n';
        }
}

}  // namespace mper
