#include "mper/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mper {

bool BinaryMask::empty() const { return count() == 0; }

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), std::uint8_t{1}));
}

BinaryMask class_mask(const LabelVolume& labels, std::uint16_t cls) {
    BinaryMask m{labels.dims(), std::vector<std::uint8_t>(labels.dims().voxels(), 0)};
    for (std::size_t i = 0; i < m.inside.size(); ++i) m.inside[i] = labels[i] == cls ? 1 : 0;
    return m;
}

DiceJaccard dice_jaccard(const BinaryMask& pred, const BinaryMask& gt) {
    if (!(pred.dims == gt.dims)) throw std::invalid_argument("dice_jaccard: dims differ");
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.inside.size(); ++i) {
        p += pred.inside[i];
        g += gt.inside[i];
        both += pred.inside[i] & gt.inside[i];
    }
    if (p + g == 0) return {1.0, 1.0};
    return {2.0 * double(both) / double(p + g), double(both) / double(p + g - both)};
}

DiceJaccard dice_jaccard(const LabelVolume& pred, const LabelVolume& gt, std::uint16_t cls) {
    return dice_jaccard(class_mask(pred, cls), class_mask(gt, cls));
}

std::vector<std::size_t> surface_voxels(const BinaryMask& mask) {
    const Dims& g = mask.dims;
    std::vector<std::size_t> out;
    for (std::size_t z = 0; z < g.d; ++z)
        for (std::size_t y = 0; y < g.w; ++y)
            for (std::size_t x = 0; x < g.h; ++x) {
                const std::size_t i = g.index(x, y, z);
                if (!mask.inside[i]) continue;
                const bool border = x == 0 || y == 0 || z == 0 || x + 1 == g.h || y + 1 == g.w || z + 1 == g.d;
                if (border || !mask.inside[i - 1] || !mask.inside[i + 1] || !mask.inside[i - g.h] ||
                    !mask.inside[i + g.h] || !mask.inside[i - g.h * g.w] || !mask.inside[i + g.h * g.w])
                    out.push_back(i);
            }
    return out;
}

namespace {

// Exact 1D squared distance transform by the lower envelope of parabolas.
void edt_1d(const double* f, std::size_t n, double* out, std::vector<std::size_t>& v, std::vector<double>& zb) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.resize(n);
    zb.resize(n + 1);
    std::size_t k = 0;
    std::size_t first = n;
    for (std::size_t q = 0; q < n; ++q)
        if (f[q] < inf) {
            first = q;
            break;
        }
    if (first == n) {
        std::fill(out, out + n, inf);
        return;
    }
    v[0] = first;
    zb[0] = -inf;
    zb[1] = inf;
    for (std::size_t q = first + 1; q < n; ++q) {
        if (f[q] == inf) continue;
        double s;
        while (true) {
            const double p = double(v[k]);
            s = ((f[q] + double(q) * double(q)) - (f[v[k]] + p * p)) / (2.0 * double(q) - 2.0 * p);
            if (s <= zb[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        zb[k] = s;
        zb[k + 1] = inf;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (zb[k + 1] < double(q)) ++k;
        const double diff = double(q) - double(v[k]);
        out[q] = diff * diff + f[v[k]];
    }
}

}  // namespace

std::vector<double> squared_distance_transform(const Dims& dims, std::span<const std::uint8_t> seeds) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (seeds.size() != dims.voxels()) throw std::invalid_argument("distance transform: size mismatch");
    std::vector<double> f(seeds.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = seeds[i] ? 0.0 : inf;
    const std::size_t ext[3] = {dims.h, dims.w, dims.d};
    const std::size_t step[3] = {1, dims.h, dims.h * dims.w};
    std::vector<double> line, res;
    std::vector<std::size_t> v;
    std::vector<double> zb;
    for (int axis = 0; axis < 3; ++axis) {
        const std::size_t n = ext[axis];
        line.resize(n);
        res.resize(n);
        for (std::size_t start = 0; start < f.size(); ++start) {
            // Visit each line once, from its first element along `axis`.
            if ((start / step[axis]) % n != 0) continue;
            for (std::size_t q = 0; q < n; ++q) line[q] = f[start + q * step[axis]];
            edt_1d(line.data(), n, res.data(), v, zb);
            for (std::size_t q = 0; q < n; ++q) f[start + q * step[axis]] = res[q];
        }
    }
    return f;
}

std::optional<std::vector<double>> surface_distances(const BinaryMask& pred, const BinaryMask& gt) {
    if (!(pred.dims == gt.dims)) throw std::invalid_argument("surface_distances: dims differ");
    if (pred.empty() || gt.empty()) return std::nullopt;
    const auto sp = surface_voxels(pred);
    const auto sg = surface_voxels(gt);
    std::vector<std::uint8_t> seed_p(pred.inside.size(), 0), seed_g(gt.inside.size(), 0);
    for (auto i : sp) seed_p[i] = 1;
    for (auto i : sg) seed_g[i] = 1;
    const auto to_g = squared_distance_transform(gt.dims, seed_g);
    const auto to_p = squared_distance_transform(pred.dims, seed_p);
    std::vector<double> d;
    d.reserve(sp.size() + sg.size());
    for (auto i : sp) d.push_back(std::sqrt(to_g[i]));
    for (auto i : sg) d.push_back(std::sqrt(to_p[i]));
    std::sort(d.begin(), d.end());
    return d;
}

double hd95(std::span<const double> sorted) {
    if (sorted.empty()) throw std::invalid_argument("hd95: empty distance list");
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * double(sorted.size())));
    return sorted[std::max<std::size_t>(rank, 1) - 1];
}

double asd(std::span<const double> distances) {
    if (distances.empty()) throw std::invalid_argument("asd: empty distance list");
    return std::accumulate(distances.begin(), distances.end(), 0.0) / double(distances.size());
}

MetricReport evaluate_case(const LabelVolume& pred, const LabelVolume& gt) {
    if (!(pred.dims() == gt.dims())) throw std::invalid_argument("evaluate_case: dims differ");
    if (pred.num_classes() != gt.num_classes()) throw std::invalid_argument("evaluate_case: class counts differ");
    MetricReport r;
    double hd_sum = 0.0, asd_sum = 0.0;
    std::size_t defined = 0;
    for (std::uint16_t c = 1; c < gt.num_classes(); ++c) {
        const auto pm = class_mask(pred, c);
        const auto gm = class_mask(gt, c);
        ClassMetrics cm;
        cm.cls = c;
        const auto dj = dice_jaccard(pm, gm);
        cm.dice = dj.dice;
        cm.jaccard = dj.jaccard;
        if (auto d = surface_distances(pm, gm)) {
            cm.hd95 = hd95(*d);
            cm.asd = asd(*d);
            hd_sum += *cm.hd95;
            asd_sum += *cm.asd;
            ++defined;
        } else {
            r.warnings.push_back("class " + std::to_string(c) + ": empty mask, surface distances undefined");
        }
        r.dice += cm.dice;
        r.jaccard += cm.jaccard;
        r.per_class.push_back(cm);
    }
    const double fg = double(r.per_class.size());
    r.dice /= fg;
    r.jaccard /= fg;
    if (defined > 0) {
        r.hd95 = hd_sum / double(defined);
        r.asd = asd_sum / double(defined);
    }
    return r;
}

MetricReport aggregate_reports(std::span<const MetricReport> cases) {
    MetricReport r;
    if (cases.empty()) return r;
    double hd_sum = 0.0, asd_sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        r.dice += cases[i].dice;
        r.jaccard += cases[i].jaccard;
        if (cases[i].hd95) {
            hd_sum += *cases[i].hd95;
            asd_sum += *cases[i].asd;
            ++defined;
        } else {
            r.warnings.push_back("case " + std::to_string(i) + ": surface distances undefined, excluded");
        }
    }
    r.dice /= double(cases.size());
    r.jaccard /= double(cases.size());
    if (defined > 0) {
        r.hd95 = hd_sum / double(defined);
        r.asd = asd_sum / double(defined);
    }
    return r;
}

}  // namespace mper
