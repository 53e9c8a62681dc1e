#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mper/metrics.hpp"

using namespace mper;

namespace {

struct P3 {
    long x, y, z;
};

// Independent surface extraction: a voxel is on the surface when any face
// neighbour is outside the grid or outside the mask.
std::vector<P3> oracle_surface(const BinaryMask& m) {
    const Dims g = m.dims;
    auto in = [&](long x, long y, long z) {
        if (x < 0 || y < 0 || z < 0 || x >= long(g.h) || y >= long(g.w) || z >= long(g.d)) return false;
        return m.inside[g.index(std::size_t(x), std::size_t(y), std::size_t(z))] != 0;
    };
    std::vector<P3> out;
    for (long z = 0; z < long(g.d); ++z)
        for (long y = 0; y < long(g.w); ++y)
            for (long x = 0; x < long(g.h); ++x) {
                if (!in(x, y, z)) continue;
                if (!in(x - 1, y, z) || !in(x + 1, y, z) || !in(x, y - 1, z) || !in(x, y + 1, z) ||
                    !in(x, y, z - 1) || !in(x, y, z + 1))
                    out.push_back({x, y, z});
            }
    return out;
}

std::vector<double> oracle_distances(const BinaryMask& a, const BinaryMask& b) {
    const auto sa = oracle_surface(a), sb = oracle_surface(b);
    std::vector<double> d;
    auto one_way = [&](const std::vector<P3>& from, const std::vector<P3>& to) {
        for (const auto& p : from) {
            long best = std::numeric_limits<long>::max();
            for (const auto& q : to) {
                const long dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            d.push_back(std::sqrt(double(best)));
        }
    };
    one_way(sa, sb);
    one_way(sb, sa);
    std::sort(d.begin(), d.end());
    return d;
}

BinaryMask random_mask(Dims g, double density, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(density);
    BinaryMask m{g, std::vector<std::uint8_t>(g.voxels())};
    for (auto& v : m.inside) v = coin(rng) ? 1 : 0;
    return m;
}

BinaryMask mask_from(Dims g, std::initializer_list<std::array<std::size_t, 3>> pts) {
    BinaryMask m{g, std::vector<std::uint8_t>(g.voxels(), 0)};
    for (const auto& p : pts) m.inside[g.index(p[0], p[1], p[2])] = 1;
    return m;
}

}  // namespace

TEST_CASE("dice and jaccard on hand-built masks") {
    const Dims g{4, 2, 1};
    // |P| = 4, |G| = 4, overlap 2.
    const auto p = mask_from(g, {{{0, 0, 0}}, {{1, 0, 0}}, {{2, 0, 0}}, {{3, 0, 0}}});
    const auto q = mask_from(g, {{{2, 0, 0}}, {{3, 0, 0}}, {{0, 1, 0}}, {{1, 1, 0}}});
    const auto dj = dice_jaccard(p, q);
    CHECK(dj.dice == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(dj.jaccard == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
    CHECK(dice_jaccard(p, p).dice == 1.0);
    CHECK(dice_jaccard(p, p).jaccard == 1.0);
    const auto r = mask_from(g, {{{0, 1, 0}}});
    CHECK(dice_jaccard(mask_from(g, {{{0, 0, 0}}}), r).dice == 0.0);
    const BinaryMask empty{g, std::vector<std::uint8_t>(g.voxels(), 0)};
    CHECK(dice_jaccard(empty, empty).dice == 1.0);
    CHECK(dice_jaccard(empty, empty).jaccard == 1.0);
    CHECK(dice_jaccard(empty, p).dice == 0.0);
}

TEST_CASE("dice_jaccard on label volumes selects the class") {
    const LabelVolume a({3, 1, 1}, {0, 1, 2}, 3), b({3, 1, 1}, {0, 1, 1}, 3);
    CHECK(dice_jaccard(a, b, 1).dice == doctest::Approx(2.0 / 3.0));
    CHECK(dice_jaccard(a, b, 2).dice == 0.0);
    CHECK_THROWS_AS(dice_jaccard(a, LabelVolume({2, 1, 1}, {0, 1}, 3), 1), std::invalid_argument);
}

TEST_CASE("surface of a solid block excludes its interior") {
    const Dims g{5, 5, 5};
    BinaryMask m{g, std::vector<std::uint8_t>(g.voxels(), 1)};
    const auto s = surface_voxels(m);
    CHECK(s.size() == 125 - 27);
    for (auto i : s) {
        const auto c = g.coords(i);
        const bool border = c[0] == 0 || c[1] == 0 || c[2] == 0 || c[0] == 4 || c[1] == 4 || c[2] == 4;
        CHECK(border);
    }
}

TEST_CASE("identical masks have zero surface distances") {
    std::mt19937_64 rng(1);
    const auto m = random_mask({6, 5, 4}, 0.4, rng);
    const auto d = surface_distances(m, m);
    REQUIRE(d);
    for (double v : *d) CHECK(v == 0.0);
}

TEST_CASE("single voxels at (0,0,0) and (3,4,0) are 5 apart") {
    const Dims g{5, 5, 1};
    const auto d = surface_distances(mask_from(g, {{{0, 0, 0}}}), mask_from(g, {{{3, 4, 0}}}));
    REQUIRE(d);
    REQUIRE(d->size() == 2);
    for (double v : *d) CHECK(v == 5.0);
    CHECK(hd95(*d) == 5.0);
    CHECK(asd(*d) == 5.0);
}

TEST_CASE("empty masks make surface distances undefined") {
    const Dims g{3, 3, 3};
    const BinaryMask empty{g, std::vector<std::uint8_t>(g.voxels(), 0)};
    CHECK_FALSE(surface_distances(empty, mask_from(g, {{{1, 1, 1}}})).has_value());
    CHECK_FALSE(surface_distances(mask_from(g, {{{1, 1, 1}}}), empty).has_value());
}

TEST_CASE("hd95 and asd formulas") {
    std::vector<double> d(100);
    std::iota(d.begin(), d.end(), 1.0);
    CHECK(hd95(d) == 95.0);
    CHECK(asd(d) == 50.5);
    const std::vector<double> same(7, 2.5);
    CHECK(hd95(same) == 2.5);
    CHECK(asd(same) == 2.5);
    const std::vector<double> one{3.25};
    CHECK(hd95(one) == 3.25);
    CHECK(asd(one) == 3.25);
    CHECK_THROWS_AS(hd95(std::vector<double>{}), std::invalid_argument);
    CHECK_THROWS_AS(asd(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("distance transform agrees with brute force on random seeds") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> ext(1, 7);
    for (int rep = 0; rep < 50; ++rep) {
        const Dims g{ext(rng), ext(rng), ext(rng)};
        const auto seeds = random_mask(g, 0.1, rng);
        const auto dt = squared_distance_transform(g, seeds.inside);
        for (std::size_t i = 0; i < g.voxels(); ++i) {
            const auto p = g.coords(i);
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < g.voxels(); ++j) {
                if (!seeds.inside[j]) continue;
                const auto q = g.coords(j);
                double s = 0.0;
                for (int a = 0; a < 3; ++a) s += (double(p[a]) - double(q[a])) * (double(p[a]) - double(q[a]));
                best = std::min(best, s);
            }
            CHECK(dt[i] == best);
        }
    }
}

TEST_CASE("metrics match the all-pairs oracle on random masks within 5^3") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> ext(1, 5);
    std::uniform_real_distribution<double> dens(0.05, 0.8);
    int checked = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const Dims g{ext(rng), ext(rng), ext(rng)};
        const auto a = random_mask(g, dens(rng), rng);
        const auto b = random_mask(g, dens(rng), rng);
        // Counts by direct enumeration.
        std::size_t na = 0, nb = 0, both = 0;
        for (std::size_t i = 0; i < g.voxels(); ++i) {
            na += a.inside[i];
            nb += b.inside[i];
            both += a.inside[i] && b.inside[i];
        }
        const auto dj = dice_jaccard(a, b);
        if (na + nb > 0) {
            CHECK(dj.dice == 2.0 * double(both) / double(na + nb));
            CHECK(dj.jaccard == double(both) / double(na + nb - both));
            CHECK(std::abs(dj.dice - 2.0 * dj.jaccard / (1.0 + dj.jaccard)) < 1e-12);
            CHECK(dj.dice >= dj.jaccard);
        }
        const auto d = surface_distances(a, b);
        if (na == 0 || nb == 0) {
            CHECK_FALSE(d.has_value());
            continue;
        }
        REQUIRE(d);
        const auto ref = oracle_distances(a, b);
        CHECK(*d == ref);
        const std::size_t rank = std::size_t(std::ceil(0.95 * double(ref.size())));
        CHECK(hd95(*d) == ref[rank - 1]);
        double sum = 0.0;
        for (double v : ref) sum += v;
        CHECK(asd(*d) == doctest::Approx(sum / double(ref.size())).epsilon(1e-15));
        CHECK(hd95(*d) <= ref.back());
        CHECK(asd(*d) <= ref.back());
        // Pooled directions make the metrics symmetric.
        CHECK(*surface_distances(b, a) == *d);
        ++checked;
    }
    CHECK(checked > 150);
}

TEST_CASE("evaluate_case reports per-class rows, macro averages and warnings") {
    const Dims g{4, 4, 1};
    std::vector<std::uint16_t> gt(16, 0), pred(16, 0);
    gt[0] = gt[1] = 1;
    pred[0] = 1;
    gt[10] = 2;  // class 2 missing from the prediction
    const LabelVolume P(g, pred, 3), G(g, gt, 3);
    const auto r = evaluate_case(P, G);
    REQUIRE(r.per_class.size() == 2);
    CHECK(r.per_class[0].cls == 1);
    CHECK(r.per_class[0].dice == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_class[0].hd95.has_value());
    CHECK(r.per_class[1].dice == 0.0);
    CHECK_FALSE(r.per_class[1].hd95.has_value());
    CHECK(r.dice == doctest::Approx((2.0 / 3.0 + 0.0) / 2.0));
    CHECK(r.hd95 == r.per_class[0].hd95);
    CHECK(r.warnings.size() == 1);
    CHECK_THROWS_AS(evaluate_case(P, LabelVolume(g, gt, 4)), std::invalid_argument);
}

TEST_CASE("aggregate_reports averages and skips undefined distances") {
    MetricReport a, b;
    a.dice = 0.8;
    a.jaccard = 0.6;
    a.hd95 = 2.0;
    a.asd = 1.0;
    b.dice = 0.6;
    b.jaccard = 0.4;
    const std::vector<MetricReport> reports{a, b};
    const auto agg = aggregate_reports(reports);
    CHECK(agg.dice == doctest::Approx(0.7));
    CHECK(agg.jaccard == doctest::Approx(0.5));
    CHECK(agg.hd95 == 2.0);
    CHECK(agg.asd == 1.0);
    CHECK(agg.warnings.size() == 1);
}
