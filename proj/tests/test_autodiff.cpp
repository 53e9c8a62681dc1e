#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mper/gradcheck.hpp"
#include "mper/ops.hpp"
#include "test_util.hpp"

using namespace mper;
using namespace mper::ad;
using testutil::normal_tensor;
using testutil::normal_vec;

namespace {

// Direct seven-loop convolution used as the reference.
FeatureMap<double> naive_conv(const FeatureMap<double>& in, const BasicTensor<double>& k,
                              const BasicTensor<double>& b) {
    const Dims g = in.dims;
    const std::size_t cout = k.dim(0), cin = k.dim(1);
    FeatureMap<double> out(cout, g);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t z = 0; z < g.d; ++z)
            for (std::size_t y = 0; y < g.w; ++y)
                for (std::size_t x = 0; x < g.h; ++x) {
                    double s = b[co];
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (int dz = -1; dz <= 1; ++dz)
                            for (int dy = -1; dy <= 1; ++dy)
                                for (int dx = -1; dx <= 1; ++dx) {
                                    const long xx = long(x) + dx, yy = long(y) + dy, zz = long(z) + dz;
                                    if (xx < 0 || yy < 0 || zz < 0 || xx >= long(g.h) || yy >= long(g.w) ||
                                        zz >= long(g.d))
                                        continue;
                                    const std::size_t t = std::size_t((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1));
                                    s += k[(co * cin + ci) * 27 + t] *
                                         in.channel(ci)[g.index(std::size_t(xx), std::size_t(yy), std::size_t(zz))];
                                }
                    out.channel(co)[g.index(x, y, z)] = s;
                }
    return out;
}

FeatureMap<double> random_map(std::size_t c, Dims g, std::mt19937_64& rng) {
    FeatureMap<double> m(c, g);
    m.data = normal_vec(m.data.size(), rng);
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("conv3d with zero kernel outputs the bias") {
    FeatureMap<double> in(2, {3, 4, 5}, 1.5);
    BasicTensor<double> k({3, 2, 3, 3, 3});
    BasicTensor<double> b({3}, std::vector<double>{0.5, -1.0, 2.0});
    const auto out = conv3d_forward(in, k, b);
    for (std::size_t c = 0; c < 3; ++c)
        for (double v : out.channel(c)) CHECK(v == b[c]);
}

TEST_CASE("conv3d with centre-tap kernel is the identity") {
    std::mt19937_64 rng(1);
    const auto in = random_map(1, {5, 6, 7}, rng);
    BasicTensor<double> k({1, 1, 3, 3, 3});
    k[13] = 1.0;
    const auto out = conv3d_forward(in, k, BasicTensor<double>({1}));
    CHECK(out.data == in.data);
}

TEST_CASE("conv3d forward matches direct loops across channel counts and odd sizes") {
    std::mt19937_64 rng(2);
    for (auto [cin, cout, g] : {std::tuple{1ul, 8ul, Dims{4, 4, 4}}, std::tuple{3ul, 5ul, Dims{17, 3, 2}},
                                std::tuple{8ul, 16ul, Dims{9, 5, 3}}, std::tuple{16ul, 13ul, Dims{33, 2, 4}}}) {
        const auto in = random_map(cin, g, rng);
        const auto k = normal_tensor({cout, cin, 3, 3, 3}, rng);
        const auto b = normal_tensor({cout}, rng);
        const auto fast = conv3d_forward(in, k, b);
        const auto ref = naive_conv(in, k, b);
        for (std::size_t i = 0; i < ref.data.size(); ++i) REQUIRE(fast.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv3d shape errors name the axis") {
    FeatureMap<double> in(2, {3, 3, 3});
    CHECK_THROWS_WITH_AS(conv3d_forward(in, BasicTensor<double>({4, 3, 3, 3, 3}), BasicTensor<double>({4})),
                         doctest::Contains("axis 1"), ShapeError);
    CHECK_THROWS_WITH_AS(conv3d_forward(in, BasicTensor<double>({4, 2, 3, 5, 3}), BasicTensor<double>({4})),
                         doctest::Contains("axis 3"), ShapeError);
    CHECK_THROWS_WITH_AS(conv3d_forward(in, BasicTensor<double>({4, 2, 3, 3, 3}), BasicTensor<double>({5})),
                         doctest::Contains("axis 0"), ShapeError);
}

TEST_CASE("conv3d backward matches finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(100 + seed);
        const Dims g{4, 4, 4};
        const std::size_t cin = 1 + seed % 2, cout = 2 + seed;
        const auto in = random_map(cin, g, rng);
        const auto k = normal_tensor({cout, cin, 3, 3, 3}, rng);
        const auto b = normal_tensor({cout}, rng);
        FeatureMap<double> up(cout, g);
        up.data = normal_vec(up.data.size(), rng);
        const auto grads = conv3d_backward(in, k, up);

        auto loss = [&](const FeatureMap<double>& x, const BasicTensor<double>& kk, const BasicTensor<double>& bb) {
            return dot(conv3d_forward(x, kk, bb).data, up.data);
        };
        const auto gi = fd_check([&](std::span<const double> v) {
            FeatureMap<double> x(cin, g);
            x.data.assign(v.begin(), v.end());
            return loss(x, k, b);
        }, in.data, grads.input.data);
        CHECK(gi.max_rel_error < 1e-3);
        const auto gk = fd_check([&](std::span<const double> v) {
            return loss(in, BasicTensor<double>(k.shape(), {v.begin(), v.end()}), b);
        }, k.data(), grads.kernel.data());
        CHECK(gk.max_rel_error < 1e-3);
        const auto gb = fd_check([&](std::span<const double> v) {
            return loss(in, k, BasicTensor<double>(b.shape(), {v.begin(), v.end()}));
        }, b.data(), grads.bias.data());
        CHECK(gb.max_rel_error < 1e-3);
    }
}

TEST_CASE("conv3d backward on a wide grid agrees with the adjoint identity") {
    // <conv(x), u> = <x, conv^T(u)> checks the blocked input-gradient path on
    // a grid larger than one register block.
    std::mt19937_64 rng(7);
    const Dims g{35, 6, 3};
    const auto in = random_map(8, g, rng);
    const auto k = normal_tensor({16, 8, 3, 3, 3}, rng);
    FeatureMap<double> up(16, g);
    up.data = normal_vec(up.data.size(), rng);
    const auto out = conv3d_forward(in, k, BasicTensor<double>({16}));
    const auto grads = conv3d_backward(in, k, up);
    CHECK(dot(out.data, up.data) == doctest::Approx(dot(in.data, grads.input.data)).epsilon(1e-10));
    // Kernel gradient: <conv_k(x), u> is linear in k.
    CHECK(dot(out.data, up.data) == doctest::Approx(dot(k.data(), grads.kernel.data())).epsilon(1e-10));
}

TEST_CASE("conv3d float storage tracks the double path") {
    std::mt19937_64 rng(3);
    const auto in = random_map(2, {6, 5, 4}, rng);
    const auto k = normal_tensor({3, 2, 3, 3, 3}, rng);
    FeatureMap<float> inf(2, in.dims);
    std::copy(in.data.begin(), in.data.end(), inf.data.begin());
    const auto outf = conv3d_forward(inf, k.cast<float>(), BasicTensor<float>({3}));
    const auto outd = conv3d_forward(in, k, BasicTensor<double>({3}));
    for (std::size_t i = 0; i < outd.data.size(); ++i) CHECK(outf.data[i] == doctest::Approx(outd.data[i]).epsilon(1e-5));
}

TEST_CASE("relu forward and backward") {
    const std::vector<double> x{-1.0, 0.0, 1.0};
    const std::vector<double> up{5.0, 5.0, 5.0};
    CHECK(relu_forward<double>(x) == std::vector<double>{0.0, 0.0, 1.0});
    const auto g = relu_backward<double>(x, up);
    CHECK(g[0] == 0.0);
    CHECK(g[2] == 5.0);
    CHECK_THROWS_AS(relu_backward<double>(x, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("linear forward and finite-difference gradients") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(200 + seed);
        const auto x = normal_vec(8, rng);
        const auto w = normal_tensor({3, 8}, rng);
        const auto b = normal_vec(3, rng);
        const auto up = normal_vec(3, rng);
        const auto y = linear_forward<double>(x, w, b);
        for (std::size_t o = 0; o < 3; ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < 8; ++i) s += w[o * 8 + i] * x[i];
            CHECK(y[o] == doctest::Approx(s).epsilon(1e-14));
        }
        const auto g = linear_backward<double>(x, w, up);
        const auto gx = fd_check([&](std::span<const double> v) {
            return dot(linear_forward<double>(v, w, b), up);
        }, x, g.input);
        CHECK(gx.max_rel_error < 1e-4);
        const auto gw = fd_check([&](std::span<const double> v) {
            return dot(linear_forward<double>(x, BasicTensor<double>({3, 8}, {v.begin(), v.end()}), b), up);
        }, w.data(), g.weights.data());
        CHECK(gw.max_rel_error < 1e-4);
        const auto gb = fd_check([&](std::span<const double> v) { return dot(linear_forward<double>(x, w, v), up); },
                                 b, g.bias);
        CHECK(gb.max_rel_error < 1e-4);
    }
    CHECK_THROWS_AS(linear_forward<double>(std::vector<double>(4), BasicTensor<double>({3, 8})), ShapeError);
}

TEST_CASE("softmax values, invariances and errors") {
    const std::vector<double> eq(4, 2.5);
    for (double p : softmax<double>(eq)) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
    const auto s = softmax<double>(std::vector<double>{10.0, 0.0});
    const double e10 = std::exp(10.0);
    CHECK(s[0] == doctest::Approx(e10 / (e10 + 1.0)).epsilon(1e-15));
    CHECK(std::abs(s[0] - 0.9999546) < 1e-7);
    CHECK(std::abs(s[1] - 0.0000454) < 1e-7);
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        auto l = normal_vec(6, rng, 5.0);
        const auto p = softmax<double>(l, 0.3);
        double sum = 0.0;
        for (double v : p) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-6);
        for (auto& v : l) v += 123.0;
        const auto q = softmax<double>(l, 0.3);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-6);
    }
    CHECK_NOTHROW(softmax<double>(std::vector<double>{1000.0, -1000.0}));
    CHECK_THROWS_AS(softmax<double>(eq, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(softmax<double>(eq, -1.0), std::invalid_argument);
}

TEST_CASE("softmax backward matches finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(300 + seed);
        const auto l = normal_vec(5, rng);
        const auto up = normal_vec(5, rng);
        for (double temp : {1.0, 0.1}) {
            const auto y = softmax<double>(l, temp);
            const auto g = softmax_backward<double>(y, up, temp);
            const auto r = fd_check([&](std::span<const double> v) { return dot(softmax<double>(v, temp), up); }, l, g,
                                    temp < 1.0 ? 1e-5 : 1e-4);
            CHECK(r.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("cosine similarity values and gradient") {
    const std::vector<double> a{1.0, 2.0}, b{3.0, 4.0};
    CHECK(cosine_sim<double, double>(a, b) == doctest::Approx(11.0 / (std::sqrt(5.0) * 5.0)).epsilon(1e-15));
    CHECK(std::abs(cosine_sim<double, double>(a, b) - 0.98387) < 1e-5);
    CHECK(cosine_sim<double, double>(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_sim<double, double>(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
    const std::vector<double> zero{0.0, 0.0};
    CHECK(cosine_sim<double, double>(zero, b) == 0.0);
    CHECK_THROWS_AS((cosine_sim<double, double>(a, std::vector<double>{1.0})), ShapeError);

    std::mt19937_64 rng(9);
    for (int seed = 0; seed < 5; ++seed) {
        const auto x = normal_vec(6, rng);
        const auto y = normal_vec(6, rng);
        std::vector<double> twice(x);
        for (auto& v : twice) v *= 2.0;
        CHECK(std::abs(cosine_sim<double, double>(x, y) - cosine_sim<double, double>(twice, y)) < 1e-6);
        std::vector<double> g(6, 0.0);
        cosine_sim_backward<double, double>(x, y, 1.0, g);
        const auto r = fd_check([&](std::span<const double> v) { return cosine_sim<double, double>(v, y); }, x, g);
        CHECK(r.max_rel_error < 1e-3);
    }
}

TEST_CASE("sgd step arithmetic and closed-form decay") {
    BasicTensor<double> p({1}, std::vector<double>{1.0});
    BasicTensor<double> g({1}, std::vector<double>{2.0});
    BasicTensor<double>* ps[] = {&p};
    const BasicTensor<double>* gs[] = {&g};
    sgd_step<double>(ps, gs, 0.1);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));

    BasicTensor<double> zero({1});
    const BasicTensor<double>* zs[] = {&zero};
    sgd_step<double>(ps, zs, 0.1);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-15));

    // f(p) = p^2, gradient 2p.
    p[0] = 1.0;
    for (int i = 0; i < 50; ++i) {
        g[0] = 2.0 * p[0];
        sgd_step<double>(ps, gs, 0.1);
    }
    CHECK(std::abs(p[0] - std::pow(0.8, 50)) < 1e-6);

    CHECK_THROWS_AS(sgd_step<double>(ps, gs, 0.0), std::invalid_argument);
    BasicTensor<double> wrong({2});
    const BasicTensor<double>* ws[] = {&wrong};
    CHECK_THROWS_AS(sgd_step<double>(ps, ws, 0.1), ShapeError);
}

TEST_CASE("non-finite values are rejected") {
    BasicTensor<double> p({1}, std::vector<double>{1.0});
    BasicTensor<double> g({1}, std::vector<double>{std::numeric_limits<double>::infinity()});
    BasicTensor<double>* ps[] = {&p};
    const BasicTensor<double>* gs[] = {&g};
    CHECK_THROWS_AS(sgd_step<double>(ps, gs, 0.1), NonFiniteError);
    const std::vector<double> bad{1.0, std::nan("")};
    CHECK_THROWS_AS(linear_forward<double>(bad, BasicTensor<double>({1, 2}, {1.0, 1.0})), NonFiniteError);
}

TEST_CASE("fd_check detects a corrupted gradient and validates eps") {
    std::mt19937_64 rng(11);
    const auto x = normal_vec(8, rng);
    const auto w = normal_tensor({3, 8}, rng);
    const auto up = normal_vec(3, rng);
    auto g = linear_backward<double>(x, w, up).input;
    for (auto& v : g) v *= 2.0;
    const auto r = fd_check([&](std::span<const double> v) { return dot(linear_forward<double>(v, w), up); }, x, g);
    CHECK(r.max_rel_error > 0.4);
    CHECK_FALSE(r.passed(1e-3));
    CHECK_THROWS_AS(fd_check([](std::span<const double>) { return 0.0; }, x, g, 1e-7), std::invalid_argument);
    CHECK_THROWS_AS(fd_check([](std::span<const double>) { return 0.0; }, x, g, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(fd_check([](std::span<const double>) { return 0.0; }, x, std::vector<double>(3)),
                    std::invalid_argument);
}
