#include "mper/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "mper/gradcheck.hpp"
#include "mper/losses.hpp"
#include "mper/metrics.hpp"

namespace mper {

namespace {

constexpr double kGradTol = 1e-3;
constexpr double kOracleTol = 1e-6;
constexpr double kEps = 1e-4;

using Rng = std::mt19937_64;

std::vector<double> normal(std::size_t n, Rng& rng, double sd = 1.0) {
    std::normal_distribution<double> g(0.0, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

PrototypeBank random_bank(std::size_t c, std::size_t k, std::size_t d, Rng& rng) {
    const auto v = normal(c * k * d, rng);
    return PrototypeBank(c, k, d, 0.9, std::vector<float>(v.begin(), v.end()));
}

LabelVolume random_labels(Dims g, std::uint16_t c, Rng& rng) {
    std::uniform_int_distribution<int> pick(0, c - 1);
    std::vector<std::uint16_t> l(g.voxels());
    for (auto& v : l) v = std::uint16_t(pick(rng));
    return LabelVolume(g, std::move(l), c);
}

EmbeddingField<double> as_field(Dims g, std::size_t d, std::span<const double> x) {
    EmbeddingField<double> z(g, d);
    z.data.assign(x.begin(), x.end());
    return z;
}

// One gradient case: a scalar function, the point, and its analytic gradient.
struct GradCase {
    ad::ScalarFn f;
    std::vector<double> x;
    std::vector<double> grad;
};

class Harness {
public:
    explicit Harness(const SelfTestOptions& o) : opt_(o) {}

    void grad(const std::string& name, const std::function<GradCase(Rng&)>& make) {
        double worst = 0.0;
        for (std::size_t s = 0; s < opt_.seeds_per_check; ++s) {
            Rng rng(opt_.seed * 1000 + s);
            GradCase c = make(rng);
            if (opt_.inject_gradient_fault)
                for (auto& g : c.grad) g *= 2.0;
            worst = std::max(worst, ad::fd_check(c.f, c.x, c.grad, kEps).max_rel_error);
        }
        checks_.push_back({name, worst, kGradTol, worst < kGradTol});
    }

    void oracle(const std::string& name, std::size_t reps, const std::function<double(Rng&)>& run) {
        Rng rng(opt_.seed + 7);
        double worst = 0.0;
        for (std::size_t r = 0; r < reps; ++r) worst = std::max(worst, run(rng));
        checks_.push_back({name, worst, kOracleTol, worst <= kOracleTol});
    }

    std::vector<SelfTestCheck> take() { return std::move(checks_); }

private:
    SelfTestOptions opt_;
    std::vector<SelfTestCheck> checks_;
};

void gradient_checks(Harness& h) {
    const Dims g{4, 3, 2};

    auto conv_case = [g](int which) {
        return [g, which](Rng& rng) {
            const std::size_t cin = 2, cout = 3;
            FeatureMap<double> in(cin, g);
            in.data = normal(in.data.size(), rng);
            BasicTensor<double> k({cout, cin, 3, 3, 3}, normal(cout * cin * 27, rng, 0.3));
            BasicTensor<double> b({cout}, normal(cout, rng));
            const auto w = normal(cout * g.voxels(), rng);  // loss = <w, conv(x)>
            auto loss = [w](const FeatureMap<double>& out) {
                double s = 0.0;
                for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * out.data[i];
                return s;
            };
            FeatureMap<double> up(cout, g);
            up.data = w;
            const auto grads = ad::conv3d_backward(in, k, up, true);
            GradCase c;
            if (which == 0) {
                c.f = [=](std::span<const double> x) {
                    FeatureMap<double> m(cin, g);
                    m.data.assign(x.begin(), x.end());
                    return loss(ad::conv3d_forward(m, k, b));
                };
                c.x = in.data;
                c.grad = grads.input.data;
            } else if (which == 1) {
                c.f = [=](std::span<const double> x) {
                    return loss(ad::conv3d_forward(in, BasicTensor<double>(k.shape(), {x.begin(), x.end()}), b));
                };
                c.x = k.values();
                c.grad = grads.kernel.values();
            } else {
                c.f = [=](std::span<const double> x) {
                    return loss(ad::conv3d_forward(in, k, BasicTensor<double>(b.shape(), {x.begin(), x.end()})));
                };
                c.x = b.values();
                c.grad = grads.bias.values();
            }
            return c;
        };
    };
    h.grad("conv3d.input", conv_case(0));
    h.grad("conv3d.kernel", conv_case(1));
    h.grad("conv3d.bias", conv_case(2));

    h.grad("relu", [](Rng& rng) {
        auto x = normal(12, rng);
        for (auto& v : x) v += v > 0 ? 0.05 : -0.05;  // stay clear of the kink
        const auto w = normal(12, rng);
        GradCase c;
        c.f = [w](std::span<const double> v) {
            const auto y = ad::relu_forward<double>(v);
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
            return s;
        };
        c.x = x;
        c.grad = ad::relu_backward<double>(x, w);
        return c;
    });

    auto linear_case = [](bool wrt_weights) {
        return [wrt_weights](Rng& rng) {
            const auto x = normal(8, rng);
            const BasicTensor<double> W({5, 8}, normal(40, rng));
            const auto u = normal(5, rng);
            auto loss = [u](const std::vector<double>& y) {
                double s = 0.0;
                for (std::size_t i = 0; i < y.size(); ++i) s += u[i] * y[i];
                return s;
            };
            const auto grads = ad::linear_backward<double>(x, W, u);
            GradCase c;
            if (wrt_weights) {
                c.f = [=](std::span<const double> v) {
                    return loss(ad::linear_forward<double>(x, BasicTensor<double>(W.shape(), {v.begin(), v.end()})));
                };
                c.x = W.values();
                c.grad = grads.weights.values();
            } else {
                c.f = [=](std::span<const double> v) { return loss(ad::linear_forward<double>(v, W)); };
                c.x = x;
                c.grad = grads.input;
            }
            return c;
        };
    };
    h.grad("linear.input", linear_case(false));
    h.grad("linear.weights", linear_case(true));

    h.grad("softmax", [](Rng& rng) {
        const auto x = normal(5, rng);
        const auto u = normal(5, rng);
        GradCase c;
        c.f = [u](std::span<const double> v) {
            const auto y = ad::softmax<double>(v, 0.7);
            double s = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) s += u[i] * y[i];
            return s;
        };
        c.x = x;
        c.grad = ad::softmax_backward<double>(ad::softmax<double>(x, 0.7), u, 0.7);
        return c;
    });

    h.grad("cosine_sim", [](Rng& rng) {
        const auto a = normal(6, rng), b = normal(6, rng);
        GradCase c;
        c.f = [b](std::span<const double> v) { return ad::cosine_sim<double, double>(v, b); };
        c.x = a;
        c.grad.assign(6, 0.0);
        ad::cosine_sim_backward<double, double>(a, b, 1.0, c.grad);
        return c;
    });

    h.grad("proto_classify", [](Rng& rng) {
        const auto bank = random_bank(3, 3, 4, rng);
        const auto z = normal(4, rng);
        const auto u = normal(3, rng);
        GradCase c;
        c.f = [=](std::span<const double> v) {
            const auto p = proto_classify<double>(v, bank, 0.1);
            double s = 0.0;
            for (std::size_t i = 0; i < 3; ++i) s += u[i] * p[i];
            return s;
        };
        c.x = z;
        c.grad.assign(4, 0.0);
        const auto p = proto_classify<double>(z, bank, 0.1);
        proto_classify_backward<double>(z, bank, 0.1, p, u, c.grad);
        return c;
    });

    auto lin_cons_case = [g](bool wrt_weights) {
        return [g, wrt_weights](Rng& rng) {
            const std::size_t d = 4, C = 3;
            const auto target = random_labels(g, C, rng);
            const auto z = as_field(g, d, normal(g.voxels() * d, rng));
            const BasicTensor<double> W({C, d}, normal(C * d, rng, 0.5));
            const auto probs = linear_head(z, W);
            const auto l = consistency_loss(probs, target);
            const auto grads = linear_head_backward(z, W, probs, std::span<const double>(l.grad));
            GradCase c;
            if (wrt_weights) {
                c.f = [=](std::span<const double> v) {
                    return consistency_loss(linear_head(z, BasicTensor<double>(W.shape(), {v.begin(), v.end()})), target)
                        .value;
                };
                c.x = W.values();
                c.grad = grads.weights.values();
            } else {
                c.f = [=](std::span<const double> v) {
                    return consistency_loss(linear_head(as_field(g, d, v), W), target).value;
                };
                c.x = z.data;
                c.grad = grads.z.data;
            }
            return c;
        };
    };
    h.grad("consistency.linear_head.z", lin_cons_case(false));
    h.grad("consistency.linear_head.weights", lin_cons_case(true));

    h.grad("consistency.proto_head.z", [g](Rng& rng) {
        const std::size_t d = 4, C = 3;
        const auto bank = random_bank(C, 2, d, rng);
        const auto target = random_labels(g, C, rng);
        const auto z = as_field(g, d, normal(g.voxels() * d, rng));
        const auto probs = proto_head(z, bank, 0.1);
        const auto l = consistency_loss(probs, target);
        GradCase c;
        c.f = [=](std::span<const double> v) { return consistency_loss(proto_head(as_field(g, d, v), bank, 0.1), target).value; };
        c.x = z.data;
        c.grad = proto_head_backward(z, bank, 0.1, probs, std::span<const double>(l.grad)).data;
        return c;
    });

    h.grad("contrastive.z", [g](Rng& rng) {
        const std::size_t d = 4;
        const auto bank = random_bank(3, 2, d, rng);
        const auto z = as_field(g, d, normal(g.voxels() * d, rng, 0.5));
        GradCase c;
        c.f = [=](std::span<const double> v) { return contrastive_loss(as_field(g, d, v), bank, 0.1).value; };
        c.x = z.data;
        c.grad = contrastive_loss(z, bank, 0.1).grad;
        return c;
    });

    h.grad("objective.z", [g](Rng& rng) {
        const std::size_t d = 4, C = 2;
        const auto bank = random_bank(C, 3, d, rng);
        const auto target = random_labels(g, C, rng);
        const auto z = as_field(g, d, normal(g.voxels() * d, rng, 0.5));
        const BasicTensor<double> W({C, d}, normal(C * d, rng, 0.5));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double lambda = u(rng), gamma = 0.1;
        auto total = [=](const EmbeddingField<double>& f) {
            return total_loss(consistency_loss(linear_head(f, W), target).value,
                              consistency_loss(proto_head(f, bank, 0.1), target).value,
                              contrastive_loss(f, bank, 0.1).value, lambda, gamma)
                .total;
        };
        const auto lp = linear_head(z, W);
        const auto ll = consistency_loss(lp, target);
        auto grad = linear_head_backward(z, W, lp, std::span<const double>(ll.grad)).z.data;
        const auto pp = proto_head(z, bank, 0.1);
        const auto pl = consistency_loss(pp, target);
        const auto pg = proto_head_backward(z, bank, 0.1, pp, std::span<const double>(pl.grad)).data;
        const auto cg = contrastive_loss(z, bank, 0.1).grad;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += lambda * (pg[i] + gamma * cg[i]);
        GradCase c;
        c.f = [=](std::span<const double> v) { return total(as_field(g, d, v)); };
        c.x = z.data;
        c.grad = std::move(grad);
        return c;
    });
}

double cosine(std::span<const double> a, std::span<const float> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += double(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

void oracle_checks(Harness& h) {
    h.oracle("oracle.proto_classify", 100, [](Rng& rng) {
        const auto bank = random_bank(3, 3, 5, rng);
        const auto z = normal(5, rng);
        std::vector<double> best(3, -2.0);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t k = 0; k < 3; ++k) best[c] = std::max(best[c], cosine(z, bank.prototype(c, k)));
        double denom = 0.0;
        for (double s : best) denom += std::exp(s / 0.1);
        const auto p = proto_classify<double>(z, bank, 0.1);
        double err = 0.0;
        for (std::size_t c = 0; c < 3; ++c) err = std::max(err, std::abs(p[c] - std::exp(best[c] / 0.1) / denom));
        return err;
    });

    h.oracle("oracle.contrastive", 100, [](Rng& rng) {
        const auto bank = random_bank(2, 3, 4, rng);
        const auto z = normal(4, rng, 0.3);
        std::size_t pos = 0;
        double best = -2.0;
        for (std::size_t j = 0; j < bank.size(); ++j) {
            const double s = cosine(z, bank.vectors().subspan(j * 4, 4));
            if (s > best) best = s, pos = j;
        }
        double denom = 0.0, num = 0.0;
        for (std::size_t j = 0; j < bank.size(); ++j) {
            double dot = 0.0;
            for (std::size_t t = 0; t < 4; ++t) dot += z[t] * bank.vectors()[j * 4 + t];
            denom += std::exp(dot / 0.1);
            if (j == pos) num = std::exp(dot / 0.1);
        }
        return std::abs(contrastive_loss<double>(z, bank, 0.1) + std::log(num / denom));
    });

    h.oracle("oracle.total_loss", 100, [](Rng& rng) {
        std::uniform_real_distribution<double> u(0.0, 2.0), l(0.0, 1.0);
        const double a = u(rng), b = u(rng), c = u(rng), lam = l(rng), gam = u(rng);
        return std::abs(total_loss(a, b, c, lam, gam).total - (a + lam * b + lam * gam * c));
    });

    h.oracle("oracle.momentum_update", 100, [](Rng& rng) {
        auto bank = random_bank(2, 2, 3, rng);
        const auto before = bank;
        PointSet pts{3, {}};
        std::vector<ClusterKey> keys;
        for (int i = 0; i < 5; ++i) {
            const auto v = normal(3, rng);
            pts.data.insert(pts.data.end(), v.begin(), v.end());
            keys.push_back({std::size_t(i % 2), 0});
        }
        const auto st = cluster_stats(pts, keys, 2, 2);
        momentum_update(bank, st);
        double err = 0.0;
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t k = 0; k < 2; ++k) {
                const auto m = st.mean(c, k);
                for (std::size_t j = 0; j < 3; ++j) {
                    const double p0 = before.prototype(c, k)[j];
                    const double want = m ? 0.9 * p0 + 0.1 * (*m)[j] : p0;
                    err = std::max(err, std::abs(double(bank.prototype(c, k)[j]) - want));
                }
            }
        return err;
    });

    h.oracle("oracle.surface_metrics", 50, [](Rng& rng) {
        std::uniform_int_distribution<std::size_t> ext(1, 4);
        const Dims g{ext(rng), ext(rng), ext(rng)};
        std::bernoulli_distribution coin(0.5);
        BinaryMask a{g, std::vector<std::uint8_t>(g.voxels())}, b = a;
        for (std::size_t i = 0; i < g.voxels(); ++i) {
            a.inside[i] = coin(rng);
            b.inside[i] = coin(rng);
        }
        const auto d = surface_distances(a, b);
        if (a.empty() || b.empty()) return d ? 1.0 : 0.0;
        const auto sa = surface_voxels(a), sb = surface_voxels(b);
        std::vector<double> ref;
        auto one_way = [&](const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
            for (auto i : from) {
                double best = 1e300;
                const auto p = g.coords(i);
                for (auto j : to) {
                    const auto q = g.coords(j);
                    double s = 0.0;
                    for (int t = 0; t < 3; ++t) s += (double(p[t]) - double(q[t])) * (double(p[t]) - double(q[t]));
                    best = std::min(best, s);
                }
                ref.push_back(std::sqrt(best));
            }
        };
        one_way(sa, sb);
        one_way(sb, sa);
        std::sort(ref.begin(), ref.end());
        return *d == ref ? 0.0 : 1.0;
    });

    h.oracle("oracle.ramp", 1, [](Rng&) {
        return std::max({std::abs(ramp_lambda({600, 0}) - std::exp(-5.0)), std::abs(ramp_lambda({600, 600}) - 1.0),
                         std::abs(ramp_lambda({600, 300}) - std::exp(-1.25))});
    });
}

}  // namespace

std::vector<SelfTestCheck> run_selftest(const SelfTestOptions& options) {
    Harness h(options);
    gradient_checks(h);
    oracle_checks(h);
    return h.take();
}

bool all_passed(const std::vector<SelfTestCheck>& checks) {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

void write_selftest_report(std::ostream& os, const std::vector<SelfTestCheck>& checks) {
    char buf[160];
    for (const auto& c : checks) {
        std::snprintf(buf, sizeof buf, "%-4s %-34s max_error=%.3e tol=%.0e\n", c.passed ? "PASS" : "FAIL",
                      c.name.c_str(), c.max_error, c.tolerance);
        os << buf;
    }
    std::size_t failed = 0;
    for (const auto& c : checks) failed += !c.passed;
    os << checks.size() - failed << "/" << checks.size() << " checks passed\n";
}

}  // namespace mper
