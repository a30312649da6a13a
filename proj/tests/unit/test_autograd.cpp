#include <doctest.h>

#include <cmath>
#include <functional>

#include "ssfilter/autograd.hpp"
#include "ssfilter/errors.hpp"
#include "test_support.hpp"

using namespace ssf;
using namespace ssf::nn;

namespace {

Var param(int r, int c, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
    return Var::parameter(ssf::testing::random_vector(static_cast<size_t>(r) * c, rng, lo, hi), r, c);
}

/// Scalar probe: sum(f(...) * w) for fixed random weights.
Var probe(const Var& y, const std::vector<float>& w) {
    return sum(mul(y, Var::constant(w, y.rows(), y.cols())));
}

/// Central differences against the analytic gradient of every leaf entry.
void check_gradients(std::vector<Var> leaves, const std::function<Var()>& f, double tol = 2e-2) {
    for (auto& l : leaves) l.zero_grad();
    backward(f());
    std::vector<std::vector<float>> analytic;
    for (auto& l : leaves) analytic.emplace_back(l.grad().begin(), l.grad().end());
    NoGradGuard ng;
    const float eps = 1e-2f;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& v = leaves[li].mutable_value();
        for (size_t j = 0; j < v.size(); ++j) {
            const float keep = v[j];
            v[j] = keep + eps;
            const double up = f().item();
            v[j] = keep - eps;
            const double down = f().item();
            v[j] = keep;
            const double fd = (up - down) / (2.0 * eps);
            CHECK(std::abs(analytic[li][j] - fd) <= tol * std::max(1.0, std::abs(fd)));
        }
    }
}

}  // namespace

TEST_CASE("linear matches a hand product and its gradient") {
    auto x = Var::parameter({1, 2, 3, 4}, 2, 2);
    auto w = Var::parameter({1, 0, 0, 1, 1, 1}, 3, 2);
    auto b = Var::parameter({0.5f, 0, -1}, 1, 3);
    const auto y = linear(x, w, b);
    CHECK(y.rows() == 2);
    CHECK(y.cols() == 3);
    CHECK(y.value() == nn::Buffer{1.5f, 2, 2, 3.5f, 4, 6});

    std::mt19937_64 rng(2);
    auto x2 = param(3, 4, rng), w2 = param(5, 4, rng), b2 = param(1, 5, rng);
    const auto wts = ssf::testing::random_vector(15, rng);
    check_gradients({x2, w2, b2}, [&] { return probe(linear(x2, w2, b2), wts); });
}

TEST_CASE("elementwise ops have correct gradients") {
    std::mt19937_64 rng(3);
    auto a = param(3, 5, rng), b = param(3, 5, rng);
    const auto w = ssf::testing::random_vector(15, rng);
    check_gradients({a, b}, [&] { return probe(add(a, b), w); });
    check_gradients({a, b}, [&] { return probe(mul(a, b), w); });
    check_gradients({a}, [&] { return probe(scale(a, -1.7f), w); });
    check_gradients({a}, [&] { return probe(gelu(a), w); });
    check_gradients({a}, [&] { return probe(silu(a), w); });
    check_gradients({a}, [&] { return probe(elu_plus_one(a), w); });
    std::vector<Var> parts{a, b, a};
    check_gradients({a, b}, [&] { return probe(mean_of(parts), w); });
}

TEST_CASE("activation values") {
    const auto x = Var::constant({-1.0f, 0.0f, 2.0f}, 1, 3);
    const auto g = gelu(x).value();
    CHECK(g[0] == doctest::Approx(-0.158655f).epsilon(1e-4));
    CHECK(g[1] == 0.0f);
    CHECK(g[2] == doctest::Approx(1.954500f).epsilon(1e-4));
    const auto e = elu_plus_one(x).value();
    CHECK(e[0] == doctest::Approx(std::exp(-1.0f)));
    CHECK(e[2] == doctest::Approx(3.0f));
    CHECK(silu(x).value()[2] == doctest::Approx(2.0f / (1.0f + std::exp(-2.0f))));
}

TEST_CASE("layer norm normalises rows and has correct gradients") {
    std::mt19937_64 rng(4);
    auto x = param(4, 6, rng, -2, 3);
    auto gamma = Var::parameter(std::vector<float>(6, 1.0f), 1, 6);
    auto beta = Var::parameter(std::vector<float>(6, 0.0f), 1, 6);
    const auto y = layer_norm(x, gamma, beta);
    for (int r = 0; r < 4; ++r) {
        double m = 0, v = 0;
        for (int c = 0; c < 6; ++c) m += y.value()[r * 6 + c];
        m /= 6;
        for (int c = 0; c < 6; ++c) v += std::pow(y.value()[r * 6 + c] - m, 2);
        CHECK(m == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(v / 6 == doctest::Approx(1.0).epsilon(1e-3));
    }
    const auto gv = ssf::testing::random_vector(6, rng, 0.5f, 1.5f);
    gamma.mutable_value().assign(gv.begin(), gv.end());
    const auto bv = ssf::testing::random_vector(6, rng);
    beta.mutable_value().assign(bv.begin(), bv.end());
    const auto w = ssf::testing::random_vector(24, rng);
    check_gradients({x, gamma, beta}, [&] { return probe(layer_norm(x, gamma, beta), w); });
}

TEST_CASE("depthwise conv matches a direct stencil and has correct gradients") {
    const TokenGrid grid{2, 3, 4};
    std::mt19937_64 rng(5);
    auto x = param(grid.batch * grid.tokens(), 3, rng);
    auto w = param(3, 9, rng);
    auto b = param(1, 3, rng);
    const auto y = depthwise_conv3x3(x, w, b, grid);
    for (int n = 0; n < grid.batch; ++n)
        for (int i = 0; i < grid.height; ++i)
            for (int j = 0; j < grid.width; ++j)
                for (int c = 0; c < 3; ++c) {
                    double acc = b.value()[c];
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int ii = i + di, jj = j + dj;
                            if (ii < 0 || jj < 0 || ii >= grid.height || jj >= grid.width) continue;
                            acc += w.value()[c * 9 + (di + 1) * 3 + (dj + 1)] *
                                   x.value()[((n * grid.tokens()) + ii * grid.width + jj) * 3 + c];
                        }
                    CHECK(y.value()[((n * grid.tokens()) + i * grid.width + j) * 3 + c] ==
                          doctest::Approx(acc).epsilon(1e-5));
                }
    const auto wts = ssf::testing::random_vector(y.size(), rng);
    check_gradients({x, w, b}, [&] { return probe(depthwise_conv3x3(x, w, b, grid), wts); });
}

TEST_CASE("linear attention matches the quadratic form and has correct gradients") {
    const TokenGrid grid{2, 2, 3};
    const int heads = 2, C = 4;
    std::mt19937_64 rng(6);
    auto q = param(grid.batch * grid.tokens(), C, rng, 0.1f, 1.0f);
    auto k = param(grid.batch * grid.tokens(), C, rng, 0.1f, 1.0f);
    auto v = param(grid.batch * grid.tokens(), C, rng);
    const auto y = linear_attention(q, k, v, grid, heads);
    const int T = grid.tokens(), d = C / heads;
    // quadratic reference: out_t = sum_s (q_t.k_s) v_s / sum_s (q_t.k_s)
    for (int n = 0; n < grid.batch; ++n)
        for (int h = 0; h < heads; ++h)
            for (int t = 0; t < T; ++t) {
                std::vector<double> num(d, 0.0);
                double den = 0;
                for (int s = 0; s < T; ++s) {
                    double dot = 0;
                    for (int c = 0; c < d; ++c)
                        dot += q.value()[(n * T + t) * C + h * d + c] * k.value()[(n * T + s) * C + h * d + c];
                    den += dot;
                    for (int c = 0; c < d; ++c) num[c] += dot * v.value()[(n * T + s) * C + h * d + c];
                }
                for (int c = 0; c < d; ++c)
                    CHECK(y.value()[(n * T + t) * C + h * d + c] == doctest::Approx(num[c] / den).epsilon(1e-4));
            }
    const auto w = ssf::testing::random_vector(y.size(), rng);
    check_gradients({q, k, v}, [&] { return probe(linear_attention(q, k, v, grid, heads), w); });
}

TEST_CASE("dropout") {
    std::mt19937_64 rng(7);
    auto x = param(50, 40, rng);
    SUBCASE("rate zero is the identity") { CHECK(dropout(x, 0.0f, rng).value() == x.value()); }
    SUBCASE("inverted scaling keeps the mean") {
        auto ones = Var::constant(std::vector<float>(20000, 1.0f), 100, 200);
        const auto y = dropout(ones, 0.2f, rng);
        double m = 0;
        int zeros = 0;
        for (float v : y.value()) {
            m += v;
            zeros += v == 0.0f;
            if (v != 0.0f) CHECK(v == doctest::Approx(1.25f));
        }
        CHECK(m / 20000 == doctest::Approx(1.0).epsilon(0.03));
        CHECK(zeros / 20000.0 == doctest::Approx(0.2).epsilon(0.1));
    }
    SUBCASE("rate one is rejected") { CHECK_THROWS_AS(dropout(x, 1.0f, rng), ConfigError); }
}

TEST_CASE("no-grad guard records no graph") {
    std::mt19937_64 rng(8);
    auto x = param(2, 2, rng);
    Var y;
    {
        NoGradGuard ng;
        CHECK_FALSE(grad_enabled());
        y = gelu(x);
    }
    CHECK(grad_enabled());
    CHECK(y.node()->inputs.empty());
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradients accumulate through shared subexpressions") {
    auto x = Var::parameter({2.0f}, 1, 1);
    x.zero_grad();
    backward(mul(x, x));
    CHECK(x.grad()[0] == doctest::Approx(4.0f));
}
