#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ssfilter/errors.hpp"
#include "ssfilter/losses.hpp"
#include "test_support.hpp"

using namespace ssf;

namespace {

AlignedFeatures random_targets(int batch, int g, int c, int groups, std::mt19937_64& rng) {
    AlignedFeatures f{batch, g, g, c, {}};
    for (int i = 0; i < groups; ++i)
        f.groups.push_back(ssf::testing::random_vector(static_cast<size_t>(batch) * g * g * c, rng));
    return f;
}

// Mean over samples of the group-averaged global cosine distance, in double precision.
double reference_loss(const AlignedFeatures& t, const std::vector<std::vector<double>>& preds) {
    const size_t per = static_cast<size_t>(t.tokens()) * t.channels;
    double total = 0;
    for (int b = 0; b < t.batch; ++b) {
        double sample = 0;
        for (size_t g = 0; g < t.groups.size(); ++g) {
            double dot = 0, na = 0, nb = 0;
            for (size_t j = b * per; j < (b + 1) * per; ++j) {
                dot += t.groups[g][j] * preds[g][j];
                na += static_cast<double>(t.groups[g][j]) * t.groups[g][j];
                nb += preds[g][j] * preds[g][j];
            }
            sample += 1.0 - dot / std::sqrt(na * nb);
        }
        total += sample / t.groups.size();
    }
    return total / t.batch;
}

struct Run {
    double value;
    std::vector<std::vector<float>> grads;
};

Run run_loss(const AlignedFeatures& t, const std::vector<std::vector<float>>& p, double mine) {
    std::vector<nn::Var> vars;
    for (const auto& v : p) vars.push_back(nn::Var::parameter(v, t.batch * t.tokens(), t.channels));
    const auto loss = hard_mined_cosine_loss(t, vars, mine);
    nn::backward(loss);
    Run r{loss.item(), {}};
    for (const auto& v : vars) r.grads.push_back(v.grad().empty() ? std::vector<float>(v.size(), 0.0f) : std::vector<float>(v.grad().begin(), v.grad().end()));
    return r;
}

}  // namespace

TEST_CASE("unmined gradient matches double-precision finite differences") {
    std::mt19937_64 rng(1);
    const auto t = random_targets(2, 4, 8, 2, rng);
    std::vector<std::vector<float>> p;
    for (int g = 0; g < 2; ++g) p.push_back(ssf::testing::random_vector(t.groups[g].size(), rng));
    const auto run = run_loss(t, p, 0.0);

    std::vector<std::vector<double>> pd;
    for (const auto& v : p) pd.emplace_back(v.begin(), v.end());
    CHECK(run.value == doctest::Approx(reference_loss(t, pd)).epsilon(1e-6));

    const double h = 1e-6;
    double worst = 0;
    for (size_t g = 0; g < 2; ++g)
        for (size_t j = 0; j < pd[g].size(); ++j) {
            auto plus = pd, minus = pd;
            plus[g][j] += h;
            minus[g][j] -= h;
            const double fd = (reference_loss(t, plus) - reference_loss(t, minus)) / (2 * h);
            worst = std::max(worst, ssf::testing::rel_diff(run.grads[g][j], fd, 1e-4));
        }
    CHECK(worst < 1e-3);
}

TEST_CASE("loss value does not depend on mining") {
    std::mt19937_64 rng(2);
    const auto t = random_targets(3, 3, 4, 2, rng);
    std::vector<std::vector<float>> p;
    for (int g = 0; g < 2; ++g) p.push_back(ssf::testing::random_vector(t.groups[g].size(), rng));
    const double v0 = run_loss(t, p, 0.0).value;
    CHECK(run_loss(t, p, 0.5).value == doctest::Approx(v0).epsilon(1e-7));
    CHECK(run_loss(t, p, 0.9).value == doctest::Approx(v0).epsilon(1e-7));
}

TEST_CASE("full mining detaches every position") {
    std::mt19937_64 rng(3);
    const auto t = random_targets(2, 3, 4, 1, rng);
    const std::vector<std::vector<float>> p{ssf::testing::random_vector(t.groups[0].size(), rng)};
    const auto run = run_loss(t, p, 1.0);
    CHECK(run.value > 0.0);
    for (float g : run.grads[0]) CHECK(g == 0.0f);
}

TEST_CASE("mining keeps gradient only on the hardest positions") {
    std::mt19937_64 rng(4);
    const auto t = random_targets(2, 4, 5, 1, rng);
    const std::vector<std::vector<float>> p{ssf::testing::random_vector(t.groups[0].size(), rng)};
    const auto mined = run_loss(t, p, 0.75);
    const auto full = run_loss(t, p, 0.0);
    const int positions = 2 * 16, C = 5;
    std::vector<std::pair<double, int>> dist;
    for (int q = 0; q < positions; ++q) {
        double dot = 0, na = 0, nb = 0;
        for (int c = 0; c < C; ++c) {
            const double a = t.groups[0][q * C + c], b = p[0][q * C + c];
            dot += a * b, na += a * a, nb += b * b;
        }
        dist.emplace_back(1 - dot / std::sqrt(na * nb), q);
    }
    std::sort(dist.rbegin(), dist.rend());
    int live = 0;
    for (int r = 0; r < positions; ++r) {
        const int q = dist[r].second;
        const bool hard = r < positions / 4;
        for (int c = 0; c < C; ++c) {
            if (hard) CHECK(mined.grads[0][q * C + c] == full.grads[0][q * C + c]);
            else CHECK(mined.grads[0][q * C + c] == 0.0f);
        }
        live += hard;
    }
    CHECK(live == 8);
}

TEST_CASE("perfect reconstruction has zero loss and gradient") {
    std::mt19937_64 rng(5);
    const auto t = random_targets(2, 2, 3, 2, rng);
    const auto run = run_loss(t, t.groups, 0.0);
    CHECK(std::abs(run.value) < 1e-6);
    for (const auto& g : run.grads)
        for (float v : g) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("per-sample distances") {
    std::mt19937_64 rng(6);
    const auto t = random_targets(3, 2, 3, 1, rng);
    auto p = t.groups;
    for (size_t j = 12; j < 24; ++j) p[0][j] = -p[0][j];
    const std::vector<nn::Var> vars{nn::Var::constant(p[0], 12, 3)};
    const auto d = hard_mined_cosine_distances(t, vars, 0.9);
    REQUIRE(d.rows() == 3);
    CHECK(std::abs(d.value()[0]) < 1e-6);
    CHECK(d.value()[1] == doctest::Approx(2.0));
    CHECK(std::abs(d.value()[2]) < 1e-6);
}

TEST_CASE("loss shape errors") {
    std::mt19937_64 rng(7);
    const auto t = random_targets(2, 2, 3, 2, rng);
    const std::vector<nn::Var> one{nn::Var::constant(t.groups[0], 8, 3)};
    CHECK_THROWS_AS(hard_mined_cosine_loss(t, one), InputError);
    const std::vector<nn::Var> wrong{nn::Var::constant(t.groups[0], 8, 3), nn::Var::constant(t.groups[1], 6, 4)};
    CHECK_THROWS_AS(hard_mined_cosine_loss(t, wrong), InputError);
    const std::vector<nn::Var> ok{nn::Var::constant(t.groups[0], 8, 3), nn::Var::constant(t.groups[1], 8, 3)};
    CHECK_THROWS_AS(hard_mined_cosine_loss(t, ok, 1.5), ConfigError);
}
