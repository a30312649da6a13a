#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ssfilter/errors.hpp"
#include "ssfilter/patch_scorer.hpp"
#include "test_support.hpp"

using namespace ssf;

namespace {

PatchDescriptorBatch make_batch(int batch, int gh, int gw, int dim, std::vector<float> data) {
    PatchDescriptorBatch d;
    d.batch = batch;
    d.grid_h = gh;
    d.grid_w = gw;
    d.dim = dim;
    d.data = std::move(data);
    for (int b = 0; b < batch; ++b) d.image_ids.push_back("img" + std::to_string(b));
    return d;
}

PatchDescriptorBatch random_batch(int batch, int gh, int gw, int dim, std::mt19937_64& rng) {
    return make_batch(batch, gh, gw, dim, ssf::testing::random_vector(static_cast<size_t>(batch) * gh * gw * dim, rng));
}

}  // namespace

TEST_CASE("top-k sizes") {
    CHECK(clamped_top_k(256, 0.01) == 2);
    CHECK(clamped_top_k(50, 0.001) == 1);
    CHECK(clamped_top_k(4096, 0.001) == 4);
    CHECK(clamped_top_k(0, 0.5) == 1);
}

TEST_CASE("identical images score zero everywhere") {
    std::mt19937_64 rng(1);
    const auto one = ssf::testing::random_vector(9 * 5, rng);
    std::vector<float> data;
    for (int b = 0; b < 3; ++b) data.insert(data.end(), one.begin(), one.end());
    const auto desc = make_batch(3, 3, 3, 5, data);
    for (const auto& r : {mutual_score(desc), brute_force_score(desc)}) {
        for (float s : r.patch_scores) CHECK(s == doctest::Approx(0.0).epsilon(1e-6).scale(1));
        for (float s : r.image_scores) CHECK(std::abs(s) < 1e-5);
    }
}

TEST_CASE("a patch orthogonal to the other image scores one") {
    // B=2, 2x2 grid, dim 3. Image 0 patch 2 points along z; everything else along x.
    std::vector<float> data(2 * 4 * 3, 0.0f);
    for (int i = 0; i < 8; ++i) data[i * 3 + 0] = 1.0f;
    data[2 * 3 + 0] = 0.0f;
    data[2 * 3 + 2] = 1.0f;
    const auto desc = make_batch(2, 2, 2, 3, data);
    const auto r = mutual_score(desc, {0.001, 0.01});
    CHECK(r.k_sim == 1);
    CHECK(r.k_top == 1);
    for (int b = 0; b < 2; ++b)
        for (int p = 0; p < 4; ++p) CHECK(r.patch_score(b, p) == doctest::Approx(b == 0 && p == 2 ? 1.0 : 0.0));
    CHECK(r.image_scores[0] == doctest::Approx(1.0));
    CHECK(r.image_scores[1] == doctest::Approx(0.0));
    CHECK(brute_force_score(desc).patch_score(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("same-image blocks count as zero similarity") {
    // Two images whose patches anti-align with the other image: the best candidates are the
    // zeroed same-image entries, so every score is exactly one.
    std::vector<float> data{1, 0, 1, 0, -1, 0, -1, 0};
    const auto desc = make_batch(2, 1, 2, 2, data);
    const auto r = mutual_score(desc, {0.5, 0.5});
    CHECK(r.k_sim == 2);
    for (float s : r.patch_scores) CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("vectorised scoring matches the loop reference") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> bd(2, 6), gd(1, 6), dd(1, 24);
    for (int trial = 0; trial < 25; ++trial) {
        const auto desc = random_batch(bd(rng), gd(rng), gd(rng), dd(rng), rng);
        const MutualScoreOptions opts{trial % 2 ? 0.001 : 0.05, trial % 3 ? 0.01 : 0.3};
        const auto fast = mutual_score(desc, opts);
        const auto ref = brute_force_score(desc, opts);
        CHECK(fast.k_sim == ref.k_sim);
        CHECK(fast.k_top == ref.k_top);
        for (size_t i = 0; i < ref.patch_scores.size(); ++i)
            CHECK(std::abs(fast.patch_scores[i] - ref.patch_scores[i]) <= 1e-5);
        for (size_t i = 0; i < ref.image_scores.size(); ++i)
            CHECK(std::abs(fast.image_scores[i] - ref.image_scores[i]) <= 1e-5);
    }
}

TEST_CASE("scores lie in [0, 2] and the image score is the top-k mean") {
    std::mt19937_64 rng(3);
    const auto desc = random_batch(4, 4, 4, 6, rng);
    const auto r = mutual_score(desc, {0.02, 0.2});
    CHECK(r.k_top == 3);
    for (float s : r.patch_scores) {
        CHECK(s >= 0.0f);
        CHECK(s <= 2.0f);
    }
    for (int b = 0; b < 4; ++b) {
        std::vector<float> row(r.patch_scores.begin() + b * 16, r.patch_scores.begin() + (b + 1) * 16);
        std::sort(row.rbegin(), row.rend());
        CHECK(r.image_scores[b] == doctest::Approx((row[0] + row[1] + row[2]) / 3.0).epsilon(1e-6));
    }
}

TEST_CASE("scores are invariant to per-row positive rescaling") {
    std::mt19937_64 rng(4);
    auto desc = random_batch(3, 2, 3, 4, rng);
    const auto before = mutual_score(desc);
    std::uniform_real_distribution<float> scale(0.1f, 10.0f);
    for (size_t row = 0; row < desc.data.size() / 4; ++row) {
        const float s = scale(rng);
        for (int d = 0; d < 4; ++d) desc.data[row * 4 + d] *= s;
    }
    const auto after = mutual_score(desc);
    for (size_t i = 0; i < before.patch_scores.size(); ++i)
        CHECK(after.patch_scores[i] == doctest::Approx(before.patch_scores[i]).epsilon(1e-5).scale(1));
}

TEST_CASE("scoring errors") {
    std::mt19937_64 rng(5);
    CHECK_THROWS_AS(mutual_score(random_batch(1, 2, 2, 3, rng)), CannotScoreError);
    CHECK_THROWS_AS(brute_force_score(random_batch(1, 2, 2, 3, rng)), CannotScoreError);
    auto zero = random_batch(2, 2, 2, 3, rng);
    std::fill(zero.data.begin(), zero.data.begin() + 3, 0.0f);
    CHECK_THROWS_AS(mutual_score(zero), InputError);
    CHECK_THROWS_AS(brute_force_score(zero), InputError);
    auto nan = random_batch(2, 2, 2, 3, rng);
    nan.data[5] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(mutual_score(nan), InputError);
}

TEST_CASE("score log appends one row per image") {
    ssf::testing::TempDir dir("scorelog");
    std::mt19937_64 rng(6);
    const auto desc = random_batch(3, 2, 2, 3, rng);
    const auto r = mutual_score(desc);
    append_score_log(dir / "s.tsv", desc, r);
    append_score_log(dir / "s.tsv", desc, r);
    std::ifstream in(dir / "s.tsv");
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) {
        CHECK(line.rfind("img" + std::to_string(lines % 3) + "\t", 0) == 0);
        ++lines;
    }
    CHECK(lines == 6);
}
