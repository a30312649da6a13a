#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "ssfilter/errors.hpp"
#include "ssfilter/metrics.hpp"
#include "test_support.hpp"

using namespace ssf;

namespace {

double pair_count_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0;
    int pairs = 0;
    for (size_t i = 0; i < s.size(); ++i)
        for (size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                ++pairs;
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return num / pairs;
}

// 4-neighbour flood fill plus diagonals: labels every 8-connected region of one mask.
std::vector<std::vector<int>> regions_of(const BinaryGrid& m) {
    std::vector<int> seen(m.cells.size(), 0);
    std::vector<std::vector<int>> out;
    for (int i = 0; i < static_cast<int>(m.cells.size()); ++i) {
        if (!m.cells[i] || seen[i]) continue;
        std::vector<int> region, todo{i};
        seen[i] = 1;
        while (!todo.empty()) {
            const int c = todo.back();
            todo.pop_back();
            region.push_back(c);
            const int x = c % m.width, y = c / m.width;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height) continue;
                    const int n = ny * m.width + nx;
                    if (m.cells[n] && !seen[n]) seen[n] = 1, todo.push_back(n);
                }
        }
        out.push_back(region);
    }
    return out;
}

// Enumerates every threshold, then integrates the (fpr, pro) polyline up to the limit.
double exhaustive_pro(const std::vector<std::vector<float>>& maps, const std::vector<BinaryGrid>& masks, double limit) {
    std::set<float> values;
    for (const auto& m : maps) values.insert(m.begin(), m.end());
    std::vector<float> thresholds(values.rbegin(), values.rend());
    double negatives = 0;
    for (const auto& m : masks)
        for (auto c : m.cells) negatives += c == 0;
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    for (float t : thresholds) {
        double fp = 0, pro = 0;
        int nreg = 0;
        for (size_t k = 0; k < maps.size(); ++k) {
            for (size_t i = 0; i < maps[k].size(); ++i) fp += masks[k].cells[i] == 0 && maps[k][i] >= t;
            for (const auto& r : regions_of(masks[k])) {
                int hit = 0;
                for (int c : r) hit += maps[k][c] >= t;
                pro += static_cast<double>(hit) / r.size();
                ++nreg;
            }
        }
        pts.emplace_back(fp / negatives, pro / nreg);
    }
    double area = 0;
    for (size_t i = 1; i < pts.size(); ++i) {
        auto [x0, y0] = pts[i - 1];
        auto [x1, y1] = pts[i];
        if (x0 >= limit) break;
        if (x1 > limit) {
            y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            x1 = limit;
        }
        area += (x1 - x0) * (y0 + y1) / 2;
    }
    return area / limit;
}

void random_instance(std::mt19937_64& rng, int n, int side, std::vector<std::vector<float>>& maps,
                     std::vector<BinaryGrid>& masks, bool quantise) {
    std::uniform_real_distribution<float> u(0, 1);
    maps.clear();
    masks.clear();
    for (int k = 0; k < n; ++k) {
        BinaryGrid m(side, side);
        const int x0 = static_cast<int>(u(rng) * (side - 2)), y0 = static_cast<int>(u(rng) * (side - 2));
        for (int y = y0; y < y0 + 3; ++y)
            for (int x = x0; x < x0 + 2; ++x) m.set(x, y, u(rng) < 0.8f);
        if (k % 2) m.set(side - 1, side - 1, true);
        std::vector<float> map(side * side);
        for (int i = 0; i < side * side; ++i) {
            float v = u(rng) + (m.cells[i] ? 0.5f : 0.0f);
            if (quantise) v = std::round(v * 4) / 4;
            map[i] = v;
        }
        maps.push_back(map);
        masks.push_back(m);
    }
}

}  // namespace

TEST_CASE("auroc hand examples") {
    CHECK(image_auroc(std::vector<double>{0.1, 0.9, 0.8}, std::vector<int>{0, 1, 0}) == 1.0);
    CHECK(image_auroc(std::vector<double>{0.5, 0.9, 0.1}, std::vector<int>{1, 0, 0}) == 0.5);
    CHECK(image_auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
    CHECK(image_auroc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{0, 0, 1, 1}) == 0.0);
    CHECK(image_auroc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
    CHECK_THROWS_AS(image_auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetricError);
    CHECK_THROWS_AS(image_auroc(std::vector<double>{0.1}, std::vector<int>{1, 0}), InputError);
}

TEST_CASE("auroc matches pair counting on small instances") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> nd(2, 32), bit(0, 1), level(0, 5);
    for (int t = 0; t < 200; ++t) {
        const int n = nd(rng);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) s[i] = level(rng) * 0.1, y[i] = bit(rng);
        y[0] = 0, y[1] = 1;
        CHECK(std::abs(image_auroc(s, y) - pair_count_auroc(s, y)) < 1e-6);
    }
}

TEST_CASE("auroc of independent labels is near one half") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> s(20000);
    std::vector<int> y(20000);
    for (size_t i = 0; i < s.size(); ++i) s[i] = u(rng), y[i] = u(rng) < 0.3;
    CHECK(std::abs(image_auroc(s, y) - 0.5) < 0.05);
}

TEST_CASE("region overlap matches exhaustive enumeration") {
    std::mt19937_64 rng(3);
    std::vector<std::vector<float>> maps;
    std::vector<BinaryGrid> masks;
    for (int t = 0; t < 30; ++t) {
        random_instance(rng, 1 + t % 4, 8, maps, masks, t % 3 == 0);
        for (double limit : {0.3, 1.0, 0.05}) {
            const double got = region_pro_auc(maps, masks, limit);
            CHECK(std::abs(got - exhaustive_pro(maps, masks, limit)) < 1e-6);
            CHECK(got >= 0.0);
            CHECK(got <= 1.0);
        }
    }
}

TEST_CASE("region overlap is invariant to monotone transforms") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.1, 3.0);
    std::vector<std::vector<float>> maps;
    std::vector<BinaryGrid> masks;
    random_instance(rng, 3, 8, maps, masks, false);
    const double base = region_pro_auc(maps, masks);
    std::vector<double> scores{0.2, 0.7, 0.4, 0.9};
    const std::vector<int> labels{0, 1, 0, 1};
    const double base_auc = image_auroc(scores, labels);
    for (int t = 0; t < 20; ++t) {
        const double a = u(rng), b = u(rng) - 1.5, p = u(rng);
        auto f = [&](double v) { return a * std::pow(v + 1.0, p) + b; };
        auto tm = maps;
        for (auto& m : tm)
            for (auto& v : m) v = static_cast<float>(f(v));
        CHECK(region_pro_auc(tm, masks) == doctest::Approx(base).epsilon(1e-9));
        auto ts = scores;
        for (auto& v : ts) v = f(v);
        CHECK(image_auroc(ts, labels) == base_auc);
    }
}

TEST_CASE("constant maps give a linear curve") {
    std::vector<std::vector<float>> maps(2, std::vector<float>(64, 0.4f));
    std::vector<BinaryGrid> masks(2, BinaryGrid(8, 8));
    masks[0].set(2, 2, true);
    masks[1].set(5, 6, true);
    masks[1].set(6, 6, true);
    const auto curve = pro_curve(maps, masks);
    CHECK(curve.fpr.front() == 0.0);
    CHECK(curve.fpr.back() == 1.0);
    CHECK(curve.pro.back() == 1.0);
    // the area under y = x up to the limit, divided by the limit, is limit / 2
    CHECK(region_pro_auc(maps, masks, 0.3) == doctest::Approx(0.15));
    CHECK(region_pro_auc(maps, masks, 1.0) == doctest::Approx(0.5));
}

TEST_CASE("perfect maps and undefined cases") {
    std::vector<BinaryGrid> masks(1, BinaryGrid(4, 4));
    masks[0].set(1, 1, true);
    std::vector<std::vector<float>> maps(1, std::vector<float>(16, 0.0f));
    maps[0][5] = 1.0f;
    CHECK(region_pro_auc(maps, masks) == doctest::Approx(1.0));
    const std::vector<BinaryGrid> empty(1, BinaryGrid(4, 4));
    CHECK_THROWS_AS(region_pro_auc(maps, empty), UndefinedMetricError);
    const std::vector<std::vector<float>> wrong(1, std::vector<float>(15, 0.0f));
    CHECK_THROWS_AS(region_pro_auc(wrong, masks), InputError);
}

TEST_CASE("normalised area interpolates at the limit") {
    const ProCurve c{{0.0, 0.2, 0.6}, {0.0, 0.4, 0.8}};
    // trapezoids: 0.2 * 0.2 + 0.1 * (0.4 + 0.5) / 2
    CHECK(normalized_area(c, 0.3) == doctest::Approx((0.04 + 0.045) / 0.3));
}

TEST_CASE("discarding by score") {
    const std::vector<double> s{0.5, 0.9, 0.1, 0.9, 0.3};
    CHECK(discard_by_score(s, 0.4) == std::vector<uint8_t>{1, 0, 1, 0, 1});
    CHECK(discard_by_score(s, 0.0) == std::vector<uint8_t>(5, 1));
    CHECK(discard_by_score(s, 0.3) == std::vector<uint8_t>{1, 1, 1, 0, 1});
    CHECK_THROWS_AS(discard_by_score(s, 1.5), InputError);
}

TEST_CASE("abnormal recall counts discarded anomalous occurrences") {
    std::vector<SelectionLog::Row> rows{{1, "a", 0, 0, 0, 0, 0}, {1, "b", 0, 0, 0, 1, 0},
                                        {2, "a", 0, 0, 0, 1, 0}, {2, "n", 0, 0, 0, 0, 0},
                                        {2, "unknown", 0, 0, 0, 0, 0}};
    const std::map<std::string, int> labels{{"a", 1}, {"b", 1}, {"n", 0}};
    CHECK(abnormal_recall(rows, labels) == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(abnormal_recall(rows, {{"n", 0}}), UndefinedMetricError);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<SelectionLog::Row> random_rows;
    std::map<std::string, int> all;
    for (int i = 0; i < 20000; ++i) {
        const std::string id = std::to_string(i);
        all[id] = 1;
        random_rows.push_back({0, id, 0, 0, 0, u(rng) < 0.3 ? 0 : 1, 0});
    }
    CHECK(abnormal_recall(random_rows, all) == doctest::Approx(0.3).epsilon(0.05));
}

TEST_CASE("evaluation report per category") {
    std::vector<ScoredSample> samples;
    for (int i = 0; i < 4; ++i) {
        ScoredSample s;
        s.category = i < 2 ? "x" : "y";
        s.label = i % 2;
        s.score = s.label ? 0.9 : 0.1;
        s.path = std::to_string(i);
        samples.push_back(s);
    }
    samples[2].score = 0.95;
    const auto rep = evaluate_samples(samples, 0.3);
    REQUIRE(rep.categories.size() == 2);
    CHECK(rep.categories[0].category == "x");
    CHECK(rep.categories[0].i_auroc == 1.0);
    CHECK(rep.categories[1].i_auroc == 0.0);
    CHECK(rep.mean_i_auroc == 0.5);
    CHECK(std::isnan(rep.categories[0].p_aupro));

    ssf::testing::TempDir dir("eval");
    write_eval_report(dir.path(), rep);
    CHECK(std::filesystem::exists(dir / "eval_bars.svg"));
    const auto back = read_eval_report(dir / "eval_report.tsv");
    CHECK(back.categories.size() == 2);
    CHECK(back.mean_i_auroc == doctest::Approx(0.5));
    CHECK(back.fpr_limit == doctest::Approx(0.3));
}

TEST_CASE("scores files are read with optional maps") {
    ssf::testing::TempDir dir("scores");
    Image map(4, 4, 1, 0.0f);
    map.at(1, 1) = 1.0f;
    write_png(dir / "m.png", map);
    Image mask(4, 4, 1, 0.0f);
    mask.at(1, 1) = 1.0f;
    write_png(dir / "g.png", mask);
    {
        std::ofstream out(dir / "s.tsv");
        out << "path\tcategory\tlabel\tscore\tmap\tmask\n";
        out << "a.png\tc\t1\t0.8\tm.png\tg.png\n";
        out << "b.png\tc\t0\t0.2\n";
    }
    const auto s = read_scored_samples(dir / "s.tsv");
    REQUIRE(s.size() == 2);
    CHECK(s[0].label == 1);
    CHECK(s[0].score == 0.8);
    CHECK(s[0].map.size() == 16);
    CHECK(s[0].mask.count() == 1);
    CHECK(s[1].map.empty());
    {
        std::ofstream(dir / "bad.tsv") << "h\nx\ty\n";
    }
    CHECK_THROWS_AS(read_scored_samples(dir / "bad.tsv"), IoError);
}
