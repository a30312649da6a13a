#include "ssfilter/synergy_filter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ssfilter/errors.hpp"

namespace ssf {

std::string to_string(Phase phase) { return phase == Phase::cold_start ? "cold_start" : "regular"; }

int SelectionDecision::selected() const { return static_cast<int>(std::count(g.begin(), g.end(), uint8_t{1})); }
int SelectionDecision::flagged() const { return static_cast<int>(std::count(h.begin(), h.end(), uint8_t{1})); }

namespace {

void validate(std::span<const double> a, std::span<const double> u, double keep_fraction) {
    if (a.size() != u.size()) throw InputError("score and uncertainty counts differ");
    if (a.size() < 2) throw InputError("batch too small for selection (need at least 2 samples)");
    for (size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a[i]) || !std::isfinite(u[i])) throw InputError("non-finite score or uncertainty");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must lie in (0, 1]");
}

SelectionDecision select_on(std::span<const double> ranked, std::span<const double> u, const BatchStatistics& st,
                            const SelectionOptions& opts, Phase phase) {
    const int n = static_cast<int>(ranked.size());
    SelectionDecision d;
    d.phase = phase;
    d.fused_scores.assign(ranked.begin(), ranked.end());
    const auto order = stable_ascending_order(ranked);
    d.rank.assign(n, 0);
    for (int r = 0; r < n; ++r) d.rank[order[r]] = r;
    d.g.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        const bool lower = d.rank[i] < st.split_index;
        d.g[i] = (lower || u[i] <= st.mu1) ? 1 : 0;
    }
    d.h = flag_materials(d, u, st, opts.tau);
    return d;
}

}  // namespace

std::vector<int> stable_ascending_order(std::span<const double> scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return scores[x] < scores[y]; });
    return order;
}

std::vector<double> minmax_normalize(std::span<const double> values) {
    std::vector<double> out(values.size(), 0.0);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    if (range <= 0.0) return out;
    for (size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
    return out;
}

BatchStatistics anchor_statistics(std::span<const double> a, std::span<const double> u, double keep_fraction) {
    validate(a, u, keep_fraction);
    BatchStatistics st;
    const int n = static_cast<int>(a.size());
    st.split_index = static_cast<int>(std::floor(keep_fraction * n + 1e-9));
    if (st.split_index < 1) throw ConfigError("keep_fraction leaves an empty normal anchor set");
    const auto order = stable_ascending_order(a);
    double mean = 0;
    for (int r = 0; r < st.split_index; ++r) mean += u[order[r]];
    mean /= st.split_index;
    double var = 0;
    for (int r = 0; r < st.split_index; ++r) var += (u[order[r]] - mean) * (u[order[r]] - mean);
    st.mu1 = mean;
    st.sigma1 = std::sqrt(var / st.split_index);
    return st;
}

SelectionDecision cold_start_select(std::span<const double> a, std::span<const double> u, const SelectionOptions& opts,
                                    BatchStatistics* stats_out) {
    const BatchStatistics st = anchor_statistics(a, u, opts.keep_fraction);
    if (stats_out) *stats_out = st;
    return select_on(a, u, st, opts, Phase::cold_start);
}

SelectionDecision regular_select(std::span<const double> a, std::span<const double> u, const SelectionOptions& opts,
                                 BatchStatistics* stats_out) {
    const BatchStatistics st = anchor_statistics(a, u, opts.keep_fraction);
    if (stats_out) *stats_out = st;
    const auto na = minmax_normalize(a);
    const auto nu = minmax_normalize(u);
    std::vector<double> fused(a.size());
    for (size_t i = 0; i < a.size(); ++i) fused[i] = 0.5 * (na[i] + nu[i]);
    return select_on(fused, u, st, opts, Phase::regular);
}

std::vector<uint8_t> flag_materials(const SelectionDecision& d, std::span<const double> u, const BatchStatistics& st,
                                    double tau) {
    std::vector<uint8_t> h(u.size(), 0);
    const double threshold = st.mu1 + tau * st.sigma1;
    for (size_t i = 0; i < u.size(); ++i)
        h[i] = (d.in_upper_partition(static_cast<int>(i), st.split_index) && u[i] >= threshold) ? 1 : 0;
    return h;
}

SelectionLog::SelectionLog(std::filesystem::path path) : path_(std::move(path)) {
    const bool fresh = !std::filesystem::exists(path_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError(path_.string(), "cannot open selection log");
    if (fresh) out << "iteration\timage_id\ta\tu\tfused\tg\th\n";
}

void SelectionLog::append(int64_t iteration, std::span<const std::string> ids, std::span<const double> a,
                          std::span<const double> u, const SelectionDecision& d) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError(path_.string(), "cannot append selection log");
    out.precision(9);
    for (size_t i = 0; i < ids.size(); ++i)
        out << iteration << '\t' << ids[i] << '\t' << a[i] << '\t' << u[i] << '\t' << d.fused_scores[i] << '\t'
            << int(d.g[i]) << '\t' << int(d.h[i]) << '\n';
}

std::vector<SelectionLog::Row> SelectionLog::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot read selection log");
    std::vector<Row> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Row r;
        std::string field;
        std::getline(ss, field, '\t');
        r.iteration = std::stoll(field);
        std::getline(ss, r.image_id, '\t');
        ss >> r.a >> r.u >> r.fused >> r.g >> r.h;
        if (!ss) throw IoError(path.string(), "malformed selection log row");
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace ssf
