#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ssf {

enum class Phase { cold_start, regular };
std::string to_string(Phase phase);

/// Normal-sample uncertainty anchor, taken from the low-score half of the raw-score ranking.
struct BatchStatistics {
    double mu1 = 0.0;     // mean of U'_1
    double sigma1 = 0.0;  // population std of U'_1
    int split_index = 0;  // m = floor(keep_fraction * n)
};

struct SelectionDecision {
    std::vector<uint8_t> g;            // train mask
    std::vector<uint8_t> h;            // material-candidate mask
    std::vector<double> fused_scores;  // the quantity that was ranked
    std::vector<int> rank;             // rank[i] = position of sample i in the ascending order
    Phase phase = Phase::cold_start;

    int selected() const;
    int flagged() const;
    bool in_upper_partition(int i, int m) const { return rank[i] >= m; }
};

struct SelectionOptions {
    double keep_fraction = 0.5;
    double tau = 8.0;
};

/// Stable ascending order of `scores`, ties broken by original index.
std::vector<int> stable_ascending_order(std::span<const double> scores);

/// Min-max normalisation; a degenerate range (max == min) maps to all zeros.
std::vector<double> minmax_normalize(std::span<const double> values);

/// Statistics from the raw-score ranking: m, and mean/std of the uncertainties of the m lowest scores.
BatchStatistics anchor_statistics(std::span<const double> scores, std::span<const double> uncertainty,
                                  double keep_fraction);

/// Rank-only partition followed by uncertainty recall (u <= mu1) of the upper partition,
/// and material flags (u >= mu1 + tau * sigma1) within the upper partition.
SelectionDecision cold_start_select(std::span<const double> scores, std::span<const double> uncertainty,
                                    const SelectionOptions& opts, BatchStatistics* stats_out = nullptr);

/// As cold start, but the ranked quantity is (minmax(a) + minmax(u)) / 2 while the anchor
/// statistics still come from the raw-score ranking.
SelectionDecision regular_select(std::span<const double> scores, std::span<const double> uncertainty,
                                  const SelectionOptions& opts, BatchStatistics* stats_out = nullptr);

/// h_i = 1 iff sample i ranks in the upper partition and u_i >= mu1 + tau * sigma1.
std::vector<uint8_t> flag_materials(const SelectionDecision& decision, std::span<const double> uncertainty,
                                    const BatchStatistics& stats, double tau);

/// Appends one row per sample: iteration, image_id, a, u, fused, g, h.
class SelectionLog {
public:
    explicit SelectionLog(std::filesystem::path path);

    void append(int64_t iteration, std::span<const std::string> image_ids, std::span<const double> scores,
                std::span<const double> uncertainty, const SelectionDecision& decision);

    struct Row {
        int64_t iteration = 0;
        std::string image_id;
        double a = 0, u = 0, fused = 0;
        int g = 0, h = 0;
    };
    static std::vector<Row> read(const std::filesystem::path& path);

private:
    std::filesystem::path path_;
};

}  // namespace ssf
