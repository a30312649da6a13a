#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/backbone.hpp"
#include "ssfilter/config.hpp"
#include "ssfilter/dataset.hpp"
#include "ssfilter/filtering.hpp"
#include "ssfilter/image.hpp"
#include "ssfilter/recon.hpp"
#include "ssfilter/synergy_filter.hpp"

namespace ssf {

/// Rank-based AUROC with midranks for ties. Throws UndefinedMetricError unless both classes occur.
double image_auroc(std::span<const double> scores, std::span<const int> labels);

struct ProCurve {
    std::vector<double> fpr;  // ascending, starts at 0
    std::vector<double> pro;
};

/// Exact threshold sweep over every distinct map value (prediction = map >= t).
/// Regions are 8-connected components of each ground-truth mask.
ProCurve pro_curve(std::span<const std::vector<float>> maps, std::span<const BinaryGrid> masks);

/// Trapezoidal area under a curve on [0, limit], interpolating at the limit, divided by limit.
double normalized_area(const ProCurve& curve, double limit);

/// Per-region-overlap area up to `fpr_limit`, normalised to [0, 1].
/// Throws UndefinedMetricError when no mask has an anomalous pixel.
double region_pro_auc(std::span<const std::vector<float>> maps, std::span<const BinaryGrid> masks,
                      double fpr_limit = 0.3);

/// Fraction of logged anomalous occurrences with g = 0. Rows whose id is missing from `labels`
/// are ignored. Throws UndefinedMetricError when no anomalous row remains.
double abnormal_recall(std::span<const SelectionLog::Row> rows, const std::map<std::string, int>& labels);

/// Keep mask that discards the floor(discard * n) highest scores (stable on ties).
std::vector<uint8_t> discard_by_score(std::span<const double> scores, double discard_fraction);

/// One evaluated image: image score, optional pixel map and ground truth at the same resolution.
struct ScoredSample {
    std::string path;
    std::string category;
    int label = 0;
    double score = 0.0;
    std::vector<float> map;
    BinaryGrid mask;
};

struct CategoryMetrics {
    std::string category;
    double i_auroc = 0.0;
    double p_aupro = 0.0;  // NaN when undefined (no maps or no anomalous pixels)
    int n_normal = 0;
    int n_anomalous = 0;
};

struct EvalReport {
    double fpr_limit = 0.3;
    std::vector<CategoryMetrics> categories;
    double mean_i_auroc = 0.0;
    double mean_p_aupro = 0.0;  // over categories where defined
};

EvalReport evaluate_samples(std::span<const ScoredSample> samples, double fpr_limit = 0.3);

/// Deterministic (no dropout) maps for test samples: bilinear upsampling to the crop size,
/// Gaussian smoothing with cfg.eval_sigma, image score = mean of the top 1% pixels.
std::vector<ScoredSample> score_samples(const PipelineConfig& cfg, const ReconModel& model,
                                        const BackbonePort& backbone, std::span<const SampleRecord> samples);

/// Loads a checkpoint and evaluates the test split of `manifest`.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const DatasetManifest& manifest);

/// Reads "path, category, label, score[, map_png, mask_png]" rows (tab separated, one header line).
std::vector<ScoredSample> read_scored_samples(const std::filesystem::path& path);

/// eval_report.tsv (header line records fpr_limit and means, one row per category) and eval_bars.svg.
void write_eval_report(const std::filesystem::path& dir, const EvalReport& report);
EvalReport read_eval_report(const std::filesystem::path& path);

/// filter_report.tsv and filter_report.svg (noise rate before/after, utilisation).
void write_filter_report(const std::filesystem::path& dir, const FilterReport& report);

}  // namespace ssf
