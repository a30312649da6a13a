#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/anomaly_forge.hpp"
#include "ssfilter/backbone.hpp"
#include "ssfilter/checkpoint.hpp"
#include "ssfilter/config.hpp"
#include "ssfilter/dataset.hpp"
#include "ssfilter/optimizer.hpp"
#include "ssfilter/patch_scorer.hpp"
#include "ssfilter/recon.hpp"
#include "ssfilter/synergy_filter.hpp"

namespace ssf {

using TrainConfig = PipelineConfig;

struct LossReport {
    double l_rec = 0.0;
    double l_res = 0.0;
    double l_total = 0.0;
    int n1 = 0;  // |X_g|
    int n2 = 0;  // synthetic pairs
    int flagged = 0;
    int materials_added = 0;
    size_t bank_size = 0;
    Phase phase = Phase::cold_start;
    int64_t iteration = 0;
    float lr = 0.0f;
    bool skipped = false;
};

/// Preprocessed images plus their frozen encoder features, computed once.
class EncodedDataset {
public:
    struct Item {
        std::string id;
        int label = -1;
        Image image;
        LayerFeatureMap features;  // batch of one
    };

    EncodedDataset(const BackbonePort& backbone, std::vector<int> layers);

    void add(std::string id, Image image, int label = -1);
    /// Encodes every item not yet encoded, in chunks.
    void encode_pending(int chunk = 16);

    size_t size() const noexcept { return items_.size(); }
    const Item& item(size_t i) const { return items_.at(i); }
    const std::vector<int>& layers() const noexcept { return layers_; }

    /// Stacks the cached features of `indices` into one batch.
    LayerFeatureMap gather(std::span<const int> indices) const;

private:
    const BackbonePort& backbone_;
    std::vector<int> layers_;
    std::vector<Item> items_;
    size_t encoded_ = 0;
};

/// Layers the pipeline needs from the encoder: decoder targets, descriptor and foreground.
std::vector<int> pipeline_layers(const PipelineConfig& cfg);

/// Mutual scores, uncertainty and accumulated maps for one batch.
struct BatchEvidence {
    std::vector<double> scores;       // a
    std::vector<double> uncertainty;  // u
    std::vector<AnomalyMapSet> maps;
};

BatchEvidence gather_evidence(const PipelineConfig& cfg, const ReconModel& model, const LayerFeatureMap& features,
                              std::mt19937_64& rng);

/// Owns the decoder, optimiser, material bank and RNG for one training run.
class Trainer {
public:
    Trainer(PipelineConfig cfg, const BackbonePort& backbone, const EncodedDataset& data);

    const PipelineConfig& config() const noexcept { return cfg_; }
    const ReconModel& model() const noexcept { return *model_; }
    const MaterialBank& bank() const noexcept { return bank_; }
    MaterialBank& bank() noexcept { return bank_; }
    int64_t iteration() const noexcept { return iteration_; }
    Phase phase() const noexcept { return phase_for(iteration_); }
    Phase phase_for(int64_t iteration) const noexcept;

    /// Dataset indices of the batch for `iteration`; a pure function of seed and iteration.
    std::vector<int> batch_indices(int64_t iteration) const;

    /// One full step on the given dataset indices; advances the iteration counter.
    LossReport train_step(std::span<const int> batch);
    /// train_step on batch_indices(iteration()).
    LossReport step() { return train_step(batch_indices(iteration_)); }

    void set_selection_log(std::optional<SelectionLog> log) { selection_log_ = std::move(log); }

    Checkpoint checkpoint() const;
    void restore(const Checkpoint& ckpt);

private:
    PipelineConfig cfg_;
    const BackbonePort& backbone_;
    const EncodedDataset& data_;
    std::unique_ptr<ReconModel> model_;
    std::unique_ptr<Optimizer> optimizer_;
    MaterialBank bank_;
    std::mt19937_64 rng_;
    int64_t iteration_ = 0;
    std::optional<SelectionLog> selection_log_;
};

/// Rebuilds a trained model (and its configuration) from a checkpoint.
struct LoadedModel {
    PipelineConfig config;
    std::unique_ptr<ReconModel> model;
};
LoadedModel load_model(const Checkpoint& ckpt, int embed_dim);

/// Fills an EncodedDataset from manifest samples, preprocessing with the configured sizes.
void add_samples(EncodedDataset& data, std::span<const SampleRecord> samples, const PipelineConfig& cfg);

struct TrainingResult {
    std::filesystem::path checkpoint;
    std::filesystem::path loss_log;
    std::vector<LossReport> reports;  // iterations run by this call
};

/// Trains on the train split of `manifest` and writes, under cfg.output_dir: config.txt,
/// loss_log.tsv, selection_log.tsv, checkpoints/iter_<n>.ckpt and final.ckpt.
TrainingResult run_training(const PipelineConfig& cfg, const DatasetManifest& manifest,
                            const std::optional<std::filesystem::path>& resume = std::nullopt,
                            const std::function<void(const LossReport&)>& progress = {});

/// Header plus one row per iteration.
void write_loss_header(std::ostream& out);
void write_loss_row(std::ostream& out, const LossReport& r);

}  // namespace ssf
