#pragma once

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/autograd.hpp"
#include "ssfilter/backbone.hpp"
#include "ssfilter/decoder_blocks.hpp"

namespace ssf {

struct ReconConfig {
    float bottleneck_dropout = 0.2f;
    int decoder_blocks = 8;
    float mlp_ratio = 1.0f;
    int heads = 4;
    float bottleneck_ratio = 4.0f;
    DecoderKind block_kind = DecoderKind::mlla;
    /// Encoder layer groups; their means are the alignment targets, the mean of all feeds the bottleneck.
    std::vector<std::vector<int>> encoder_groups = {{2, 3, 4, 5}, {6, 7, 8, 9}};
    uint64_t init_seed = 0;

    std::vector<int> encoder_layers() const;
};

/// Per-group feature maps for a batch; each group holds batch x tokens x channels floats.
struct AlignedFeatures {
    int batch = 0;
    int grid_h = 0;
    int grid_w = 0;
    int channels = 0;
    std::vector<std::vector<float>> groups;

    int tokens() const noexcept { return grid_h * grid_w; }
};

struct ReconOutput {
    AlignedFeatures targets;           // encoder side, never differentiated
    std::vector<nn::Var> predictions;  // decoder side, one per group
    nn::TokenGrid grid;

    AlignedFeatures prediction_values() const;
};

/// Noise bottleneck (MLP with dropout) followed by a stack of decoder blocks whose outputs
/// are grouped (in reverse order) to mirror the encoder groups.
class ReconModel {
public:
    ReconModel(const ReconConfig& cfg, int embed_dim);

    const ReconConfig& config() const noexcept { return cfg_; }
    int embed_dim() const noexcept { return dim_; }

    /// Trainable parameters (bottleneck + decoder); the encoder is never part of this set.
    const std::vector<NamedParam>& parameters() const noexcept { return store_.params(); }

    /// Runs the decoder on cached encoder features. Dropout is active iff `stochastic`.
    ReconOutput forward(const LayerFeatureMap& encoder, bool stochastic, std::mt19937_64& rng) const;

private:
    ReconConfig cfg_;
    int dim_;
    ParamStore store_;
    LinearLayer fc1_, fc2_;
    std::vector<std::unique_ptr<DecoderBlock>> blocks_;
};

/// Per-group means of the encoder layers: the reconstruction targets.
AlignedFeatures aligned_targets(const ReconConfig& cfg, const LayerFeatureMap& encoder);

/// Encodes images with the frozen backbone, returning only the layers the model consumes.
LayerFeatureMap encode_for_recon(const BackbonePort& backbone, const ReconConfig& cfg,
                                 std::span<const Image> images);

/// Encodes and reconstructs in one step.
ReconOutput forward_reconstruct(const BackbonePort& backbone, const ReconModel& model,
                                std::span<const Image> images, bool stochastic, std::mt19937_64& rng);

/// Per position: 1 - cos(F, F_hat), averaged over groups; zero-norm positions score 2.
std::vector<float> anomaly_map(const AlignedFeatures& target, const AlignedFeatures& prediction, int image);

/// Mean of the max(1, floor(size * region_fraction)) largest map values.
float image_score_from_map(std::span<const float> map, double region_fraction = 0.01);

struct AnomalyMapSet {
    int grid_h = 0;
    int grid_w = 0;
    std::vector<std::vector<float>> maps;  // K per-pass maps
    std::vector<float> accumulated;        // elementwise sum of the K maps
    std::vector<float> pass_scores;        // K
    float uncertainty = 0.0f;              // population std of pass_scores
};

struct UncertaintyOptions {
    int passes = 10;
    double region_fraction = 0.01;
};

/// K stochastic bottleneck passes without gradient; one AnomalyMapSet per image.
std::vector<AnomalyMapSet> estimate_uncertainty(const ReconModel& model, const LayerFeatureMap& encoder,
                                                std::mt19937_64& rng, const UncertaintyOptions& opts = {});

/// Population standard deviation.
float population_std(std::span<const float> values);

}  // namespace ssf
