#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/image.hpp"

namespace ssf {

/// Patch tokens of one transformer block for a batch: batch x tokens x channels, row-major
/// over the patch grid.
struct FeatureStack {
    int batch = 0;
    int grid_h = 0;
    int grid_w = 0;
    int channels = 0;
    std::vector<float> data;

    int tokens() const noexcept { return grid_h * grid_w; }
    std::span<const float> image(int b) const {
        const size_t n = static_cast<size_t>(tokens()) * channels;
        return {data.data() + b * n, n};
    }
};

using LayerFeatureMap = std::map<int, FeatureStack>;

/// Frozen patch-embedding network. Implementations are deterministic and read-only.
class BackbonePort {
public:
    virtual ~BackbonePort() = default;

    virtual int patch_size() const = 0;
    virtual int layer_count() const = 0;
    virtual int embed_dim() const = 0;
    /// Stable identifier used in cache keys and checkpoint headers.
    virtual std::string identity() const = 0;
    /// Hash of all weights; changes iff any parameter bit changes.
    virtual uint64_t weights_hash() const = 0;

    /// Post-block patch tokens for each requested layer index.
    virtual LayerFeatureMap forward(std::span<const Image> images, std::span<const int> layers) const = 0;
};

struct PatchTransformerConfig {
    int image_size = 64;  // native resolution of the position-embedding grid
    int patch_size = 8;
    int embed_dim = 32;
    int depth = 12;
    int heads = 4;
    float mlp_ratio = 4.0f;
    int register_tokens = 0;
    uint64_t init_seed = 0;
    /// Weight std multiplier on 1/sqrt(fan_in) for random initialisation.
    float init_gain = 1.0f;
};

/// ViT with pre-norm blocks, layer scale and optional register tokens (DINOv2 layout).
class PatchTransformer final : public BackbonePort {
public:
    /// Randomly initialised network for desk-scale runs.
    static std::unique_ptr<PatchTransformer> random(const PatchTransformerConfig& cfg);
    /// Loads a weights file written by save() or by an external converter.
    static std::unique_ptr<PatchTransformer> load(const std::filesystem::path& path);

    void save(const std::filesystem::path& path) const;

    int patch_size() const override { return cfg_.patch_size; }
    int layer_count() const override { return cfg_.depth; }
    int embed_dim() const override { return cfg_.embed_dim; }
    std::string identity() const override;
    uint64_t weights_hash() const override;
    LayerFeatureMap forward(std::span<const Image> images, std::span<const int> layers) const override;

    const PatchTransformerConfig& config() const noexcept { return cfg_; }

    struct Tensor {
        std::vector<int> shape;
        std::vector<float> data;
    };
    /// Named parameters; exposed for tests that perturb weights.
    std::map<std::string, Tensor>& parameters() noexcept { return params_; }

private:
    explicit PatchTransformer(PatchTransformerConfig cfg) : cfg_(cfg) {}
    void check_complete() const;
    const Tensor& param(const std::string& name) const;

    PatchTransformerConfig cfg_;
    std::string source_;
    std::map<std::string, Tensor> params_;
};

struct BackboneSpec {
    std::string weights_path;  // empty selects the random tiny network
    PatchTransformerConfig tiny;
};

std::unique_ptr<BackbonePort> make_backbone(const BackboneSpec& spec);

}  // namespace ssf
