#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/backbone.hpp"
#include "ssfilter/image.hpp"

namespace ssf {

/// Which backbone layers form a patch descriptor: layers concatenated as-is, plus the
/// elementwise mean of a (possibly repeated) layer list appended as one extra block.
struct LayerSpec {
    std::vector<int> concat_layers;  // kept sorted ascending and unique
    std::vector<int> mean_layers;    // order irrelevant, repeats allowed

    LayerSpec() = default;
    LayerSpec(std::vector<int> concat, std::vector<int> mean);

    /// Default fused descriptor: {0,3} concatenated with mean{0,3,7}.
    static LayerSpec fused_default() { return LayerSpec({0, 3}, {0, 3, 7}); }
    /// Parses "0,3|0,3,7" (concat|mean); the mean part may be empty ("0|").
    static LayerSpec parse(const std::string& text);

    std::vector<int> required_layers() const;
    int descriptor_dim(int channels) const;
    std::string to_string() const;
    bool operator==(const LayerSpec&) const = default;
};

struct PatchDescriptorBatch {
    int batch = 0;
    int grid_h = 0;
    int grid_w = 0;
    int dim = 0;
    LayerSpec layer_spec;
    std::vector<std::string> image_ids;
    std::vector<float> data;  // batch x (grid_h * grid_w) x dim

    int patches_per_image() const noexcept { return grid_h * grid_w; }
    std::span<const float> row(int image, int patch) const {
        return {data.data() + (static_cast<size_t>(image) * patches_per_image() + patch) * dim,
                static_cast<size_t>(dim)};
    }
};

/// One feature stack per requested layer, validated against the backbone.
LayerFeatureMap extract_layer_features(const BackbonePort& backbone, std::span<const Image> images,
                                       std::span<const int> layers);

PatchDescriptorBatch build_descriptor(const LayerFeatureMap& per_layer, const LayerSpec& spec,
                                      std::vector<std::string> image_ids = {});

/// Concatenates descriptor batches that share grid and layer spec.
PatchDescriptorBatch concat_descriptors(std::span<const PatchDescriptorBatch> parts);

struct ForegroundMask {
    BinaryGrid mask;
    double coverage = 0.0;
    bool degenerate = false;  // all-true or all-false
};

/// First-principal-component foreground split of one image's patch features (N_p x C).
/// The sign is oriented so that most border cells fall on the background side.
/// Throws DegenerateError when the features have no variance.
ForegroundMask estimate_foreground(std::span<const float> features, int channels, int grid_h, int grid_w);

/// Persists single-image descriptors keyed by (image path, layer spec, backbone identity).
class DescriptorCache {
public:
    explicit DescriptorCache(std::filesystem::path dir);
    /// Uses $SSF_CACHE_DIR when set.
    static std::optional<DescriptorCache> from_environment();

    std::optional<PatchDescriptorBatch> load(const std::string& image_path, const LayerSpec& spec,
                                             const std::string& backbone_id) const;
    void store(const std::string& image_path, const std::string& backbone_id,
               const PatchDescriptorBatch& single) const;

private:
    std::filesystem::path file_for(const std::string& image_path, const LayerSpec& spec,
                                   const std::string& backbone_id) const;
    std::filesystem::path dir_;
};

}  // namespace ssf
