#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssfilter/anomaly_forge.hpp"
#include "ssfilter/backbone.hpp"
#include "ssfilter/descriptor.hpp"
#include "ssfilter/patch_scorer.hpp"
#include "ssfilter/recon.hpp"
#include "ssfilter/synergy_filter.hpp"

namespace ssf {

/// Ordered flat key=value store. '#' starts a comment; blank lines are ignored.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text, const std::string& source = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    std::optional<std::string> get(const std::string& key) const;
    const std::map<std::string, std::string>& values() const noexcept { return values_; }

    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

/// Every tunable of the pipeline. Defaults are the full-size training recipe; the
/// backbone and resolution defaults describe the full-size setting.
struct PipelineConfig {
    // data and artifacts
    std::string dataset;
    std::string output_dir = "ssfilter_out";
    uint64_t seed = 0;

    // training schedule
    int64_t total_iterations = 5000;
    int64_t cold_start_iterations = 1000;
    int batch_size = 32;
    double lr = 2e-3;
    double final_lr = 2e-4;
    int64_t warmup_iterations = 100;
    double weight_decay = 1e-4;
    std::string optimizer = "stable_adamw";
    int64_t checkpoint_every = 1000;

    // selection and uncertainty
    double keep_fraction = 0.5;
    double tau = 8.0;
    int passes = 10;
    double dropout = 0.2;
    double mine_fraction = 0.9;

    // anomaly synthesis
    double synth_fraction = 0.5;
    double tp_max_fraction = 0.8;
    int bank_capacity = 256;
    int min_material_area = 16;
    int foreground_layer = -1;  // -1: last encoder layer used by the decoder

    // decoder
    std::string decoder_kind = "mlla";
    int decoder_blocks = 8;
    int decoder_heads = 4;
    double decoder_mlp_ratio = 1.0;
    double bottleneck_ratio = 4.0;
    std::string encoder_groups = "2,3,4,5;6,7,8,9";

    // descriptor and scoring
    std::string descriptor_layers = "0,3|0,3,7";
    double sim_fraction = 0.001;
    double region_fraction = 0.01;

    // backbone and preprocessing
    std::string backbone_weights;
    int resize = 448;
    int crop = 392;
    int tiny_patch = 14;
    int tiny_dim = 32;
    int tiny_depth = 12;
    int tiny_heads = 4;
    int tiny_registers = 0;
    uint64_t tiny_seed = 0;
    double tiny_init_gain = 1.0;

    // dataset filtering and evaluation
    int kappa1 = 20;
    int kappa2 = 5;
    double eval_sigma = 4.0;
    double fpr_limit = 0.3;

    /// Unknown keys and unparsable values raise ConfigError naming the key.
    static PipelineConfig from_kv(const KeyValueConfig& kv);
    KeyValueConfig to_kv() const;
    std::string echo() const { return to_kv().to_text(); }
    void apply(const std::string& key, const std::string& value);
    static std::vector<std::string> known_keys();

    /// Range and consistency checks; throws ConfigError.
    void validate() const;

    ReconConfig recon() const;
    BackboneSpec backbone() const;
    LayerSpec layer_spec() const;
    SelectionOptions selection() const { return {keep_fraction, tau}; }
    MutualScoreOptions scoring() const { return {sim_fraction, region_fraction}; }
    UncertaintyOptions uncertainty() const { return {passes, region_fraction}; }
    int resolved_foreground_layer() const;
};

/// Parses "2,3,4,5;6,7,8,9" into layer groups.
std::vector<std::vector<int>> parse_layer_groups(const std::string& text);

}  // namespace ssf
