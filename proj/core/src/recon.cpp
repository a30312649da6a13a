#include "ssfilter/recon.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "ssfilter/errors.hpp"

namespace ssf {

std::vector<int> ReconConfig::encoder_layers() const {
    std::set<int> all;
    for (const auto& g : encoder_groups) all.insert(g.begin(), g.end());
    return {all.begin(), all.end()};
}

AlignedFeatures ReconOutput::prediction_values() const {
    AlignedFeatures out = targets;
    for (size_t g = 0; g < predictions.size(); ++g) out.groups[g].assign(predictions[g].value().begin(), predictions[g].value().end());
    return out;
}

ReconModel::ReconModel(const ReconConfig& cfg, int embed_dim)
    : cfg_(cfg), dim_(embed_dim), store_(cfg.init_seed) {
    if (cfg.encoder_groups.empty()) throw ConfigError("recon model needs at least one encoder group");
    for (const auto& g : cfg.encoder_groups)
        if (g.empty()) throw ConfigError("empty encoder group");
    if (cfg.decoder_blocks < 1 || cfg.decoder_blocks % static_cast<int>(cfg.encoder_groups.size()) != 0)
        throw ConfigError("decoder_blocks must be a positive multiple of the encoder group count");
    if (cfg.bottleneck_dropout < 0.0f || cfg.bottleneck_dropout >= 1.0f)
        throw ConfigError("bottleneck dropout must lie in [0, 1)");
    const int hidden = std::max(1, static_cast<int>(std::lround(embed_dim * cfg.bottleneck_ratio)));
    fc1_ = LinearLayer::create(store_, "bottleneck.fc1", embed_dim, hidden);
    fc2_ = LinearLayer::create(store_, "bottleneck.fc2", hidden, embed_dim);
    for (int i = 0; i < cfg.decoder_blocks; ++i)
        blocks_.push_back(make_decoder_block(cfg.block_kind, store_, "decoder." + std::to_string(i), embed_dim,
                                             cfg.heads, cfg.mlp_ratio));
}

ReconOutput ReconModel::forward(const LayerFeatureMap& encoder, bool stochastic, std::mt19937_64& rng) const {
    const auto layers = cfg_.encoder_layers();
    for (int l : layers)
        if (!encoder.count(l)) throw ConfigError("encoder layer " + std::to_string(l) + " missing for recon model");
    const FeatureStack& ref = encoder.at(layers.front());
    if (ref.channels != dim_) throw InputError("encoder width differs from recon model width");

    ReconOutput out;
    out.grid = {ref.batch, ref.grid_h, ref.grid_w};
    out.targets = aligned_targets(cfg_, encoder);
    const size_t n = ref.data.size();
    std::vector<float> fused(n, 0.0f);
    size_t total_layers = 0;
    for (size_t g = 0; g < cfg_.encoder_groups.size(); ++g) {
        const float w = static_cast<float>(cfg_.encoder_groups[g].size());
        const auto& mean = out.targets.groups[g];
        for (size_t i = 0; i < n; ++i) fused[i] += mean[i] * w;
        total_layers += cfg_.encoder_groups[g].size();
    }
    for (auto& v : fused) v /= static_cast<float>(total_layers);

    const int rows = ref.batch * ref.tokens();
    const float p = stochastic ? cfg_.bottleneck_dropout : 0.0f;
    nn::Var x = nn::Var::constant(std::move(fused), rows, dim_);
    x = nn::dropout(nn::gelu(fc1_(x)), p, rng);
    x = nn::dropout(fc2_(x), p, rng);

    std::vector<nn::Var> outputs;
    for (const auto& block : blocks_) {
        x = block->forward(x, out.grid);
        outputs.push_back(x);
    }
    std::reverse(outputs.begin(), outputs.end());
    const size_t per_group = outputs.size() / cfg_.encoder_groups.size();
    for (size_t g = 0; g < cfg_.encoder_groups.size(); ++g) {
        std::span<const nn::Var> slice(outputs.data() + g * per_group, per_group);
        out.predictions.push_back(per_group == 1 ? slice[0] : nn::mean_of(slice));
    }
    return out;
}

AlignedFeatures aligned_targets(const ReconConfig& cfg, const LayerFeatureMap& encoder) {
    const auto layers = cfg.encoder_layers();
    for (int l : layers)
        if (!encoder.count(l)) throw ConfigError("encoder layer " + std::to_string(l) + " missing for recon model");
    const FeatureStack& ref = encoder.at(layers.front());
    const size_t n = ref.data.size();
    AlignedFeatures out{ref.batch, ref.grid_h, ref.grid_w, ref.channels, {}};
    for (const auto& group : cfg.encoder_groups) {
        std::vector<float> mean(n, 0.0f);
        for (int l : group) {
            const auto& d = encoder.at(l).data;
            if (d.size() != n) throw InputError("encoder layers have inconsistent shapes");
            for (size_t i = 0; i < n; ++i) mean[i] += d[i];
        }
        for (auto& v : mean) v /= static_cast<float>(group.size());
        out.groups.push_back(std::move(mean));
    }
    return out;
}

LayerFeatureMap encode_for_recon(const BackbonePort& backbone, const ReconConfig& cfg, std::span<const Image> images) {
    const auto layers = cfg.encoder_layers();
    for (int l : layers)
        if (l >= backbone.layer_count())
            throw ConfigError("encoder group layer " + std::to_string(l) + " exceeds backbone depth");
    return backbone.forward(images, layers);
}

ReconOutput forward_reconstruct(const BackbonePort& backbone, const ReconModel& model, std::span<const Image> images,
                                bool stochastic, std::mt19937_64& rng) {
    return model.forward(encode_for_recon(backbone, model.config(), images), stochastic, rng);
}

std::vector<float> anomaly_map(const AlignedFeatures& target, const AlignedFeatures& prediction, int image) {
    if (target.groups.size() != prediction.groups.size() || target.channels != prediction.channels ||
        target.tokens() != prediction.tokens() || target.batch != prediction.batch)
        throw InputError("anomaly_map: feature maps are not aligned");
    if (target.groups.empty()) throw InputError("anomaly_map: no feature groups");
    const int T = target.tokens(), C = target.channels;
    std::vector<float> map(T, 0.0f);
    int degenerate = 0;
    for (size_t g = 0; g < target.groups.size(); ++g) {
        const float* f = target.groups[g].data() + static_cast<size_t>(image) * T * C;
        const float* fh = prediction.groups[g].data() + static_cast<size_t>(image) * T * C;
        for (int t = 0; t < T; ++t) {
            double dot = 0, na = 0, nb = 0;
            for (int c = 0; c < C; ++c) {
                const double a = f[t * C + c], b = fh[t * C + c];
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
            double d;
            if (na == 0.0 || nb == 0.0) {
                d = 2.0;
                ++degenerate;
            } else {
                d = std::clamp(1.0 - dot / std::sqrt(na * nb), 0.0, 2.0);
            }
            map[t] += static_cast<float>(d);
        }
    }
    if (degenerate > 0) spdlog::warn("anomaly_map: {} zero-norm positions scored as 2", degenerate);
    for (auto& v : map) v /= static_cast<float>(target.groups.size());
    return map;
}

float image_score_from_map(std::span<const float> map, double region_fraction) {
    if (map.empty()) throw InputError("image score of an empty map");
    const int k = std::min<int>(static_cast<int>(map.size()),
                                std::max(1, static_cast<int>(std::floor(map.size() * region_fraction))));
    std::vector<float> v(map.begin(), map.end());
    std::nth_element(v.begin(), v.begin() + (k - 1), v.end(), std::greater<>());
    double acc = 0;
    for (int i = 0; i < k; ++i) acc += v[i];
    return static_cast<float>(acc / k);
}

float population_std(std::span<const float> values) {
    if (values.empty()) return 0.0f;
    double mean = 0;
    for (float v : values) mean += v;
    mean /= values.size();
    double var = 0;
    for (float v : values) var += (v - mean) * (v - mean);
    return static_cast<float>(std::sqrt(var / values.size()));
}

std::vector<AnomalyMapSet> estimate_uncertainty(const ReconModel& model, const LayerFeatureMap& encoder,
                                                std::mt19937_64& rng, const UncertaintyOptions& opts) {
    if (opts.passes < 2) throw ConfigError("uncertainty needs at least 2 stochastic passes");
    nn::NoGradGuard no_grad;
    std::vector<AnomalyMapSet> sets;
    for (int k = 0; k < opts.passes; ++k) {
        const ReconOutput out = model.forward(encoder, true, rng);
        const AlignedFeatures pred = out.prediction_values();
        if (sets.empty()) {
            sets.resize(out.targets.batch);
            for (auto& s : sets) {
                s.grid_h = out.targets.grid_h;
                s.grid_w = out.targets.grid_w;
                s.accumulated.assign(out.targets.tokens(), 0.0f);
            }
        }
        for (int b = 0; b < out.targets.batch; ++b) {
            auto map = anomaly_map(out.targets, pred, b);
            auto& s = sets[b];
            for (size_t i = 0; i < map.size(); ++i) s.accumulated[i] += map[i];
            s.pass_scores.push_back(image_score_from_map(map, opts.region_fraction));
            s.maps.push_back(std::move(map));
        }
    }
    for (auto& s : sets) s.uncertainty = population_std(s.pass_scores);
    return sets;
}

}  // namespace ssf
