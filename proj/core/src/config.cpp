#include "ssfilter/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ssfilter/errors.hpp"

namespace ssf {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty())
        throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
    return v;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string& key, const std::string&)> set;
};

template <typename T>
Field number_field(T PipelineConfig::*member) {
    return {[member](const PipelineConfig& c) {
                if constexpr (std::is_floating_point_v<T>)
                    return format_double(c.*member);
                else
                    return std::to_string(c.*member);
            },
            [member](PipelineConfig& c, const std::string& key, const std::string& v) {
                c.*member = parse_number<T>(key, v);
            }};
}

Field string_field(std::string PipelineConfig::*member) {
    return {[member](const PipelineConfig& c) { return c.*member; },
            [member](PipelineConfig& c, const std::string&, const std::string& v) { c.*member = v; }};
}

const std::map<std::string, Field>& fields() {
    using P = PipelineConfig;
    static const std::map<std::string, Field> table = {
        {"dataset", string_field(&P::dataset)},
        {"output_dir", string_field(&P::output_dir)},
        {"seed", number_field(&P::seed)},
        {"total_iterations", number_field(&P::total_iterations)},
        {"cold_start_iterations", number_field(&P::cold_start_iterations)},
        {"batch_size", number_field(&P::batch_size)},
        {"lr", number_field(&P::lr)},
        {"final_lr", number_field(&P::final_lr)},
        {"warmup_iterations", number_field(&P::warmup_iterations)},
        {"weight_decay", number_field(&P::weight_decay)},
        {"optimizer", string_field(&P::optimizer)},
        {"checkpoint_every", number_field(&P::checkpoint_every)},
        {"keep_fraction", number_field(&P::keep_fraction)},
        {"tau", number_field(&P::tau)},
        {"passes", number_field(&P::passes)},
        {"dropout", number_field(&P::dropout)},
        {"mine_fraction", number_field(&P::mine_fraction)},
        {"synth_fraction", number_field(&P::synth_fraction)},
        {"tp_max_fraction", number_field(&P::tp_max_fraction)},
        {"bank_capacity", number_field(&P::bank_capacity)},
        {"min_material_area", number_field(&P::min_material_area)},
        {"foreground_layer", number_field(&P::foreground_layer)},
        {"decoder_kind", string_field(&P::decoder_kind)},
        {"decoder_blocks", number_field(&P::decoder_blocks)},
        {"decoder_heads", number_field(&P::decoder_heads)},
        {"decoder_mlp_ratio", number_field(&P::decoder_mlp_ratio)},
        {"bottleneck_ratio", number_field(&P::bottleneck_ratio)},
        {"encoder_groups", string_field(&P::encoder_groups)},
        {"descriptor_layers", string_field(&P::descriptor_layers)},
        {"sim_fraction", number_field(&P::sim_fraction)},
        {"region_fraction", number_field(&P::region_fraction)},
        {"backbone_weights", string_field(&P::backbone_weights)},
        {"resize", number_field(&P::resize)},
        {"crop", number_field(&P::crop)},
        {"tiny_patch", number_field(&P::tiny_patch)},
        {"tiny_dim", number_field(&P::tiny_dim)},
        {"tiny_depth", number_field(&P::tiny_depth)},
        {"tiny_heads", number_field(&P::tiny_heads)},
        {"tiny_registers", number_field(&P::tiny_registers)},
        {"tiny_seed", number_field(&P::tiny_seed)},
        {"tiny_init_gain", number_field(&P::tiny_init_gain)},
        {"kappa1", number_field(&P::kappa1)},
        {"kappa2", number_field(&P::kappa2)},
        {"eval_sigma", number_field(&P::eval_sigma)},
        {"fpr_limit", number_field(&P::fpr_limit)},
    };
    return table;
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError("config key '" + key + "': " + what);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& source) {
    KeyValueConfig kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
        const auto key = trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
        kv.values_[key] = trim(std::string_view(body).substr(eq + 1));
    }
    return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string KeyValueConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

std::vector<std::string> PipelineConfig::known_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : fields()) keys.push_back(k);
    return keys;
}

void PipelineConfig::apply(const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(*this, key, value);
}

PipelineConfig PipelineConfig::from_kv(const KeyValueConfig& kv) {
    PipelineConfig c;
    for (const auto& [k, v] : kv.values()) c.apply(k, v);
    return c;
}

KeyValueConfig PipelineConfig::to_kv() const {
    KeyValueConfig kv;
    for (const auto& [k, f] : fields()) kv.set(k, f.get(*this));
    return kv;
}

std::vector<std::vector<int>> parse_layer_groups(const std::string& text) {
    std::vector<std::vector<int>> groups;
    std::stringstream outer(text);
    std::string group;
    while (std::getline(outer, group, ';')) {
        std::vector<int> layers;
        std::stringstream inner(group);
        std::string item;
        while (std::getline(inner, item, ',')) {
            const auto t = trim(item);
            if (!t.empty()) layers.push_back(parse_number<int>("encoder_groups", t));
        }
        if (layers.empty()) throw ConfigError("config key 'encoder_groups': empty group in '" + text + "'");
        groups.push_back(std::move(layers));
    }
    if (groups.empty()) throw ConfigError("config key 'encoder_groups': no groups");
    return groups;
}

void PipelineConfig::validate() const {
    require(total_iterations > 0, "total_iterations", "must be positive");
    require(cold_start_iterations >= 0 && cold_start_iterations < total_iterations, "cold_start_iterations",
            "must be in [0, total_iterations)");
    require(batch_size >= 4, "batch_size", "must be at least 4");
    require(lr > 0 && final_lr >= 0, "lr", "learning rates must be positive");
    require(warmup_iterations >= 0, "warmup_iterations", "must be non-negative");
    require(weight_decay >= 0, "weight_decay", "must be non-negative");
    require(optimizer == "stable_adamw" || optimizer == "adamw", "optimizer", "expected stable_adamw|adamw");
    require(checkpoint_every >= 0, "checkpoint_every", "must be non-negative");
    require(keep_fraction > 0 && keep_fraction < 1, "keep_fraction", "must be in (0, 1)");
    require(tau >= 0, "tau", "must be non-negative");
    require(passes >= 2, "passes", "need at least 2 stochastic passes");
    require(dropout >= 0 && dropout < 1, "dropout", "must be in [0, 1)");
    require(mine_fraction >= 0 && mine_fraction <= 1, "mine_fraction", "must be in [0, 1]");
    require(synth_fraction >= 0 && synth_fraction <= 1, "synth_fraction", "must be in [0, 1]");
    require(tp_max_fraction > 0 && tp_max_fraction <= 1, "tp_max_fraction", "must be in (0, 1]");
    require(bank_capacity > 0, "bank_capacity", "must be positive");
    require(min_material_area >= 1, "min_material_area", "must be positive");
    parse_decoder_kind(decoder_kind);
    require(decoder_blocks > 0, "decoder_blocks", "must be positive");
    require(decoder_heads > 0, "decoder_heads", "must be positive");
    if (backbone_weights.empty())
        require(tiny_dim % decoder_heads == 0, "decoder_heads", "must divide the embedding width");
    require(decoder_mlp_ratio > 0 && bottleneck_ratio > 0, "decoder_mlp_ratio", "ratios must be positive");
    const auto groups = parse_layer_groups(encoder_groups);
    const int depth = tiny_depth;
    for (const auto& g : groups)
        for (int l : g)
            require(backbone_weights.empty() ? (l >= 0 && l < depth) : l >= 0, "encoder_groups",
                    "layer " + std::to_string(l) + " outside the backbone");
    require(static_cast<int>(groups.size()) <= decoder_blocks, "encoder_groups", "more groups than decoder blocks");
    require(decoder_blocks % static_cast<int>(groups.size()) == 0, "decoder_blocks",
            "must be a multiple of the group count");
    const auto spec = layer_spec();
    if (backbone_weights.empty())
        for (int l : spec.required_layers())
            require(l >= 0 && l < depth, "descriptor_layers", "layer " + std::to_string(l) + " outside the backbone");
    require(sim_fraction > 0 && sim_fraction <= 1, "sim_fraction", "must be in (0, 1]");
    require(region_fraction > 0 && region_fraction <= 1, "region_fraction", "must be in (0, 1]");
    require(resize > 0 && crop > 0 && crop <= resize, "crop", "must be positive and no larger than resize");
    if (backbone_weights.empty()) require(crop % tiny_patch == 0, "crop", "must be divisible by tiny_patch");
    require(tiny_dim % tiny_heads == 0, "tiny_heads", "must divide tiny_dim");
    require(kappa1 > 0, "kappa1", "must be positive");
    require(kappa2 >= 0, "kappa2", "must be non-negative");
    require(fpr_limit > 0 && fpr_limit <= 1, "fpr_limit", "must be in (0, 1]");
}

ReconConfig PipelineConfig::recon() const {
    ReconConfig r;
    r.bottleneck_dropout = static_cast<float>(dropout);
    r.decoder_blocks = decoder_blocks;
    r.mlp_ratio = static_cast<float>(decoder_mlp_ratio);
    r.heads = decoder_heads;
    r.bottleneck_ratio = static_cast<float>(bottleneck_ratio);
    r.block_kind = parse_decoder_kind(decoder_kind);
    r.encoder_groups = parse_layer_groups(encoder_groups);
    r.init_seed = seed;
    return r;
}

BackboneSpec PipelineConfig::backbone() const {
    BackboneSpec s;
    s.weights_path = backbone_weights;
    s.tiny.image_size = crop;
    s.tiny.patch_size = tiny_patch;
    s.tiny.embed_dim = tiny_dim;
    s.tiny.depth = tiny_depth;
    s.tiny.heads = tiny_heads;
    s.tiny.register_tokens = tiny_registers;
    s.tiny.init_seed = tiny_seed;
    s.tiny.init_gain = static_cast<float>(tiny_init_gain);
    return s;
}

LayerSpec PipelineConfig::layer_spec() const {
    try {
        return LayerSpec::parse(descriptor_layers);
    } catch (const Error& e) {
        throw ConfigError(std::string("config key 'descriptor_layers': ") + e.what());
    }
}

int PipelineConfig::resolved_foreground_layer() const {
    if (foreground_layer >= 0) return foreground_layer;
    const auto groups = parse_layer_groups(encoder_groups);
    return groups.back().back();
}

}  // namespace ssf
