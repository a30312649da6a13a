#include "ssfilter/backbone.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <string_view>

#include "ssfilter/errors.hpp"

namespace ssf {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapMat = Eigen::Map<const RowMat>;

constexpr char kWeightsMagic[8] = {'S', 'S', 'F', 'V', 'I', 'T', '0', '1'};
constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};

std::string block_key(int i, const char* leaf) { return "blocks." + std::to_string(i) + "." + leaf; }

void layer_norm_rows(RowMat& x, const std::vector<float>& w, const std::vector<float>& b) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        const float mean = row.mean();
        const float var = (row.array() - mean).square().mean();
        const float inv = 1.0f / std::sqrt(var + 1e-6f);
        for (Eigen::Index c = 0; c < x.cols(); ++c) row(c) = (row(c) - mean) * inv * w[c] + b[c];
    }
}

float gelu(float v) { return 0.5f * v * (1.0f + std::erf(v * 0.70710678f)); }

}  // namespace

std::unique_ptr<PatchTransformer> PatchTransformer::random(const PatchTransformerConfig& cfg) {
    if (cfg.patch_size <= 0 || cfg.image_size % cfg.patch_size != 0)
        throw ConfigError("backbone image_size must be a multiple of patch_size");
    if (cfg.embed_dim % cfg.heads != 0) throw ConfigError("backbone embed_dim must be divisible by heads");
    auto net = std::unique_ptr<PatchTransformer>(new PatchTransformer(cfg));
    net->source_ = "tiny";

    std::mt19937_64 rng(cfg.init_seed);
    const int C = cfg.embed_dim;
    const int hidden = static_cast<int>(std::lround(C * cfg.mlp_ratio));
    const int grid = cfg.image_size / cfg.patch_size;
    auto gaussian = [&](std::vector<int> shape, float std) {
        Tensor t{shape, {}};
        size_t n = 1;
        for (int s : shape) n *= static_cast<size_t>(s);
        std::normal_distribution<float> dist(0.0f, std);
        t.data.resize(n);
        for (auto& v : t.data) v = dist(rng);
        return t;
    };
    auto constant = [](std::vector<int> shape, float value) {
        size_t n = 1;
        for (int s : shape) n *= static_cast<size_t>(s);
        return Tensor{shape, std::vector<float>(n, value)};
    };
    auto fan_in = [&](int n) { return cfg.init_gain / std::sqrt(static_cast<float>(n)); };

    const int patch_in = 3 * cfg.patch_size * cfg.patch_size;
    auto& p = net->params_;
    p["patch_embed.weight"] = gaussian({C, patch_in}, fan_in(patch_in));
    p["patch_embed.bias"] = constant({C}, 0.0f);
    p["cls_token"] = gaussian({C}, 0.02f);
    p["pos_embed"] = gaussian({1 + grid * grid, C}, 0.02f);
    if (cfg.register_tokens > 0) p["register_tokens"] = gaussian({cfg.register_tokens, C}, 0.02f);
    for (int i = 0; i < cfg.depth; ++i) {
        p[block_key(i, "norm1.weight")] = constant({C}, 1.0f);
        p[block_key(i, "norm1.bias")] = constant({C}, 0.0f);
        p[block_key(i, "attn.qkv.weight")] = gaussian({3 * C, C}, fan_in(C));
        p[block_key(i, "attn.qkv.bias")] = constant({3 * C}, 0.0f);
        p[block_key(i, "attn.proj.weight")] = gaussian({C, C}, fan_in(C));
        p[block_key(i, "attn.proj.bias")] = constant({C}, 0.0f);
        p[block_key(i, "ls1.gamma")] = constant({C}, 1.0f);
        p[block_key(i, "norm2.weight")] = constant({C}, 1.0f);
        p[block_key(i, "norm2.bias")] = constant({C}, 0.0f);
        p[block_key(i, "mlp.fc1.weight")] = gaussian({hidden, C}, fan_in(C));
        p[block_key(i, "mlp.fc1.bias")] = constant({hidden}, 0.0f);
        p[block_key(i, "mlp.fc2.weight")] = gaussian({C, hidden}, fan_in(hidden));
        p[block_key(i, "mlp.fc2.bias")] = constant({C}, 0.0f);
        p[block_key(i, "ls2.gamma")] = constant({C}, 1.0f);
    }
    return net;
}

std::unique_ptr<PatchTransformer> PatchTransformer::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open backbone weights");
    char magic[8];
    uint64_t header_len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
    if (!in || !std::equal(magic, magic + 8, kWeightsMagic))
        throw IoError(path.string(), "not a backbone weights file");
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string(), std::string("bad weights header (") + e.what() + ")");
    }
    PatchTransformerConfig cfg;
    const auto& c = meta.at("config");
    cfg.image_size = c.at("image_size");
    cfg.patch_size = c.at("patch_size");
    cfg.embed_dim = c.at("embed_dim");
    cfg.depth = c.at("depth");
    cfg.heads = c.at("heads");
    cfg.mlp_ratio = c.at("mlp_ratio");
    cfg.register_tokens = c.value("register_tokens", 0);

    auto net = std::unique_ptr<PatchTransformer>(new PatchTransformer(cfg));
    net->source_ = path.filename().string();
    for (const auto& t : meta.at("tensors")) {
        Tensor tensor;
        tensor.shape = t.at("shape").get<std::vector<int>>();
        size_t n = 1;
        for (int s : tensor.shape) n *= static_cast<size_t>(s);
        tensor.data.resize(n);
        in.read(reinterpret_cast<char*>(tensor.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
        if (!in) throw IoError(path.string(), "truncated backbone weights");
        net->params_[t.at("name").get<std::string>()] = std::move(tensor);
    }
    net->check_complete();
    return net;
}

void PatchTransformer::save(const std::filesystem::path& path) const {
    nlohmann::json meta;
    meta["config"] = {{"image_size", cfg_.image_size}, {"patch_size", cfg_.patch_size},
                      {"embed_dim", cfg_.embed_dim},   {"depth", cfg_.depth},
                      {"heads", cfg_.heads},           {"mlp_ratio", cfg_.mlp_ratio},
                      {"register_tokens", cfg_.register_tokens}};
    meta["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : params_) meta["tensors"].push_back({{"name", name}, {"shape", t.shape}});
    const std::string header = meta.dump();
    const uint64_t header_len = header.size();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot write backbone weights");
    out.write(kWeightsMagic, 8);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : params_)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw IoError(path.string(), "write failed");
}

void PatchTransformer::check_complete() const {
    std::vector<std::string> required = {"patch_embed.weight", "patch_embed.bias", "cls_token", "pos_embed"};
    if (cfg_.register_tokens > 0) required.push_back("register_tokens");
    for (int i = 0; i < cfg_.depth; ++i)
        for (const char* leaf : {"norm1.weight", "norm1.bias", "attn.qkv.weight", "attn.qkv.bias",
                                 "attn.proj.weight", "attn.proj.bias", "ls1.gamma", "norm2.weight",
                                 "norm2.bias", "mlp.fc1.weight", "mlp.fc1.bias", "mlp.fc2.weight",
                                 "mlp.fc2.bias", "ls2.gamma"})
            required.push_back(block_key(i, leaf));
    for (const auto& name : required)
        if (!params_.count(name)) throw ConfigError("backbone weights missing tensor " + name);
}

const PatchTransformer::Tensor& PatchTransformer::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("backbone has no tensor " + name);
    return it->second;
}

std::string PatchTransformer::identity() const {
    return "vit:" + source_ + ":p" + std::to_string(cfg_.patch_size) + ":d" + std::to_string(cfg_.embed_dim) +
           ":L" + std::to_string(cfg_.depth) + ":s" + std::to_string(cfg_.init_seed) + ":h" +
           std::to_string(weights_hash());
}

uint64_t PatchTransformer::weights_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : params_) {
        const std::string_view bytes(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
        const uint64_t part = std::hash<std::string_view>{}(name) ^ (std::hash<std::string_view>{}(bytes) << 1);
        h = (h ^ part) * 1099511628211ull;
    }
    return h;
}

LayerFeatureMap PatchTransformer::forward(std::span<const Image> images, std::span<const int> layers) const {
    if (images.empty()) throw InputError("backbone forward on empty batch");
    for (int l : layers)
        if (l < 0 || l >= cfg_.depth)
            throw ConfigError("layer index " + std::to_string(l) + " outside backbone depth " +
                              std::to_string(cfg_.depth));
    const int H = images[0].height, W = images[0].width;
    const int P = cfg_.patch_size;
    for (const auto& img : images) {
        if (img.height != H || img.width != W) throw InputError("backbone batch has mixed image sizes");
        if (img.channels != 3) throw InputError("backbone expects 3-channel images");
    }
    if (H % P != 0 || W % P != 0)
        throw InputError("image " + std::to_string(W) + "x" + std::to_string(H) +
                         " not divisible by patch size " + std::to_string(P));

    const int gh = H / P, gw = W / P, G = gh * gw;
    const int C = cfg_.embed_dim;
    const int R = cfg_.register_tokens;
    const int M = 1 + R + G;
    const int heads = cfg_.heads, hd = C / heads;
    const std::set<int> wanted(layers.begin(), layers.end());
    const int last = wanted.empty() ? -1 : *wanted.rbegin();

    // Position embedding for the patch grid, interpolated when the grid differs from native.
    const auto& pos = param("pos_embed");
    const int native = cfg_.image_size / P;
    RowMat patch_pos(G, C);
    if (gh == native && gw == native) {
        patch_pos = CMapMat(pos.data.data() + C, G, C);
    } else {
        Image grid_img(native, native, C);
        std::copy(pos.data.begin() + C, pos.data.end(), grid_img.pixels.begin());
        const Image resized = resize_bilinear(grid_img, gw, gh);
        patch_pos = CMapMat(resized.pixels.data(), G, C);
    }

    LayerFeatureMap result;
    for (int l : wanted) result[l] = FeatureStack{static_cast<int>(images.size()), gh, gw, C, {}};
    for (auto& [l, fs] : result) fs.data.resize(images.size() * static_cast<size_t>(G) * C);

    const auto& pw = param("patch_embed.weight");
    const auto& pb = param("patch_embed.bias");
    const CMapMat patch_w(pw.data.data(), C, 3 * P * P);
    const Eigen::Map<const Eigen::RowVectorXf> patch_b(pb.data.data(), C);

    RowMat pixels(G, 3 * P * P), x(M, C), h(M, C), qkv(M, 3 * C), attn_out(M, C), scores(M, M);
    for (size_t b = 0; b < images.size(); ++b) {
        const Image& img = images[b];
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px) {
                const int t = py * gw + px;
                int col = 0;
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < P; ++y)
                        for (int xx = 0; xx < P; ++xx)
                            pixels(t, col++) = (img.at(px * P + xx, py * P + y, c) - kMean[c]) / kStd[c];
            }
        x.row(0) = Eigen::Map<const Eigen::RowVectorXf>(param("cls_token").data.data(), C) +
                   Eigen::Map<const Eigen::RowVectorXf>(pos.data.data(), C);
        if (R > 0) x.middleRows(1, R) = CMapMat(param("register_tokens").data.data(), R, C);
        x.bottomRows(G) = (pixels * patch_w.transpose()).rowwise() + patch_b;
        x.bottomRows(G) += patch_pos;

        for (int i = 0; i <= last; ++i) {
            auto P_ = [&](const char* leaf) -> const std::vector<float>& { return param(block_key(i, leaf)).data; };
            h = x;
            layer_norm_rows(h, P_("norm1.weight"), P_("norm1.bias"));
            qkv.noalias() = h * CMapMat(P_("attn.qkv.weight").data(), 3 * C, C).transpose();
            qkv.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(P_("attn.qkv.bias").data(), 3 * C);
            const float sc = 1.0f / std::sqrt(static_cast<float>(hd));
            for (int hh = 0; hh < heads; ++hh) {
                auto q = qkv.middleCols(hh * hd, hd);
                auto k = qkv.middleCols(C + hh * hd, hd);
                auto v = qkv.middleCols(2 * C + hh * hd, hd);
                scores.noalias() = q * k.transpose() * sc;
                for (int r = 0; r < M; ++r) {
                    auto row = scores.row(r);
                    row.array() = (row.array() - row.maxCoeff()).exp();
                    row /= row.sum();
                }
                attn_out.middleCols(hh * hd, hd).noalias() = scores * v;
            }
            h.noalias() = attn_out * CMapMat(P_("attn.proj.weight").data(), C, C).transpose();
            h.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(P_("attn.proj.bias").data(), C);
            x += (h.array().rowwise() * Eigen::Map<const Eigen::ArrayXf>(P_("ls1.gamma").data(), C).transpose())
                     .matrix();

            h = x;
            layer_norm_rows(h, P_("norm2.weight"), P_("norm2.bias"));
            const auto& f1 = param(block_key(i, "mlp.fc1.weight"));
            const int hidden = f1.shape[0];
            RowMat mid = h * CMapMat(f1.data.data(), hidden, C).transpose();
            mid.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(P_("mlp.fc1.bias").data(), hidden);
            mid = mid.unaryExpr([](float v) { return gelu(v); });
            h.noalias() = mid * CMapMat(P_("mlp.fc2.weight").data(), C, hidden).transpose();
            h.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(P_("mlp.fc2.bias").data(), C);
            x += (h.array().rowwise() * Eigen::Map<const Eigen::ArrayXf>(P_("ls2.gamma").data(), C).transpose())
                     .matrix();

            if (wanted.count(i)) {
                auto& fs = result[i];
                Eigen::Map<RowMat>(fs.data.data() + b * static_cast<size_t>(G) * C, G, C) = x.bottomRows(G);
            }
        }
    }
    return result;
}

std::unique_ptr<BackbonePort> make_backbone(const BackboneSpec& spec) {
    if (spec.weights_path.empty()) return PatchTransformer::random(spec.tiny);
    return PatchTransformer::load(spec.weights_path);
}

}  // namespace ssf
