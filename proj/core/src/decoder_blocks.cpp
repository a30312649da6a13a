#include "ssfilter/decoder_blocks.hpp"

#include <cmath>

#include "ssfilter/errors.hpp"

namespace ssf {

nn::Var ParamStore::add(const std::string& name, std::vector<float> data, int rows, int cols) {
    auto v = nn::Var::parameter(std::move(data), rows, cols);
    params_.push_back({name, v});
    return v;
}

nn::Var ParamStore::truncated_normal(const std::string& name, int rows, int cols, float std) {
    std::normal_distribution<float> dist(0.0f, std);
    std::vector<float> data(static_cast<size_t>(rows) * cols);
    for (auto& v : data) {
        do {
            v = dist(rng_);
        } while (std::abs(v) > 2.0f * std);
    }
    return add(name, std::move(data), rows, cols);
}

nn::Var ParamStore::uniform(const std::string& name, int rows, int cols, float bound) {
    std::uniform_real_distribution<float> dist(-bound, bound);
    std::vector<float> data(static_cast<size_t>(rows) * cols);
    for (auto& v : data) v = dist(rng_);
    return add(name, std::move(data), rows, cols);
}

nn::Var ParamStore::constant(const std::string& name, int rows, int cols, float value) {
    return add(name, std::vector<float>(static_cast<size_t>(rows) * cols, value), rows, cols);
}

LinearLayer LinearLayer::create(ParamStore& store, const std::string& name, int in, int out) {
    return {store.truncated_normal(name + ".weight", out, in, 0.02f), store.constant(name + ".bias", 1, out, 0.0f)};
}

NormLayer NormLayer::create(ParamStore& store, const std::string& name, int dim) {
    return {store.constant(name + ".weight", 1, dim, 1.0f), store.constant(name + ".bias", 1, dim, 0.0f)};
}

DepthwiseConv DepthwiseConv::create(ParamStore& store, const std::string& name, int dim) {
    // fan_in of a depthwise 3x3 kernel is 9
    return {store.uniform(name + ".weight", dim, 9, 1.0f / 3.0f), store.constant(name + ".bias", 1, dim, 0.0f)};
}

DecoderKind parse_decoder_kind(const std::string& text) {
    if (text == "mlla") return DecoderKind::mlla;
    if (text == "linear") return DecoderKind::linear_attention;
    throw ConfigError("unknown decoder block kind '" + text + "' (expected mlla|linear)");
}

std::string to_string(DecoderKind kind) { return kind == DecoderKind::mlla ? "mlla" : "linear"; }

namespace {
int hidden_dim(int dim, float ratio) { return std::max(1, static_cast<int>(std::lround(dim * ratio))); }
}  // namespace

MllaBlock::MllaBlock(ParamStore& s, const std::string& p, int dim, int heads, float mlp_ratio)
    : heads_(heads),
      cpe1_(DepthwiseConv::create(s, p + ".cpe1", dim)),
      dwc_(DepthwiseConv::create(s, p + ".dwc", dim)),
      lepe_(DepthwiseConv::create(s, p + ".lepe", dim)),
      cpe2_(DepthwiseConv::create(s, p + ".cpe2", dim)),
      norm1_(NormLayer::create(s, p + ".norm1", dim)),
      norm2_(NormLayer::create(s, p + ".norm2", dim)),
      act_proj_(LinearLayer::create(s, p + ".act_proj", dim, dim)),
      in_proj_(LinearLayer::create(s, p + ".in_proj", dim, dim)),
      q_(LinearLayer::create(s, p + ".attn.q", dim, dim)),
      k_(LinearLayer::create(s, p + ".attn.k", dim, dim)),
      out_proj_(LinearLayer::create(s, p + ".out_proj", dim, dim)),
      fc1_(LinearLayer::create(s, p + ".mlp.fc1", dim, hidden_dim(dim, mlp_ratio))),
      fc2_(LinearLayer::create(s, p + ".mlp.fc2", hidden_dim(dim, mlp_ratio), dim)) {
    if (dim % heads != 0) throw ConfigError("decoder dim must be divisible by heads");
}

nn::Var MllaBlock::forward(const nn::Var& input, nn::TokenGrid grid) const {
    nn::Var x = nn::add(input, cpe1_(input, grid));
    const nn::Var shortcut = x;
    const nn::Var h = norm1_(x);
    const nn::Var gate = nn::silu(act_proj_(h));
    const nn::Var t = nn::silu(dwc_(in_proj_(h), grid));
    const nn::Var q = nn::elu_plus_one(q_(t));
    const nn::Var k = nn::elu_plus_one(k_(t));
    nn::Var a = nn::add(nn::linear_attention(q, k, t, grid, heads_), lepe_(t, grid));
    a = out_proj_(nn::mul(a, gate));
    x = nn::add(shortcut, a);
    x = nn::add(x, cpe2_(x, grid));
    return nn::add(x, fc2_(nn::gelu(fc1_(norm2_(x)))));
}

LinearAttentionBlock::LinearAttentionBlock(ParamStore& s, const std::string& p, int dim, int heads, float mlp_ratio)
    : heads_(heads),
      norm1_(NormLayer::create(s, p + ".norm1", dim)),
      norm2_(NormLayer::create(s, p + ".norm2", dim)),
      q_(LinearLayer::create(s, p + ".attn.q", dim, dim)),
      k_(LinearLayer::create(s, p + ".attn.k", dim, dim)),
      v_(LinearLayer::create(s, p + ".attn.v", dim, dim)),
      proj_(LinearLayer::create(s, p + ".attn.proj", dim, dim)),
      fc1_(LinearLayer::create(s, p + ".mlp.fc1", dim, hidden_dim(dim, mlp_ratio))),
      fc2_(LinearLayer::create(s, p + ".mlp.fc2", hidden_dim(dim, mlp_ratio), dim)) {
    if (dim % heads != 0) throw ConfigError("decoder dim must be divisible by heads");
}

nn::Var LinearAttentionBlock::forward(const nn::Var& x, nn::TokenGrid grid) const {
    const nn::Var h = norm1_(x);
    const nn::Var a = nn::linear_attention(nn::elu_plus_one(q_(h)), nn::elu_plus_one(k_(h)), v_(h), grid, heads_);
    const nn::Var y = nn::add(x, proj_(a));
    return nn::add(y, fc2_(nn::gelu(fc1_(norm2_(y)))));
}

std::unique_ptr<DecoderBlock> make_decoder_block(DecoderKind kind, ParamStore& store, const std::string& prefix,
                                                 int dim, int heads, float mlp_ratio) {
    if (kind == DecoderKind::mlla) return std::make_unique<MllaBlock>(store, prefix, dim, heads, mlp_ratio);
    return std::make_unique<LinearAttentionBlock>(store, prefix, dim, heads, mlp_ratio);
}

}  // namespace ssf
