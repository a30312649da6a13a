#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ssfilter/autograd.hpp"

namespace ssf {

struct NamedParam {
    std::string name;
    nn::Var var;
};

/// Creates named, initialised parameters and remembers them for optimisers and checkpoints.
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : rng_(seed) {}

    nn::Var truncated_normal(const std::string& name, int rows, int cols, float std);
    nn::Var uniform(const std::string& name, int rows, int cols, float bound);
    nn::Var constant(const std::string& name, int rows, int cols, float value);

    const std::vector<NamedParam>& params() const noexcept { return params_; }

private:
    nn::Var add(const std::string& name, std::vector<float> data, int rows, int cols);
    std::mt19937_64 rng_;
    std::vector<NamedParam> params_;
};

struct LinearLayer {
    nn::Var weight;  // out x in
    nn::Var bias;    // 1 x out
    static LinearLayer create(ParamStore& store, const std::string& name, int in, int out);
    nn::Var operator()(const nn::Var& x) const { return nn::linear(x, weight, bias); }
};

struct NormLayer {
    nn::Var gamma;
    nn::Var beta;
    static NormLayer create(ParamStore& store, const std::string& name, int dim);
    nn::Var operator()(const nn::Var& x) const { return nn::layer_norm(x, gamma, beta); }
};

struct DepthwiseConv {
    nn::Var weight;  // channels x 9
    nn::Var bias;
    static DepthwiseConv create(ParamStore& store, const std::string& name, int dim);
    nn::Var operator()(const nn::Var& x, nn::TokenGrid grid) const {
        return nn::depthwise_conv3x3(x, weight, bias, grid);
    }
};

/// One decoder stage operating on (batch * tokens) x channels sequences.
class DecoderBlock {
public:
    virtual ~DecoderBlock() = default;
    virtual nn::Var forward(const nn::Var& x, nn::TokenGrid grid) const = 0;
};

enum class DecoderKind { mlla, linear_attention };

DecoderKind parse_decoder_kind(const std::string& text);
std::string to_string(DecoderKind kind);

/// Mamba-like linear attention block: conv positional encoding, SiLU-gated linear attention
/// with elu+1 kernels and a depthwise-conv value shortcut, then an MLP.
class MllaBlock final : public DecoderBlock {
public:
    MllaBlock(ParamStore& store, const std::string& prefix, int dim, int heads, float mlp_ratio);
    nn::Var forward(const nn::Var& x, nn::TokenGrid grid) const override;

private:
    int heads_;
    DepthwiseConv cpe1_, dwc_, lepe_, cpe2_;
    NormLayer norm1_, norm2_;
    LinearLayer act_proj_, in_proj_, q_, k_, out_proj_, fc1_, fc2_;
};

/// Plain linear-attention transformer block (elu+1 kernels, no gating or conv).
class LinearAttentionBlock final : public DecoderBlock {
public:
    LinearAttentionBlock(ParamStore& store, const std::string& prefix, int dim, int heads, float mlp_ratio);
    nn::Var forward(const nn::Var& x, nn::TokenGrid grid) const override;

private:
    int heads_;
    NormLayer norm1_, norm2_;
    LinearLayer q_, k_, v_, proj_, fc1_, fc2_;
};

std::unique_ptr<DecoderBlock> make_decoder_block(DecoderKind kind, ParamStore& store, const std::string& prefix,
                                                 int dim, int heads, float mlp_ratio);

}  // namespace ssf
