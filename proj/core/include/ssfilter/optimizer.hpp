#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ssfilter/decoder_blocks.hpp"

namespace ssf {

struct OptimizerState {
    std::string kind;
    int64_t step = 0;
    std::vector<std::vector<float>> first_moment;
    std::vector<std::vector<float>> second_moment;
    std::vector<std::vector<float>> max_second_moment;  // empty unless AMSGrad
};

struct AdamOptions {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-4f;
};

/// Updates a fixed parameter list in place from accumulated gradients.
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(float lr) = 0;
    virtual OptimizerState state() const = 0;
    virtual void load_state(const OptimizerState& state) = 0;
    void zero_grad();

protected:
    explicit Optimizer(std::vector<NamedParam> params) : params_(std::move(params)) {}
    std::vector<NamedParam> params_;
};

/// Decoupled weight decay with the max-of-second-moment correction and per-tensor update
/// clipping (the learning rate is divided by max(1, RMS(g^2 / v_hat))).
class StableAdamW final : public Optimizer {
public:
    StableAdamW(std::vector<NamedParam> params, AdamOptions opts);
    void step(float lr) override;
    OptimizerState state() const override;
    void load_state(const OptimizerState& state) override;

private:
    AdamOptions opts_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_, vmax_;
};

/// Plain decoupled-weight-decay Adam.
class AdamW final : public Optimizer {
public:
    AdamW(std::vector<NamedParam> params, AdamOptions opts);
    void step(float lr) override;
    OptimizerState state() const override;
    void load_state(const OptimizerState& state) override;

private:
    AdamOptions opts_;
    int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, std::vector<NamedParam> params, AdamOptions opts);

/// Linear warm-up to `base_lr`, then cosine decay to `final_lr` at `total` iterations.
float warm_cosine_lr(int64_t iteration, int64_t total, int64_t warmup, float base_lr, float final_lr);

}  // namespace ssf
