#include "ssfilter/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ssfilter/errors.hpp"

namespace ssf {

void Optimizer::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

namespace {

std::vector<std::vector<float>> zeros_like(const std::vector<NamedParam>& params) {
    std::vector<std::vector<float>> out;
    for (const auto& p : params) out.emplace_back(p.var.size(), 0.0f);
    return out;
}

void check_state_shape(const std::vector<std::vector<float>>& state, const std::vector<NamedParam>& params) {
    if (state.size() != params.size()) throw InputError("optimizer state has wrong parameter count");
    for (size_t i = 0; i < params.size(); ++i)
        if (state[i].size() != params[i].var.size()) throw InputError("optimizer state shape mismatch");
}

}  // namespace

StableAdamW::StableAdamW(std::vector<NamedParam> params, AdamOptions opts)
    : Optimizer(std::move(params)), opts_(opts), m_(zeros_like(params_)), v_(m_), vmax_(m_) {}

void StableAdamW::step(float lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const double eps2 = static_cast<double>(opts_.eps) * opts_.eps;
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& var = params_[i].var;
        if (var.grad().size() != var.size()) continue;
        const auto& g = var.grad();
        auto& w = var.mutable_value();
        auto &m = m_[i], &v = v_[i], &vmax = vmax_[i];
        double rms_acc = 0.0;
        for (size_t j = 0; j < w.size(); ++j) {
            m[j] = opts_.beta1 * m[j] + (1 - opts_.beta1) * g[j];
            v[j] = opts_.beta2 * v[j] + (1 - opts_.beta2) * g[j] * g[j];
            vmax[j] = std::max(vmax[j], v[j]);
            rms_acc += static_cast<double>(g[j]) * g[j] / std::max(vmax[j] / bc2, eps2);
        }
        const double rms = std::sqrt(rms_acc / std::max<size_t>(1, w.size()));
        const double step_lr = lr / std::max(1.0, rms);
        for (size_t j = 0; j < w.size(); ++j) {
            const double m_hat = m[j] / bc1;
            const double v_hat = vmax[j] / bc2;
            w[j] = static_cast<float>(w[j] - step_lr * opts_.weight_decay * w[j] -
                                      step_lr * m_hat / (std::sqrt(v_hat) + opts_.eps));
        }
    }
}

OptimizerState StableAdamW::state() const { return {"stable_adamw", t_, m_, v_, vmax_}; }

void StableAdamW::load_state(const OptimizerState& s) {
    if (s.kind != "stable_adamw") throw InputError("optimizer state kind mismatch: " + s.kind);
    check_state_shape(s.first_moment, params_);
    check_state_shape(s.second_moment, params_);
    check_state_shape(s.max_second_moment, params_);
    t_ = s.step;
    m_ = s.first_moment;
    v_ = s.second_moment;
    vmax_ = s.max_second_moment;
}

AdamW::AdamW(std::vector<NamedParam> params, AdamOptions opts)
    : Optimizer(std::move(params)), opts_(opts), m_(zeros_like(params_)), v_(m_) {}

void AdamW::step(float lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& var = params_[i].var;
        if (var.grad().size() != var.size()) continue;
        const auto& g = var.grad();
        auto& w = var.mutable_value();
        for (size_t j = 0; j < w.size(); ++j) {
            m_[i][j] = opts_.beta1 * m_[i][j] + (1 - opts_.beta1) * g[j];
            v_[i][j] = opts_.beta2 * v_[i][j] + (1 - opts_.beta2) * g[j] * g[j];
            w[j] = static_cast<float>(w[j] - lr * opts_.weight_decay * w[j] -
                                      lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + opts_.eps));
        }
    }
}

OptimizerState AdamW::state() const { return {"adamw", t_, m_, v_, {}}; }

void AdamW::load_state(const OptimizerState& s) {
    if (s.kind != "adamw") throw InputError("optimizer state kind mismatch: " + s.kind);
    check_state_shape(s.first_moment, params_);
    check_state_shape(s.second_moment, params_);
    t_ = s.step;
    m_ = s.first_moment;
    v_ = s.second_moment;
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, std::vector<NamedParam> params, AdamOptions opts) {
    if (kind == "stable_adamw") return std::make_unique<StableAdamW>(std::move(params), opts);
    if (kind == "adamw") return std::make_unique<AdamW>(std::move(params), opts);
    throw ConfigError("unknown optimizer '" + kind + "' (expected stable_adamw|adamw)");
}

float warm_cosine_lr(int64_t iteration, int64_t total, int64_t warmup, float base_lr, float final_lr) {
    if (warmup > 0 && iteration < warmup)
        return base_lr * static_cast<float>(iteration + 1) / static_cast<float>(warmup);
    const double span = std::max<int64_t>(1, total - warmup);
    const double progress = std::clamp(static_cast<double>(iteration - warmup) / span, 0.0, 1.0);
    return static_cast<float>(final_lr + 0.5 * (base_lr - final_lr) * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace ssf
