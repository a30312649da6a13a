#pragma once

// Minimal reverse-mode autodiff over row-major 2-D float tensors.
//
// Token sequences are stored as (batch * tokens) x channels matrices; ops that
// need the image structure (depthwise conv, attention) take it explicitly.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <vector>

namespace ssf::nn {

/// 64-byte aligned storage so vectorized reductions do not depend on where a buffer lands.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<float, AlignedAllocator<float>>;

struct Node {
    Buffer value;
    Buffer grad;  // allocated lazily by backward()
    int rows = 0;
    int cols = 0;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    size_t size() const noexcept { return value.size(); }
    Buffer& ensure_grad();
};

/// Shared handle to a graph node. Copies alias the same storage.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Buffer data, int rows, int cols);
    static Var constant(std::span<const float> data, int rows, int cols);
    static Var zeros(int rows, int cols);
    /// Leaf that accumulates gradients.
    static Var parameter(Buffer data, int rows, int cols);
    static Var parameter(std::span<const float> data, int rows, int cols);

    bool defined() const noexcept { return node_ != nullptr; }
    int rows() const noexcept { return node_->rows; }
    int cols() const noexcept { return node_->cols; }
    size_t size() const noexcept { return node_->value.size(); }
    bool requires_grad() const noexcept { return node_->requires_grad; }

    const Buffer& value() const noexcept { return node_->value; }
    Buffer& mutable_value() noexcept { return node_->value; }
    const Buffer& grad() const noexcept { return node_->grad; }
    Buffer& mutable_grad() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.assign(node_->value.size(), 0.0f); }
    float item() const { return node_->value.at(0); }

    Node* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node>& shared() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph recording for its lifetime (inference, MC passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Creates an op node. `backward` is only attached when recording and some input needs grad.
Var make_op(Buffer value, int rows, int cols, std::vector<Var> inputs,
            std::function<void(Node&)> backward);

/// Runs backpropagation from a scalar (1x1) output.
void backward(const Var& loss);

// Dense ops ------------------------------------------------------------------

/// y = x W^T + b, with W stored out x in and b 1 x out (b may be undefined).
Var linear(const Var& x, const Var& weight, const Var& bias);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var gelu(const Var& x);
Var silu(const Var& x);
Var elu_plus_one(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps = 1e-6f);
/// Elementwise mean of equally shaped tensors.
Var mean_of(std::span<const Var> xs);
/// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, float p, std::mt19937_64& rng);
/// Sum of all entries as a 1x1 tensor.
Var sum(const Var& x);

// Structured ops --------------------------------------------------------------

struct TokenGrid {
    int batch = 0;
    int height = 0;
    int width = 0;
    int tokens() const noexcept { return height * width; }
};

/// Depthwise 3x3 convolution over the token grid with zero padding.
/// weight: channels x 9 (row-major kernel taps), bias: 1 x channels.
Var depthwise_conv3x3(const Var& x, const Var& weight, const Var& bias, TokenGrid grid);

/// Kernelised linear attention per image and head:
/// out_t = (q_t . (K^T V / T)) / (q_t . mean(K) + eps). Inputs must be non-negative feature maps.
Var linear_attention(const Var& q, const Var& k, const Var& v, TokenGrid grid, int heads,
                     float eps = 1e-6f);

}  // namespace ssf::nn
