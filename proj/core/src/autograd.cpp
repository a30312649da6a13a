#include "ssfilter/autograd.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "ssfilter/errors.hpp"

namespace ssf::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;

CMapMat view(const Var& v) { return CMapMat(v.value().data(), v.rows(), v.cols()); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw InputError(std::string(op) + ": shape mismatch");
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
    Buffer out(x.size());
    const auto& xv = x.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    auto xn = x.shared();
    return make_op(std::move(out), x.rows(), x.cols(), {x}, [xn, deriv](Node& self) {
        if (!xn->requires_grad) return;
        auto& gx = xn->ensure_grad();
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * deriv(xn->value[i]);
    });
}

}  // namespace

Buffer& Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    return grad;
}

Var Var::constant(Buffer data, int rows, int cols) {
    if (data.size() != static_cast<size_t>(rows) * cols) throw InputError("constant: size mismatch");
    auto n = std::make_shared<Node>();
    n->value = std::move(data);
    n->rows = rows;
    n->cols = cols;
    return Var(std::move(n));
}

Var Var::constant(std::span<const float> data, int rows, int cols) {
    return constant(Buffer(data.begin(), data.end()), rows, cols);
}

Var Var::parameter(std::span<const float> data, int rows, int cols) {
    return parameter(Buffer(data.begin(), data.end()), rows, cols);
}

Var Var::zeros(int rows, int cols) {
    return constant(Buffer(static_cast<size_t>(rows) * cols, 0.0f), rows, cols);
}

Var Var::parameter(Buffer data, int rows, int cols) {
    Var v = constant(std::move(data), rows, cols);
    v.node()->requires_grad = true;
    return v;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Buffer value, int rows, int cols, std::vector<Var> inputs,
            std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->rows = rows;
    n->cols = cols;
    if (g_grad_enabled) {
        bool any = false;
        for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
        if (any) {
            n->requires_grad = true;
            for (auto& in : inputs)
                if (in.defined()) n->inputs.push_back(in.shared());
            n->backward = std::move(backward_fn);
        }
    }
    return Var(std::move(n));
}

void backward(const Var& loss) {
    if (loss.size() != 1) throw InputError("backward: loss must be a scalar");
    if (!loss.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward) {
            n->ensure_grad();
            n->backward(*n);
        }
    }
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    if (x.cols() != weight.cols()) throw InputError("linear: input width mismatch");
    const int rows = x.rows();
    const int out_dim = weight.rows();
    Buffer out(static_cast<size_t>(rows) * out_dim);
    MapMat y(out.data(), rows, out_dim);
    y.noalias() = view(x) * view(weight).transpose();
    if (bias.defined()) y.rowwise() += view(bias).row(0);

    auto xn = x.shared(), wn = weight.shared();
    auto bn = bias.defined() ? bias.shared() : nullptr;
    return make_op(std::move(out), rows, out_dim, {x, weight, bias}, [xn, wn, bn](Node& self) {
        CMapMat dy(self.grad.data(), self.rows, self.cols);
        if (xn->requires_grad) {
            MapMat dx(xn->ensure_grad().data(), xn->rows, xn->cols);
            dx.noalias() += dy * CMapMat(wn->value.data(), wn->rows, wn->cols);
        }
        if (wn->requires_grad) {
            MapMat dw(wn->ensure_grad().data(), wn->rows, wn->cols);
            dw.noalias() += dy.transpose() * CMapMat(xn->value.data(), xn->rows, xn->cols);
        }
        if (bn && bn->requires_grad) {
            MapMat db(bn->ensure_grad().data(), 1, bn->cols);
            db += dy.colwise().sum();
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Buffer out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    auto an = a.shared(), bn = b.shared();
    return make_op(std::move(out), a.rows(), a.cols(), {a, b}, [an, bn](Node& self) {
        for (auto* n : {an.get(), bn.get()}) {
            if (!n->requires_grad) continue;
            auto& g = n->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Buffer out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto an = a.shared(), bn = b.shared();
    return make_op(std::move(out), a.rows(), a.cols(), {a, b}, [an, bn](Node& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
        }
    });
}

Var scale(const Var& a, float s) {
    return unary(a, [s](float v) { return v * s; }, [s](float) { return s; });
}

Var gelu(const Var& x) {
    constexpr float inv_sqrt2 = 0.70710678118654752f;
    const float inv_sqrt_2pi = 1.0f / std::sqrt(2.0f * std::numbers::pi_v<float>);
    return unary(
        x, [](float v) { return 0.5f * v * (1.0f + std::erf(v * inv_sqrt2)); },
        [inv_sqrt_2pi](float v) {
            return 0.5f * (1.0f + std::erf(v * inv_sqrt2)) + v * std::exp(-0.5f * v * v) * inv_sqrt_2pi;
        });
}

Var silu(const Var& x) {
    return unary(
        x, [](float v) { return v / (1.0f + std::exp(-v)); },
        [](float v) {
            const float s = 1.0f / (1.0f + std::exp(-v));
            return s * (1.0f + v * (1.0f - s));
        });
}

Var elu_plus_one(const Var& x) {
    return unary(
        x, [](float v) { return v > 0.0f ? v + 1.0f : std::exp(v); },
        [](float v) { return v > 0.0f ? 1.0f : std::exp(v); });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps) {
    const int rows = x.rows(), cols = x.cols();
    if (gamma.size() != static_cast<size_t>(cols) || beta.size() != static_cast<size_t>(cols))
        throw InputError("layer_norm: affine size mismatch");
    Buffer out(x.size()), xhat(x.size()), inv_std(rows);
    const auto& xv = x.value();
    for (int r = 0; r < rows; ++r) {
        const float* row = xv.data() + static_cast<size_t>(r) * cols;
        double mean = 0;
        for (int c = 0; c < cols; ++c) mean += row[c];
        mean /= cols;
        double var = 0;
        for (int c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= cols;
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        inv_std[r] = is;
        for (int c = 0; c < cols; ++c) {
            const size_t i = static_cast<size_t>(r) * cols + c;
            xhat[i] = static_cast<float>(row[c] - mean) * is;
            out[i] = xhat[i] * gamma.value()[c] + beta.value()[c];
        }
    }
    auto xn = x.shared(), gn = gamma.shared(), bn = beta.shared();
    return make_op(std::move(out), rows, cols, {x, gamma, beta},
                   [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const int rows = self.rows, cols = self.cols;
                       Buffer dxhat(cols);
                       for (int r = 0; r < rows; ++r) {
                           const size_t base = static_cast<size_t>(r) * cols;
                           double m1 = 0, m2 = 0;
                           for (int c = 0; c < cols; ++c) {
                               dxhat[c] = self.grad[base + c] * gn->value[c];
                               m1 += dxhat[c];
                               m2 += dxhat[c] * xhat[base + c];
                           }
                           m1 /= cols;
                           m2 /= cols;
                           if (xn->requires_grad) {
                               auto& gx = xn->ensure_grad();
                               for (int c = 0; c < cols; ++c)
                                   gx[base + c] += inv_std[r] * static_cast<float>(
                                                                    dxhat[c] - m1 - xhat[base + c] * m2);
                           }
                           if (gn->requires_grad) {
                               auto& gg = gn->ensure_grad();
                               for (int c = 0; c < cols; ++c) gg[c] += self.grad[base + c] * xhat[base + c];
                           }
                           if (bn->requires_grad) {
                               auto& gb = bn->ensure_grad();
                               for (int c = 0; c < cols; ++c) gb[c] += self.grad[base + c];
                           }
                       }
                   });
}

Var mean_of(std::span<const Var> xs) {
    if (xs.empty()) throw InputError("mean_of: empty input");
    for (const auto& x : xs) require_same_shape(xs[0], x, "mean_of");
    const float w = 1.0f / static_cast<float>(xs.size());
    Buffer out(xs[0].size(), 0.0f);
    for (const auto& x : xs)
        for (size_t i = 0; i < out.size(); ++i) out[i] += x.value()[i];
    for (auto& v : out) v *= w;
    std::vector<Var> inputs(xs.begin(), xs.end());
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& x : xs) nodes.push_back(x.shared());
    return make_op(std::move(out), xs[0].rows(), xs[0].cols(), inputs, [nodes, w](Node& self) {
        for (const auto& n : nodes) {
            if (!n->requires_grad) continue;
            auto& g = n->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) g[i] += w * self.grad[i];
        }
    });
}

Var dropout(const Var& x, float p, std::mt19937_64& rng) {
    if (p < 0.0f || p >= 1.0f) throw ConfigError("dropout rate must lie in [0, 1)");
    if (p == 0.0f) return x;
    const float keep_scale = 1.0f / (1.0f - p);
    std::bernoulli_distribution drop(p);
    Buffer mask(x.size());
    for (auto& m : mask) m = drop(rng) ? 0.0f : keep_scale;
    Buffer out(x.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
    auto xn = x.shared();
    return make_op(std::move(out), x.rows(), x.cols(), {x}, [xn, mask = std::move(mask)](Node& self) {
        auto& g = xn->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

Var sum(const Var& x) {
    double total = 0;
    for (float v : x.value()) total += v;
    auto xn = x.shared();
    return make_op({static_cast<float>(total)}, 1, 1, {x}, [xn](Node& self) {
        auto& g = xn->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Var depthwise_conv3x3(const Var& x, const Var& weight, const Var& bias, TokenGrid grid) {
    const int C = x.cols();
    const int T = grid.tokens();
    if (x.rows() != grid.batch * T) throw InputError("depthwise_conv3x3: token grid mismatch");
    if (weight.rows() != C || weight.cols() != 9 || bias.size() != static_cast<size_t>(C))
        throw InputError("depthwise_conv3x3: weight shape mismatch");

    const auto& xv = x.value();
    const auto& wv = weight.value();
    Buffer out(x.size());
    for (int b = 0; b < grid.batch; ++b)
        for (int i = 0; i < grid.height; ++i)
            for (int j = 0; j < grid.width; ++j) {
                float* o = out.data() + (static_cast<size_t>(b) * T + i * grid.width + j) * C;
                for (int c = 0; c < C; ++c) o[c] = bias.value()[c];
                for (int di = -1; di <= 1; ++di) {
                    const int ii = i + di;
                    if (ii < 0 || ii >= grid.height) continue;
                    for (int dj = -1; dj <= 1; ++dj) {
                        const int jj = j + dj;
                        if (jj < 0 || jj >= grid.width) continue;
                        const int tap = (di + 1) * 3 + (dj + 1);
                        const float* in = xv.data() + (static_cast<size_t>(b) * T + ii * grid.width + jj) * C;
                        for (int c = 0; c < C; ++c) o[c] += wv[c * 9 + tap] * in[c];
                    }
                }
            }

    auto xn = x.shared(), wn = weight.shared(), bn = bias.shared();
    return make_op(std::move(out), x.rows(), C, {x, weight, bias}, [xn, wn, bn, grid, C, T](Node& self) {
        Buffer* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
        Buffer* gw = wn->requires_grad ? &wn->ensure_grad() : nullptr;
        Buffer* gb = bn->requires_grad ? &bn->ensure_grad() : nullptr;
        for (int b = 0; b < grid.batch; ++b)
            for (int i = 0; i < grid.height; ++i)
                for (int j = 0; j < grid.width; ++j) {
                    const float* go = self.grad.data() + (static_cast<size_t>(b) * T + i * grid.width + j) * C;
                    if (gb)
                        for (int c = 0; c < C; ++c) (*gb)[c] += go[c];
                    for (int di = -1; di <= 1; ++di) {
                        const int ii = i + di;
                        if (ii < 0 || ii >= grid.height) continue;
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int jj = j + dj;
                            if (jj < 0 || jj >= grid.width) continue;
                            const int tap = (di + 1) * 3 + (dj + 1);
                            const size_t in_off = (static_cast<size_t>(b) * T + ii * grid.width + jj) * C;
                            for (int c = 0; c < C; ++c) {
                                if (gx) (*gx)[in_off + c] += wn->value[c * 9 + tap] * go[c];
                                if (gw) (*gw)[c * 9 + tap] += xn->value[in_off + c] * go[c];
                            }
                        }
                    }
                }
    });
}

Var linear_attention(const Var& q, const Var& k, const Var& v, TokenGrid grid, int heads, float eps) {
    require_same_shape(q, k, "linear_attention");
    require_same_shape(q, v, "linear_attention");
    const int C = q.cols();
    const int T = grid.tokens();
    if (q.rows() != grid.batch * T) throw InputError("linear_attention: token grid mismatch");
    if (heads <= 0 || C % heads != 0) throw ConfigError("linear_attention: channels not divisible by heads");
    const int d = C / heads;
    const float inv_t = 1.0f / static_cast<float>(T);

    Buffer out(q.size());
    // per (batch, head): S (d x d), kmean (d), denominators (T)
    const size_t groups = static_cast<size_t>(grid.batch) * heads;
    Buffer s_store(groups * d * d), km_store(groups * d), den_store(groups * T);

    auto block = [&](const Buffer& buf, int b, int h) {
        return CStridedMap(buf.data() + static_cast<size_t>(b) * T * C + h * d, T, d, Eigen::OuterStride<>(C));
    };
    for (int b = 0; b < grid.batch; ++b)
        for (int h = 0; h < heads; ++h) {
            const size_t g = static_cast<size_t>(b) * heads + h;
            auto Q = block(q.value(), b, h);
            auto K = block(k.value(), b, h);
            auto V = block(v.value(), b, h);
            MapMat S(s_store.data() + g * d * d, d, d);
            S.noalias() = K.transpose() * V * inv_t;
            Eigen::Map<Eigen::RowVectorXf> km(km_store.data() + g * d, d);
            km = K.colwise().mean();
            Eigen::Map<Eigen::VectorXf> den(den_store.data() + g * T, T);
            den = (Q * km.transpose()).array() + eps;
            StridedMap O(out.data() + static_cast<size_t>(b) * T * C + h * d, T, d, Eigen::OuterStride<>(C));
            O.noalias() = Q * S;
            O.array().colwise() /= den.array();
        }

    auto qn = q.shared(), kn = k.shared(), vn = v.shared();
    return make_op(
        std::move(out), q.rows(), C, {q, k, v},
        [qn, kn, vn, grid, heads, d, T, C, inv_t, s_store = std::move(s_store), km_store = std::move(km_store),
         den_store = std::move(den_store)](Node& self) {
            auto& gq = qn->ensure_grad();
            auto& gk = kn->ensure_grad();
            auto& gv = vn->ensure_grad();
            auto cblock = [&](const Buffer& buf, int b, int h) {
                return CStridedMap(buf.data() + static_cast<size_t>(b) * T * C + h * d, T, d,
                                   Eigen::OuterStride<>(C));
            };
            auto mblock = [&](Buffer& buf, int b, int h) {
                return StridedMap(buf.data() + static_cast<size_t>(b) * T * C + h * d, T, d,
                                  Eigen::OuterStride<>(C));
            };
            RowMat dY(T, d), Y(T, d), dS(d, d);
            Eigen::VectorXf dden(T);
            for (int b = 0; b < grid.batch; ++b)
                for (int h = 0; h < heads; ++h) {
                    const size_t g = static_cast<size_t>(b) * heads + h;
                    auto Q = cblock(qn->value, b, h);
                    auto K = cblock(kn->value, b, h);
                    auto V = cblock(vn->value, b, h);
                    auto dO = cblock(self.grad, b, h);
                    CMapMat S(s_store.data() + g * d * d, d, d);
                    Eigen::Map<const Eigen::RowVectorXf> km(km_store.data() + g * d, d);
                    Eigen::Map<const Eigen::VectorXf> den(den_store.data() + g * T, T);

                    Y.noalias() = Q * S;
                    const Eigen::ArrayXf z = den.array().inverse();
                    dY = dO.array().colwise() * z;
                    dden = -(z * z) * (dO.array() * Y.array()).rowwise().sum();

                    auto dQ = mblock(gq, b, h);
                    dQ.noalias() += dY * S.transpose();
                    dQ.noalias() += dden * km;

                    dS.noalias() = Q.transpose() * dY;
                    const Eigen::RowVectorXf dkm = dden.transpose() * Q;

                    auto dK = mblock(gk, b, h);
                    dK.noalias() += V * dS.transpose() * inv_t;
                    dK.rowwise() += dkm * inv_t;

                    auto dV = mblock(gv, b, h);
                    dV.noalias() += K * dS * inv_t;
                }
        });
}

}  // namespace ssf::nn
