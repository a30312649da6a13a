#include "ssfilter/losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "ssfilter/errors.hpp"

namespace ssf {

nn::Var hard_mined_cosine_distances(const AlignedFeatures& targets, std::span<const nn::Var> preds,
                                    double mine_fraction) {
    const int B = targets.batch, T = targets.tokens(), C = targets.channels;
    const size_t G = targets.groups.size();
    if (preds.size() != G || G == 0) throw InputError("hard-mined loss: group count mismatch");
    for (const auto& p : preds)
        if (p.rows() != B * T || p.cols() != C) throw InputError("hard-mined loss: prediction shape mismatch");
    if (mine_fraction < 0.0 || mine_fraction > 1.0) throw ConfigError("mine_fraction must lie in [0, 1]");

    const size_t positions = static_cast<size_t>(B) * T;
    nn::Buffer dist(B, 0.0f);
    std::vector<double> cos_sample(G * B), na(G * B), nb(G * B);
    std::vector<std::vector<uint8_t>> keep_grad(G, std::vector<uint8_t>(positions, 1));

    for (size_t g = 0; g < G; ++g) {
        const auto& a = targets.groups[g];
        const auto& b = preds[g].value();
        std::vector<double> point(positions);
        for (size_t p = 0; p < positions; ++p) {
            double dot = 0, aa = 0, bb = 0;
            for (int c = 0; c < C; ++c) {
                const double x = a[p * C + c], y = b[p * C + c];
                dot += x * y, aa += x * x, bb += y * y;
            }
            point[p] = 1.0 - dot / std::max(std::sqrt(aa) * std::sqrt(bb), 1e-8);
        }
        const size_t k = static_cast<size_t>(static_cast<double>(positions) * (1.0 - mine_fraction));
        if (k == 0) {
            std::fill(keep_grad[g].begin(), keep_grad[g].end(), uint8_t{0});
        } else {
            std::vector<double> sorted = point;
            std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(), std::greater<>());
            const double thresh = sorted[k - 1];
            for (size_t p = 0; p < positions; ++p) keep_grad[g][p] = point[p] < thresh ? 0 : 1;
        }
        for (int i = 0; i < B; ++i) {
            double dot = 0, aa = 0, bb = 0;
            const size_t off = static_cast<size_t>(i) * T * C;
            for (size_t j = 0; j < static_cast<size_t>(T) * C; ++j) {
                const double x = a[off + j], y = b[off + j];
                dot += x * y, aa += x * x, bb += y * y;
            }
            na[g * B + i] = std::max(std::sqrt(aa), 1e-8);
            nb[g * B + i] = std::max(std::sqrt(bb), 1e-8);
            cos_sample[g * B + i] = dot / (na[g * B + i] * nb[g * B + i]);
            dist[i] += static_cast<float>((1.0 - cos_sample[g * B + i]) / G);
        }
    }

    std::vector<nn::Var> inputs(preds.begin(), preds.end());
    std::vector<std::shared_ptr<nn::Node>> nodes;
    for (const auto& p : preds) nodes.push_back(p.shared());
    return nn::make_op(
        std::move(dist), B, 1, inputs,
        [nodes, targets_copy = targets.groups, cos_sample, na, nb, keep_grad, B, T, C, G](nn::Node& self) {
            for (size_t g = 0; g < G; ++g) {
                if (!nodes[g]->requires_grad) continue;
                auto& grad = nodes[g]->ensure_grad();
                const auto& a = targets_copy[g];
                const auto& b = nodes[g]->value;
                for (int i = 0; i < B; ++i) {
                    const double up = self.grad[i] / static_cast<double>(G);
                    const double n_a = na[g * B + i], n_b = nb[g * B + i], cs = cos_sample[g * B + i];
                    for (int t = 0; t < T; ++t) {
                        const size_t p = static_cast<size_t>(i) * T + t;
                        if (!keep_grad[g][p]) continue;
                        for (int c = 0; c < C; ++c) {
                            const size_t j = p * C + c;
                            // d(1 - cos)/db = -(a / (|a||b|) - cos * b / |b|^2)
                            grad[j] += static_cast<float>(-up * (a[j] / (n_a * n_b) - cs * b[j] / (n_b * n_b)));
                        }
                    }
                }
            }
        });
}

nn::Var hard_mined_cosine_loss(const AlignedFeatures& targets, std::span<const nn::Var> preds, double mine_fraction) {
    const nn::Var d = hard_mined_cosine_distances(targets, preds, mine_fraction);
    return nn::scale(nn::sum(d), 1.0f / static_cast<float>(d.rows()));
}

}  // namespace ssf
