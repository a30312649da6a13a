#include "ssfilter/patch_scorer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "ssfilter/errors.hpp"

namespace ssf {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void validate(const PatchDescriptorBatch& desc) {
    if (desc.batch < 2) throw CannotScoreError("mutual scoring needs at least two images in the batch");
    if (desc.data.size() != static_cast<size_t>(desc.batch) * desc.patches_per_image() * desc.dim)
        throw InputError("descriptor batch data has wrong size");
    for (float v : desc.data)
        if (!std::isfinite(v)) throw InputError("descriptor contains a non-finite value");
}

double mean_of_top_k(std::vector<double>& values, int k) {
    std::nth_element(values.begin(), values.begin() + (k - 1), values.end(), std::greater<>());
    return std::accumulate(values.begin(), values.begin() + k, 0.0) / k;
}

void finish_image_scores(MutualScoreResult& r) {
    r.image_scores.assign(r.batch, 0.0f);
    std::vector<double> row(r.patches);
    for (int b = 0; b < r.batch; ++b) {
        for (int p = 0; p < r.patches; ++p) row[p] = r.patch_score(b, p);
        r.image_scores[b] = static_cast<float>(mean_of_top_k(row, r.k_top));
    }
}

}  // namespace

int clamped_top_k(int count, double fraction) {
    return std::max(1, static_cast<int>(std::floor(count * fraction)));
}

MutualScoreResult mutual_score(const PatchDescriptorBatch& desc, const MutualScoreOptions& opts) {
    validate(desc);
    const int HW = desc.patches_per_image();
    const int N = desc.batch * HW;

    RowMat z = Eigen::Map<const RowMat>(desc.data.data(), N, desc.dim);
    for (int i = 0; i < N; ++i) {
        const float n = z.row(i).norm();
        if (!(n > 0.0f)) throw InputError("descriptor row " + std::to_string(i) + " has zero norm");
        z.row(i) /= n;
    }

    MutualScoreResult r;
    r.batch = desc.batch;
    r.patches = HW;
    r.k_sim = std::min(N, clamped_top_k(N, opts.sim_fraction));
    r.k_top = std::min(HW, clamped_top_k(HW, opts.region_fraction));
    r.patch_scores.resize(N);

    // Row blocks of whole images bound memory at O(HW * N).
    RowMat sims(HW, N);
    std::vector<float> row(N);
    for (int b = 0; b < desc.batch; ++b) {
        sims.noalias() = z.middleRows(static_cast<Eigen::Index>(b) * HW, HW) * z.transpose();
        sims.middleCols(static_cast<Eigen::Index>(b) * HW, HW).setZero();
        for (int p = 0; p < HW; ++p) {
            std::copy(sims.row(p).data(), sims.row(p).data() + N, row.begin());
            std::nth_element(row.begin(), row.begin() + (r.k_sim - 1), row.end(), std::greater<>());
            double acc = 0.0;
            for (int i = 0; i < r.k_sim; ++i) acc += row[i];
            const double s = 1.0 - acc / r.k_sim;
            r.patch_scores[static_cast<size_t>(b) * HW + p] = static_cast<float>(std::clamp(s, 0.0, 2.0));
        }
    }
    finish_image_scores(r);
    return r;
}

MutualScoreResult brute_force_score(const PatchDescriptorBatch& desc, const MutualScoreOptions& opts) {
    validate(desc);
    const int HW = desc.patches_per_image();
    const int N = desc.batch * HW;
    const int D = desc.dim;

    std::vector<double> norms(N);
    for (int i = 0; i < N; ++i) {
        double s = 0;
        for (int d = 0; d < D; ++d) s += static_cast<double>(desc.data[static_cast<size_t>(i) * D + d]) *
                                         desc.data[static_cast<size_t>(i) * D + d];
        norms[i] = std::sqrt(s);
        if (!(norms[i] > 0.0)) throw InputError("descriptor row " + std::to_string(i) + " has zero norm");
    }

    MutualScoreResult r;
    r.batch = desc.batch;
    r.patches = HW;
    r.k_sim = std::min(N, clamped_top_k(N, opts.sim_fraction));
    r.k_top = std::min(HW, clamped_top_k(HW, opts.region_fraction));
    r.patch_scores.resize(N);

    std::vector<double> candidates;
    for (int i = 0; i < N; ++i) {
        candidates.clear();
        const int img_i = i / HW;
        for (int j = 0; j < N; ++j) {
            if (j / HW == img_i) {
                candidates.push_back(0.0);  // the zero-filled same-image block
                continue;
            }
            double dot = 0;
            for (int d = 0; d < D; ++d)
                dot += static_cast<double>(desc.data[static_cast<size_t>(i) * D + d]) *
                       desc.data[static_cast<size_t>(j) * D + d];
            candidates.push_back(dot / (norms[i] * norms[j]));
        }
        std::sort(candidates.begin(), candidates.end(), std::greater<>());
        double acc = 0;
        for (int k = 0; k < r.k_sim; ++k) acc += candidates[k];
        r.patch_scores[i] = static_cast<float>(std::clamp(1.0 - acc / r.k_sim, 0.0, 2.0));
    }
    finish_image_scores(r);
    return r;
}

void append_score_log(const std::filesystem::path& path, const PatchDescriptorBatch& desc,
                      const MutualScoreResult& result) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError(path.string(), "cannot append score log");
    for (int b = 0; b < result.batch; ++b) out << desc.image_ids.at(b) << '\t' << result.image_scores[b] << '\n';
}

}  // namespace ssf
