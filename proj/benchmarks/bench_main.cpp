#include <benchmark/benchmark.h>

#include <random>

#include "ssfilter/backbone.hpp"
#include "ssfilter/decoder_blocks.hpp"
#include "ssfilter/losses.hpp"
#include "ssfilter/metrics.hpp"
#include "ssfilter/patch_scorer.hpp"
#include "ssfilter/recon.hpp"
#include "ssfilter/synergy_filter.hpp"

using namespace ssf;

namespace {

PatchDescriptorBatch random_descriptors(int batch, int grid, int dim) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> nd(0, 1);
    PatchDescriptorBatch d;
    d.batch = batch, d.grid_h = grid, d.grid_w = grid, d.dim = dim;
    d.data.resize(static_cast<size_t>(batch) * grid * grid * dim);
    for (auto& v : d.data) v = nd(rng);
    return d;
}

LayerFeatureMap random_features(int batch, int grid, int dim, std::span<const int> layers) {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> nd(0, 1);
    LayerFeatureMap out;
    for (int l : layers) {
        FeatureStack fs;
        fs.batch = batch, fs.grid_h = grid, fs.grid_w = grid, fs.channels = dim;
        fs.data.resize(static_cast<size_t>(batch) * grid * grid * dim);
        for (auto& v : fs.data) v = nd(rng);
        out[l] = std::move(fs);
    }
    return out;
}

}  // namespace

// batch 32 of 16x16 grids with the fused 3 x 32 descriptor
static void BM_MutualScore(benchmark::State& state) {
    const auto d = random_descriptors(static_cast<int>(state.range(0)), 16, 96);
    for (auto _ : state) benchmark::DoNotOptimize(mutual_score(d));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MutualScore)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_BruteForceScore(benchmark::State& state) {
    const auto d = random_descriptors(4, 8, 96);
    for (auto _ : state) benchmark::DoNotOptimize(brute_force_score(d));
}
BENCHMARK(BM_BruteForceScore)->Unit(benchmark::kMillisecond);

static void BM_BackboneForward(benchmark::State& state) {
    PatchTransformerConfig cfg;
    cfg.image_size = 64;
    cfg.patch_size = 8;
    cfg.embed_dim = 32;
    cfg.depth = 12;
    cfg.heads = 4;
    const auto net = PatchTransformer::random(cfg);
    std::vector<Image> images(static_cast<size_t>(state.range(0)), Image(64, 64, 3, 0.5f));
    const std::vector<int> layers{0, 3, 7, 11};
    for (auto _ : state) benchmark::DoNotOptimize(net->forward(images, layers));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BackboneForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

static void BM_DecoderBlock(benchmark::State& state) {
    const auto kind = state.range(0) == 0 ? DecoderKind::mlla : DecoderKind::linear_attention;
    ParamStore store(3);
    const auto block = make_decoder_block(kind, store, "b", 32, 4, 1.0f);
    std::mt19937_64 rng(4);
    std::normal_distribution<float> nd(0, 1);
    const nn::TokenGrid grid{16, 8, 8};
    nn::Buffer x(static_cast<size_t>(16) * 64 * 32);
    for (auto& v : x) v = nd(rng);
    const auto input = nn::Var::parameter(x, 16 * 64, 32);
    for (auto _ : state) {
        auto y = block->forward(input, grid);
        nn::backward(nn::sum(y));
        benchmark::DoNotOptimize(y.value().data());
    }
    state.SetLabel(to_string(kind));
}
BENCHMARK(BM_DecoderBlock)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_ReconTrainStep(benchmark::State& state) {
    ReconConfig cfg;
    cfg.encoder_groups = {{2, 3, 4, 5}, {6, 7, 8, 9}};
    cfg.decoder_blocks = 8;
    cfg.heads = 4;
    cfg.mlp_ratio = 1.0f;
    ReconModel model(cfg, 32);
    const auto layers = cfg.encoder_layers();
    const auto feats = random_features(16, 8, 32, layers);
    std::mt19937_64 rng(5);
    for (auto _ : state) {
        const auto out = model.forward(feats, true, rng);
        const auto loss = hard_mined_cosine_loss(out.targets, out.predictions, 0.9);
        nn::backward(loss);
        benchmark::DoNotOptimize(loss.item());
    }
}
BENCHMARK(BM_ReconTrainStep)->Unit(benchmark::kMillisecond);

static void BM_Uncertainty(benchmark::State& state) {
    ReconConfig cfg;
    cfg.encoder_groups = {{2, 3, 4, 5}, {6, 7, 8, 9}};
    ReconModel model(cfg, 32);
    const auto feats = random_features(16, 8, 32, cfg.encoder_layers());
    std::mt19937_64 rng(6);
    for (auto _ : state) benchmark::DoNotOptimize(estimate_uncertainty(model, feats, rng, {10, 0.01}));
}
BENCHMARK(BM_Uncertainty)->Unit(benchmark::kMillisecond);

static void BM_Selection(benchmark::State& state) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(0, 1);
    std::vector<double> a(32), u(32);
    for (int i = 0; i < 32; ++i) a[i] = d(rng), u[i] = d(rng);
    for (auto _ : state) benchmark::DoNotOptimize(regular_select(a, u, {}));
}
BENCHMARK(BM_Selection);

static void BM_RegionProAuc(benchmark::State& state) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<float> d(0, 1);
    const int side = static_cast<int>(state.range(0));
    std::vector<std::vector<float>> maps(20, std::vector<float>(side * side));
    std::vector<BinaryGrid> masks(20, BinaryGrid(side, side));
    for (int k = 0; k < 20; ++k)
        for (int i = 0; i < side * side; ++i) {
            masks[k].cells[i] = (i / side > side / 3 && i / side < side / 2 && i % side < side / 4) ? 1 : 0;
            maps[k][i] = d(rng) + masks[k].cells[i] * 0.5f;
        }
    for (auto _ : state) benchmark::DoNotOptimize(region_pro_auc(maps, masks, 0.3));
}
BENCHMARK(BM_RegionProAuc)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
