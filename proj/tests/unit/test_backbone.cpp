#include <doctest.h>

#include <cmath>

#include "ssfilter/backbone.hpp"
#include "ssfilter/errors.hpp"
#include "test_support.hpp"

using namespace ssf;
using ssf::testing::random_image;
using ssf::testing::small_backbone;

TEST_CASE("forward returns post-block patch tokens for requested layers") {
    auto net = small_backbone();
    std::mt19937_64 rng(1);
    const std::vector<Image> imgs{random_image(32, 32, 3, rng), random_image(32, 32, 3, rng)};
    const std::vector<int> layers{0, 9};
    const auto out = net->forward(imgs, layers);
    REQUIRE(out.size() == 2);
    for (int l : layers) {
        const auto& fs = out.at(l);
        CHECK(fs.batch == 2);
        CHECK(fs.grid_h == 4);
        CHECK(fs.grid_w == 4);
        CHECK(fs.channels == 16);
        CHECK(fs.data.size() == 2u * 16 * 16);
        for (float v : fs.data) CHECK(std::isfinite(v));
    }
    CHECK(out.at(0).data != out.at(9).data);
}

TEST_CASE("forward is deterministic and batch independent") {
    auto net = small_backbone();
    std::mt19937_64 rng(2);
    const Image a = random_image(32, 32, 3, rng), b = random_image(32, 32, 3, rng);
    const std::vector<int> layers{3};
    const std::vector<Image> both{a, b}, only_b{b};
    const auto f1 = net->forward(both, layers).at(3);
    const auto f2 = net->forward(both, layers).at(3);
    CHECK(f1.data == f2.data);
    const auto single = net->forward(only_b, layers).at(3);
    const auto view = f1.image(1);
    for (size_t i = 0; i < single.data.size(); ++i) CHECK(view[i] == doctest::Approx(single.data[i]).epsilon(1e-5));
}

TEST_CASE("position embeddings interpolate to other grid sizes") {
    auto net = small_backbone();
    std::mt19937_64 rng(3);
    const std::vector<Image> imgs{random_image(48, 40, 3, rng)};
    const std::vector<int> layers{1};
    const auto fs = net->forward(imgs, layers).at(1);
    CHECK(fs.grid_w == 6);
    CHECK(fs.grid_h == 5);
}

TEST_CASE("input validation") {
    auto net = small_backbone();
    std::mt19937_64 rng(4);
    const std::vector<Image> bad{random_image(30, 32, 3, rng)};
    const std::vector<int> ok{0}, out_of_range{10}, negative{-1};
    CHECK_THROWS_AS(net->forward(bad, ok), InputError);
    const std::vector<Image> good{random_image(32, 32, 3, rng)};
    CHECK_THROWS_AS(net->forward(good, out_of_range), ConfigError);
    CHECK_THROWS_AS(net->forward(good, negative), ConfigError);
}

TEST_CASE("weights file round trip preserves hash and outputs") {
    ssf::testing::TempDir dir("backbone");
    auto net = small_backbone();
    net->save(dir / "w.bin");
    auto loaded = PatchTransformer::load(dir / "w.bin");
    CHECK(loaded->weights_hash() == net->weights_hash());
    std::mt19937_64 rng(5);
    const std::vector<Image> imgs{random_image(32, 32, 3, rng)};
    const std::vector<int> layers{7};
    CHECK(loaded->forward(imgs, layers).at(7).data == net->forward(imgs, layers).at(7).data);

    BackboneSpec spec;
    spec.weights_path = (dir / "w.bin").string();
    CHECK(make_backbone(spec)->weights_hash() == net->weights_hash());
    CHECK_THROWS_AS(PatchTransformer::load(dir / "missing.bin"), IoError);
}

TEST_CASE("weights hash tracks single-bit changes") {
    auto net = small_backbone();
    const auto before = net->weights_hash();
    auto& t = net->parameters().at("blocks.4.mlp.fc1.weight");
    t.data[3] = std::nextafter(t.data[3], 10.0f);
    CHECK(net->weights_hash() != before);
    CHECK(small_backbone()->weights_hash() == before);
}

TEST_CASE("register tokens do not change the patch grid") {
    auto cfg = ssf::testing::small_backbone_config();
    cfg.register_tokens = 4;
    auto net = PatchTransformer::random(cfg);
    std::mt19937_64 rng(6);
    const std::vector<Image> imgs{random_image(32, 32, 3, rng)};
    const std::vector<int> layers{2};
    CHECK(net->forward(imgs, layers).at(2).tokens() == 16);
}
