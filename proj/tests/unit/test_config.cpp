#include <doctest.h>

#include <fstream>

#include "ssfilter/config.hpp"
#include "ssfilter/errors.hpp"
#include "test_support.hpp"

using namespace ssf;

TEST_CASE("default training recipe") {
    const PipelineConfig c;
    CHECK(c.dropout == 0.2);
    CHECK(c.decoder_mlp_ratio == 1.0);
    CHECK(c.passes == 10);
    CHECK(c.tau == 8.0);
    CHECK(c.tp_max_fraction == 0.8);
    CHECK(c.lr == 2e-3);
    CHECK(c.weight_decay == 1e-4);
    CHECK(c.total_iterations == 5000);
    CHECK(c.cold_start_iterations == 1000);
    CHECK(c.batch_size == 32);
    CHECK(c.kappa1 == 20);
    CHECK(c.kappa2 == 5);
    CHECK(c.resize == 448);
    CHECK(c.crop == 392);
    CHECK(c.tiny_patch == 14);
    CHECK(c.optimizer == "stable_adamw");
    CHECK(c.layer_spec() == LayerSpec({0, 3}, {0, 3, 7}));
    CHECK(c.layer_spec().required_layers() == std::vector<int>{0, 3, 7});
    CHECK(c.keep_fraction == 0.5);
    CHECK_NOTHROW(c.validate());
    CHECK(c.crop / c.tiny_patch == 28);
}

TEST_CASE("key=value parsing") {
    const auto kv = KeyValueConfig::parse("# comment\n  seed = 7  # trailing\n\nlr=0.01\n", "t.cfg");
    CHECK(kv.get("seed") == "7");
    CHECK(kv.get("lr") == "0.01");
    CHECK_FALSE(kv.get("tau").has_value());
    CHECK_THROWS_WITH_AS(KeyValueConfig::parse("seed 7\n", "t.cfg"), "t.cfg:1: expected key=value", ConfigError);
    CHECK_THROWS_AS(KeyValueConfig::parse("ok=1\n=3\n"), ConfigError);
}

TEST_CASE("unknown keys and bad values name the key") {
    KeyValueConfig kv;
    kv.set("learning_rate", "0.1");
    CHECK_THROWS_WITH_AS(PipelineConfig::from_kv(kv), "unknown config key 'learning_rate'", ConfigError);
    PipelineConfig c;
    try {
        c.apply("batch_size", "many");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("batch_size") != std::string::npos);
    }
    CHECK_THROWS_AS(c.apply("lr", "1e-3x"), ConfigError);
}

TEST_CASE("echo round trips every key") {
    PipelineConfig c;
    c.apply("seed", "11");
    c.apply("lr", "0.00123");
    c.apply("descriptor_layers", "0|");
    c.apply("dataset", "/data/set");
    const auto back = PipelineConfig::from_kv(KeyValueConfig::parse(c.echo()));
    CHECK(back.echo() == c.echo());
    CHECK(back.seed == 11);
    CHECK(back.lr == 0.00123);
    CHECK(back.dataset == "/data/set");
    CHECK(c.to_kv().values().size() == PipelineConfig::known_keys().size());
}

TEST_CASE("config files load from disk") {
    ssf::testing::TempDir dir("cfg");
    {
        std::ofstream(dir / "a.cfg") << "tau=6\nkappa2=3\n";
    }
    const auto c = PipelineConfig::from_kv(KeyValueConfig::load(dir / "a.cfg"));
    CHECK(c.tau == 6.0);
    CHECK(c.kappa2 == 3);
    CHECK_THROWS_AS(KeyValueConfig::load(dir / "missing.cfg"), IoError);
}

TEST_CASE("validation rejects out-of-range settings") {
    auto bad = [](const std::string& key, const std::string& value) {
        PipelineConfig c;
        c.apply(key, value);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    bad("batch_size", "3");
    bad("passes", "1");
    bad("keep_fraction", "1");
    bad("dropout", "1");
    bad("cold_start_iterations", "5000");
    bad("optimizer", "sgd");
    bad("decoder_kind", "conv");
    bad("decoder_blocks", "3");
    bad("encoder_groups", "2,3;6,12");
    bad("descriptor_layers", "0,15|");
    bad("crop", "500");
    bad("crop", "390");
    bad("fpr_limit", "0");
    bad("mine_fraction", "1.5");
    for (const std::string tau : {"6", "8", "10"}) {
        PipelineConfig c;
        c.apply("tau", tau);
        CHECK_NOTHROW(c.validate());
    }
}

TEST_CASE("derived component settings") {
    PipelineConfig c;
    c.apply("seed", "4");
    c.apply("dropout", "0.1");
    const auto r = c.recon();
    CHECK(r.bottleneck_dropout == doctest::Approx(0.1));
    CHECK(r.encoder_groups == std::vector<std::vector<int>>{{2, 3, 4, 5}, {6, 7, 8, 9}});
    CHECK(r.decoder_blocks == 8);
    CHECK(r.init_seed == 4);
    CHECK(c.backbone().tiny.image_size == 392);
    CHECK(c.resolved_foreground_layer() == 9);
    c.apply("foreground_layer", "5");
    CHECK(c.resolved_foreground_layer() == 5);
    CHECK(c.selection().tau == 8.0);
    CHECK(c.uncertainty().passes == 10);
    CHECK(c.scoring().sim_fraction == 0.001);
    CHECK(parse_layer_groups("1, 2;3") == std::vector<std::vector<int>>{{1, 2}, {3}});
    CHECK_THROWS_AS(parse_layer_groups("1;;2"), ConfigError);
}
