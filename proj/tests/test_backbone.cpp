#include <doctest.h>

#include "support/oracles.hpp"
#include "vfift/backbone.hpp"

using namespace vfift;

namespace {

UNetConfig tiny_cfg(HeadKind kind, int in_ch) {
    UNetConfig cfg;
    cfg.encoder_channels = {2, 2, 3, 3};
    cfg.head_kind = kind;
    cfg.feature_channels = 2;
    cfg.in_channels = in_ch;
    return cfg;
}

} // namespace

TEST_CASE("unet config validation and head widths") {
    UNetConfig cfg = tiny_cfg(HeadKind::Flow, 6);
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.head_out_channels() == 4);

    cfg.head_kind = HeadKind::Feature;
    CHECK(cfg.head_out_channels() == 2 * cfg.feature_channels);
    cfg.head_kind = HeadKind::Occlusion;
    CHECK(cfg.head_out_channels() == 1);

    UNetConfig bad = cfg;
    bad.encoder_channels[2] = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.in_channels = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_cfg(HeadKind::Feature, 6);
    bad.feature_channels = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("unet forward keeps resolution and enforces the input contract") {
    Rng rng(1);
    UNet net(tiny_cfg(HeadKind::Flow, 6), rng);

    for (const Shape s : {Shape{1, 6, 16, 16}, Shape{2, 6, 32, 16}, Shape{1, 6, 16, 48}}) {
        Tensor x = Tensor::uniform(s, 0.0, 1.0, rng);
        Tensor y = net.forward(x);
        CHECK(y.shape() == Shape{s[0], 4, s[2], s[3]});
    }

    CHECK_THROWS_AS(net.forward(Tensor::zeros({1, 6, 20, 16})), DimensionError);
    CHECK_THROWS_AS(net.forward(Tensor::zeros({1, 4, 16, 16})), DimensionError);
    CHECK_THROWS_AS(net.forward(Tensor::zeros({6, 16, 16})), DimensionError);
}

TEST_CASE("flow and occlusion heads start at zero, the feature head does not") {
    Rng rng(2);
    Tensor a = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
    Tensor b = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);

    UNet flow_net(tiny_cfg(HeadKind::Flow, 6), rng);
    auto [fp, fn] = predict_flow(flow_net, a, b);
    for (int64_t i = 0; i < fp.data.numel(); ++i) CHECK(fp.data.value_at(i) == 0.0);
    for (int64_t i = 0; i < fn.data.numel(); ++i) CHECK(fn.data.value_at(i) == 0.0);

    UNetConfig occ_cfg = tiny_cfg(HeadKind::Occlusion, 12);
    UNet occ_net(occ_cfg, rng);
    OcclusionMap occ = predict_occlusion(occ_net, Tensor::uniform({1, 12, 16, 16}, 0.0, 1.0, rng));
    for (int64_t i = 0; i < occ.data.numel(); ++i) CHECK(occ.data.value_at(i) == 0.5);

    UNet feat_net(tiny_cfg(HeadKind::Feature, 6), rng);
    auto [mp, mn] = extract_features(feat_net, a, b);
    double mag = 0.0;
    for (int64_t i = 0; i < mp.numel(); ++i) mag += std::abs(mp.value_at(i));
    CHECK(mag > 0.0);
    CHECK(mp.shape() == Shape{1, 2, 16, 16});
    CHECK(mn.shape() == Shape{1, 2, 16, 16});
}

TEST_CASE("predict_flow splits head channels into the two fields") {
    Rng rng(3);
    UNet net(tiny_cfg(HeadKind::Flow, 6), rng);
    // Give the head a nonzero state so the split is observable.
    ParamMap params;
    net.register_params("net", params);
    Tensor head_w = params.at("net.head.weight");
    Rng wrng(4);
    head_w.mutable_values() = Tensor::uniform(head_w.shape(), -0.3, 0.3, wrng).values();

    Tensor a = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
    Tensor b = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
    Tensor raw = net.forward(concat_channels({a, b}));
    auto [fp, fn] = predict_flow(net, a, b);
    CHECK(fp.data.shape() == Shape{1, 2, 16, 16});
    CHECK(fn.data.shape() == Shape{1, 2, 16, 16});
    CHECK(oracle::max_abs_diff(fp.data, slice_channels(raw, 0, 2)) == 0.0);
    CHECK(oracle::max_abs_diff(fn.data, slice_channels(raw, 2, 4)) == 0.0);
}

TEST_CASE("heads reject networks built for another role") {
    Rng rng(5);
    UNet flow_net(tiny_cfg(HeadKind::Flow, 6), rng);
    UNet feat_net(tiny_cfg(HeadKind::Feature, 6), rng);
    Tensor a = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
    Tensor b = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);

    CHECK_THROWS_AS(predict_flow(feat_net, a, b), ConfigError);
    CHECK_THROWS_AS(extract_features(flow_net, a, b), ConfigError);
    CHECK_THROWS_AS(predict_occlusion(flow_net, concat_channels({a, b})), ConfigError);
    CHECK_THROWS_AS(predict_flow(flow_net, a, Tensor::zeros({1, 3, 32, 32})), DimensionError);
}

TEST_CASE("parameter registration names every stage exactly once") {
    Rng rng(6);
    UNet net(tiny_cfg(HeadKind::Flow, 6), rng);
    ParamMap params;
    net.register_params("flow", params);

    // 4 encoder stages x 2 convs + 4 decoder stages x 2 convs + head, each
    // conv contributing weight and bias.
    CHECK(params.size() == (4 * 2 + 4 * 2 + 1) * 2);
    CHECK(params.count("flow.enc1.c1.weight") == 1);
    CHECK(params.count("flow.dec4.fuse.bias") == 1);
    CHECK(params.count("flow.head.weight") == 1);

    // Handles are shared with the live network: zeroing a registered encoder
    // weight changes the forward output.
    Tensor x = Tensor::uniform({1, 6, 16, 16}, 0.0, 1.0, rng);
    // A nonzero head is needed for the probe to be visible.
    Tensor head_w = params.at("flow.head.weight");
    Rng wrng(7);
    head_w.mutable_values() = Tensor::uniform(head_w.shape(), -0.3, 0.3, wrng).values();
    Tensor before = net.forward(x);
    Tensor enc_w = params.at("flow.enc1.c1.weight");
    for (double& v : enc_w.mutable_values()) v = 0.0;
    Tensor after = net.forward(x);
    CHECK(oracle::max_abs_diff(before, after) > 0.0);
}

TEST_CASE("occlusion output stays inside the open unit interval") {
    Rng rng(8);
    UNetConfig cfg = tiny_cfg(HeadKind::Occlusion, 12);
    UNet net(cfg, rng);
    ParamMap params;
    net.register_params("occ", params);
    Tensor head_w = params.at("occ.head.weight");
    Rng wrng(9);
    head_w.mutable_values() = Tensor::uniform(head_w.shape(), -2.0, 2.0, wrng).values();

    OcclusionMap m = predict_occlusion(net, Tensor::uniform({1, 12, 16, 16}, 0.0, 1.0, rng));
    for (int64_t i = 0; i < m.data.numel(); ++i) {
        CHECK(m.data.value_at(i) > 0.0);
        CHECK(m.data.value_at(i) < 1.0);
    }
}
