#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "vfift/pipeline.hpp"

using namespace vfift;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.window = 3;
    cfg.heads = 1;
    cfg.attn_width = 4;
    cfg.feature_channels = 1;
    cfg.encoder_channels = {1, 1, 2, 2};
    cfg.num_scales = 2;
    return cfg;
}

Tensor constant_flow(int H, int W, double dy, double dx) {
    std::vector<double> v(static_cast<size_t>(2) * H * W);
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
        v[i] = dy;
        v[H * W + i] = dx;
    }
    return Tensor::from_data({1, 2, H, W}, std::move(v));
}

} // namespace

TEST_CASE("model config validation catches each constraint") {
    CHECK_NOTHROW(ModelConfig{}.validate());

    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());

    c = tiny_config(); c.window = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config(); c.heads = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config(); c.num_scales = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config(); c.attn_width = 6; c.heads = 2; // 6 % (2*2) != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config(); c.feature_channels = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config(); c.encoder_channels[1] = -3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config(); c.lambda_warp = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config text round-trips, accepts comments, rejects junk") {
    ModelConfig c = tiny_config();
    c.variant = AttnVariant::ConvReplace;
    c.lambda_rec = 0.25;
    ModelConfig back = ModelConfig::from_text(c.to_text());
    CHECK(back.window == c.window);
    CHECK(back.heads == c.heads);
    CHECK(back.attn_width == c.attn_width);
    CHECK(back.encoder_channels == c.encoder_channels);
    CHECK(back.num_scales == c.num_scales);
    CHECK(back.variant == c.variant);
    CHECK(back.lambda_rec == c.lambda_rec);

    ModelConfig partial = ModelConfig::from_text("# comment only\nwindow = 7\n\n");
    CHECK(partial.window == 7);
    CHECK(partial.heads == ModelConfig{}.heads); // unspecified keys keep defaults

    CHECK_THROWS_AS(ModelConfig::from_text("window : 5\n"), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_text("windoww = 5\n"), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_text("window = five\n"), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_text("variant = fancy\n"), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_text("encoder_channels = 1,2,3\n"), ConfigError);
    CHECK_THROWS_AS(ModelConfig::from_text("window = 4\n"), ConfigError); // validates at the end
}

TEST_CASE("backward_warp with zero flow is the identity") {
    Rng rng(1);
    Tensor frame = Tensor::uniform({1, 3, 8, 8}, 0.0, 1.0, rng);
    Tensor warped = backward_warp(frame, FlowField{Tensor::zeros({1, 2, 8, 8})});
    CHECK(oracle::max_abs_diff(warped, frame) == 0.0);
}

TEST_CASE("backward_warp matches the bilinear reference, including borders") {
    Rng rng(2);
    Tensor frame = Tensor::uniform({2, 3, 7, 9}, 0.0, 1.0, rng);
    // Flows large enough to push sampling points outside the image exercise
    // the clamping path.
    Tensor flow = Tensor::uniform({2, 2, 7, 9}, -10.0, 10.0, rng);
    Tensor got = backward_warp(frame, FlowField{flow});
    CHECK(oracle::max_abs_diff(got, oracle::bilinear_warp(frame, flow)) < 1e-14);

    // Integral shift: interior pixels read exactly the shifted source.
    Tensor single = Tensor::uniform({1, 3, 7, 9}, 0.0, 1.0, rng);
    Tensor shift = constant_flow(7, 9, 1.0, 2.0);
    Tensor moved = backward_warp(single, FlowField{shift});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 7; ++j)
                CHECK(moved.value_at((static_cast<int64_t>(c) * 7 + i) * 9 + j) ==
                      single.value_at((static_cast<int64_t>(c) * 7 + i + 1) * 9 + j + 2));

    CHECK_THROWS_AS(backward_warp(frame, FlowField{Tensor::zeros({2, 2, 8, 9})}), DimensionError);
    CHECK_THROWS_AS(backward_warp(frame, FlowField{Tensor::zeros({2, 3, 7, 9})}), DimensionError);
}

TEST_CASE("backward_warp gradients: frame always, flow only off the border clamp") {
    Rng rng(3);
    Tensor frame = Tensor::uniform({1, 2, 6, 6}, 0.0, 1.0, rng).set_requires_grad(true);
    // Fractional interior flow keeps every sample bilinear and unclamped.
    Tensor flow = Tensor::uniform({1, 2, 6, 6}, -1.3, 1.3, rng).set_requires_grad(true);
    Tensor target = Tensor::uniform({1, 2, 6, 6}, 0.0, 1.0, rng);

    auto loss = [&] {
        Tensor d = sub(backward_warp(frame, FlowField{flow}), target);
        return mean(mul(d, d));
    };
    backward(loss());

    double flow_mag = 0.0;
    for (double v : flow.grad()) flow_mag += std::abs(v);
    CHECK(flow_mag > 0.0);

    for (Tensor* t : {&frame, &flow})
        for (int64_t i = 0; i < t->numel(); ++i) {
            const double fd = oracle::fd_derivative([&] { return loss().item(); }, *t, i, 1e-6);
            CHECK(t->grad()[static_cast<size_t>(i)] ==
                  doctest::Approx(fd).epsilon(1e-4).scale(1e-7));
        }

    // A flow pointing far outside the image gives zero flow gradient there:
    // the clamped coordinate no longer responds to the flow.
    Tensor far = constant_flow(6, 6, 100.0, 100.0).set_requires_grad(true);
    Tensor f2 = Tensor::uniform({1, 2, 6, 6}, 0.0, 1.0, rng);
    backward(mean(backward_warp(f2, FlowField{far})));
    for (double v : far.grad()) CHECK(v == 0.0);
}

TEST_CASE("downscale_flow averages blocks and rescales displacements") {
    // A constant field of (4, -2) at factor 4 becomes (1, -0.5): the same
    // motion expressed in the coarser grid's pixels.
    Tensor flow = constant_flow(8, 8, 4.0, -2.0);
    FlowField down = downscale_flow(FlowField{flow}, 4);
    CHECK(down.data.shape() == Shape{1, 2, 2, 2});
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(down.data.value_at(i) == 1.0);
        CHECK(down.data.value_at(4 + i) == -0.5);
    }

    FlowField same = downscale_flow(FlowField{flow}, 1);
    CHECK(oracle::max_abs_diff(same.data, flow) == 0.0);

    CHECK_THROWS_AS(downscale_flow(FlowField{flow}, 3), ConfigError);
    CHECK_THROWS_AS(downscale_flow(FlowField{flow}, 0), ConfigError);
}

TEST_CASE("occlusion_blend weights sum to one for any map") {
    Rng rng(4);
    const int H = 6, W = 5;
    Tensor O = Tensor::uniform({1, 1, H, W}, 0.001, 0.999, rng);
    Tensor ones = Tensor::ones({1, 3, H, W});
    // blend(1, 1, O) = O + (1 - O); deviation from 1 is pure rounding.
    Tensor blended = occlusion_blend(ones, ones, OcclusionMap{O});
    for (int64_t i = 0; i < blended.numel(); ++i)
        CHECK(std::abs(blended.value_at(i) - 1.0) < 1e-15);

    // Extremes hand over fully to one side.
    Tensor a = Tensor::uniform({1, 3, H, W}, 0.0, 1.0, rng);
    Tensor b = Tensor::uniform({1, 3, H, W}, 0.0, 1.0, rng);
    CHECK(oracle::max_abs_diff(occlusion_blend(a, b, OcclusionMap{Tensor::ones({1, 1, H, W})}), a) == 0.0);
    CHECK(oracle::max_abs_diff(occlusion_blend(a, b, OcclusionMap{Tensor::zeros({1, 1, H, W})}), b) == 0.0);

    CHECK_THROWS_AS(occlusion_blend(a, b, OcclusionMap{Tensor::zeros({1, 2, H, W})}), DimensionError);
}

TEST_CASE("loss terms implement their formulas") {
    Tensor gt = Tensor::from_data({1, 1, 1, 2}, {0.5, 0.5});
    Tensor wp = Tensor::from_data({1, 1, 1, 2}, {0.9, 0.1});
    Tensor wn = Tensor::from_data({1, 1, 1, 2}, {0.3, 0.5});
    // Averaged warps: (0.6, 0.3); L1 against gt: (0.1 + 0.2)/2 = 0.15.
    CHECK(loss_warp(gt, wp, wn).item() == doctest::Approx(0.15).epsilon(1e-15));

    Tensor it = Tensor::from_data({1, 1, 1, 2}, {0.0, 1.0});
    CHECK(loss_rec(gt, it).item() == doctest::Approx(0.5).epsilon(1e-15));

    InterpolationOutput out;
    out.warped_prev = wp;
    out.warped_next = wn;
    out.I_t = it;
    ModelConfig cfg;
    cfg.lambda_warp = 1.0;
    cfg.lambda_rec = 0.5;
    CHECK(total_loss(gt, out, cfg).item() == doctest::Approx(0.15 + 0.5 * 0.5).epsilon(1e-15));

    CHECK_THROWS_AS(loss_rec(gt, Tensor::zeros({1, 1, 2, 2})), DimensionError);
}

TEST_CASE("fresh model reproduces the frame average exactly") {
    Rng rng(5);
    VfiftModel model(tiny_config(), rng);
    Tensor a = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
    Tensor b = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);

    InterpolationOutput out = model.forward(a, b);
    CHECK(out.I_t.shape() == a.shape());

    // Flow and occlusion heads start at zero and the residual head is
    // zero-filled, so the pipeline collapses to 0.5*a + 0.5*b bit-for-bit.
    Tensor avg = scale(add(a, b), 0.5);
    CHECK(oracle::max_abs_diff(out.I_t, avg) == 0.0);
    CHECK(oracle::max_abs_diff(out.warped_prev, a) == 0.0);
    CHECK(oracle::max_abs_diff(out.warped_next, b) == 0.0);
    for (int64_t i = 0; i < out.delta.numel(); ++i) CHECK(out.delta.value_at(i) == 0.0);
    for (int64_t i = 0; i < out.occlusion.data.numel(); ++i)
        CHECK(out.occlusion.data.value_at(i) == 0.5);
}

TEST_CASE("model forward shapes and input checks across scale counts") {
    Rng rng(6);
    ModelConfig cfg = tiny_config();
    cfg.num_scales = 3;
    VfiftModel model(cfg, rng);
    Tensor a = Tensor::uniform({1, 3, 32, 16}, 0.0, 1.0, rng);
    Tensor b = Tensor::uniform({1, 3, 32, 16}, 0.0, 1.0, rng);
    InterpolationOutput out = model.forward(a, b);
    CHECK(out.I_t.shape() == a.shape());
    CHECK(out.flow_prev.data.shape() == Shape{1, 2, 32, 16});
    CHECK(out.occlusion.data.shape() == Shape{1, 1, 32, 16});

    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 4, 16, 16}), Tensor::zeros({1, 4, 16, 16})),
                    DimensionError);
    CHECK_THROWS_AS(model.forward(a, Tensor::zeros({1, 3, 16, 16})), DimensionError);
    CHECK_THROWS_AS(VfiftModel().forward(a, b), ContractError);
}

TEST_CASE("params map shares storage with the live model") {
    Rng rng(7);
    VfiftModel model(tiny_config(), rng);
    ParamMap params = model.params();

    // Registration is stable and collision-free: the tiny model's three
    // backbones, two blocks, one fusion stage and delta head.
    CHECK(params.count("flow_net.head.weight") == 1);
    CHECK(params.count("block0.ftfa.attn_prev.wq") == 1);
    CHECK(params.count("block1.reduce.weight") == 1);
    CHECK(params.count("up1.fuse.bias") == 1);
    CHECK(params.count("delta_head.weight") == 1);

    Tensor a = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
    Tensor b = Tensor::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
    Tensor before = model.forward(a, b).I_t;

    // Pushing the delta head away from zero must show up in the output.
    for (double& v : params.at("delta_head.bias").mutable_values()) v = 0.123;
    Tensor after = model.forward(a, b).I_t;
    CHECK(oracle::max_abs_diff(after, before) == doctest::Approx(0.123).epsilon(1e-12));
}

TEST_CASE("every registered parameter requires grad and is finite") {
    Rng rng(8);
    VfiftModel model(tiny_config(), rng);
    for (const auto& [name, t] : model.params()) {
        CHECK(t.requires_grad());
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(std::isfinite(t.value_at(i)));
    }
}
