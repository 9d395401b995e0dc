#include "vfift/backbone.hpp"

namespace vfift {

void UNetConfig::validate() const {
    for (int c : encoder_channels)
        if (c <= 0) throw ConfigError("unet: encoder channels must be positive");
    if (in_channels <= 0) throw ConfigError("unet: in_channels must be positive");
    if (head_kind == HeadKind::Feature && feature_channels <= 0)
        throw ConfigError("unet: feature_channels must be positive");
}

int UNetConfig::head_out_channels() const {
    switch (head_kind) {
    case HeadKind::Flow: return 4;
    case HeadKind::Feature: return 2 * feature_channels;
    case HeadKind::Occlusion: return 1;
    }
    throw ConfigError("unet: unknown head kind");
}

UNet::UNet(const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const auto& ch = cfg.encoder_channels;
    int prev = cfg.in_channels;
    for (int i = 0; i < 4; ++i) {
        enc_[i].c1 = ConvParams::create(prev, ch[i], 3, 1, 1, rng);
        enc_[i].c2 = ConvParams::create(ch[i], ch[i], 3, 1, 1, rng);
        prev = ch[i];
    }
    // Decoder stage i upsamples to the width of encoder stage 4-i's pre-pool
    // output, concatenates it, and fuses back down the channel ladder.
    const std::array<int, 4> skip_ch{ch[3], ch[2], ch[1], ch[0]};
    const std::array<int, 4> fuse_out{ch[2], ch[1], ch[0], ch[0]};
    for (int i = 0; i < 4; ++i) {
        const int up_in = i == 0 ? ch[3] : fuse_out[i - 1];
        dec_[i].up = ConvParams::create(up_in, skip_ch[i], 4, 2, 1, rng);
        dec_[i].fuse = ConvParams::create(2 * skip_ch[i], fuse_out[i], 3, 1, 1, rng);
    }
    // Flow and occlusion heads start at zero so an untrained model degrades
    // to identity warping and a uniform 0.5 visibility map.
    const bool zero_head = cfg.head_kind != HeadKind::Feature;
    head_ = ConvParams::create(ch[0], cfg.head_out_channels(), 3, 1, 1, rng, zero_head);
}

Tensor UNet::forward(const Tensor& x) const {
    if (x.ndim() != 4) throw DimensionError("unet: expected a 4D NCHW input");
    if (x.dim(1) != cfg_.in_channels)
        throw DimensionError("unet: input has " + std::to_string(x.dim(1)) +
                             " channels, expected " + std::to_string(cfg_.in_channels));
    if (x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0)
        throw DimensionError("unet: spatial dims must be divisible by 16, got " +
                             std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));

    auto stage = [](const Tensor& in, const EncStage& s) {
        return leaky_relu(conv2d(leaky_relu(conv2d(in, s.c1)), s.c2));
    };
    std::array<Tensor, 4> skips;
    Tensor cur = x;
    for (int i = 0; i < 4; ++i) {
        skips[i] = stage(cur, enc_[i]);
        cur = avg_pool2(skips[i]);
    }
    // cur is now the bottleneck at 1/16 resolution.
    for (int i = 0; i < 4; ++i) {
        Tensor up = conv_transpose2d(cur, dec_[i].up);
        cur = leaky_relu(conv2d(concat_channels({up, skips[3 - i]}), dec_[i].fuse));
    }
    return conv2d(cur, head_);
}

void UNet::register_params(const std::string& prefix, ParamMap& out) const {
    for (int i = 0; i < 4; ++i) {
        const std::string p = prefix + ".enc" + std::to_string(i + 1);
        enc_[i].c1.register_params(p + ".c1", out);
        enc_[i].c2.register_params(p + ".c2", out);
    }
    for (int i = 0; i < 4; ++i) {
        const std::string p = prefix + ".dec" + std::to_string(i + 1);
        dec_[i].up.register_params(p + ".up", out);
        dec_[i].fuse.register_params(p + ".fuse", out);
    }
    head_.register_params(prefix + ".head", out);
}

namespace {

void check_frame_pair(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.defined() || !b.defined()) throw DimensionError(std::string(what) + ": undefined frame");
    check_same_shape(a, b, what);
    if (a.ndim() != 4) throw DimensionError(std::string(what) + ": expected 4D NCHW frames");
}

} // namespace

std::pair<FlowField, FlowField> predict_flow(const UNet& net, const Tensor& I_prev,
                                             const Tensor& I_next) {
    if (net.config().head_kind != HeadKind::Flow)
        throw ConfigError("predict_flow: network was not built with a flow head");
    check_frame_pair(I_prev, I_next, "predict_flow");
    Tensor raw = net.forward(concat_channels({I_prev, I_next}));
    return {FlowField{slice_channels(raw, 0, 2)}, FlowField{slice_channels(raw, 2, 4)}};
}

std::pair<Tensor, Tensor> extract_features(const UNet& net, const Tensor& I_prev,
                                           const Tensor& I_next) {
    if (net.config().head_kind != HeadKind::Feature)
        throw ConfigError("extract_features: network was not built with a feature head");
    check_frame_pair(I_prev, I_next, "extract_features");
    const int c = net.config().feature_channels;
    Tensor raw = net.forward(concat_channels({I_prev, I_next}));
    return {slice_channels(raw, 0, c), slice_channels(raw, c, 2 * c)};
}

OcclusionMap predict_occlusion(const UNet& net, const Tensor& inputs) {
    if (net.config().head_kind != HeadKind::Occlusion)
        throw ConfigError("predict_occlusion: network was not built with an occlusion head");
    return OcclusionMap{sigmoid(net.forward(inputs))};
}

} // namespace vfift
