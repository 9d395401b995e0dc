#pragma once

#include <array>
#include <utility>

#include "vfift/nn_ops.hpp"

namespace vfift {

/// Per-pixel motion vectors, [N,2,H,W]. Channel 0 is the vertical
/// displacement dy (rows), channel 1 the horizontal displacement dx (cols),
/// both in pixels, pointing from a target-frame pixel to its source location
/// in the reference frame.
struct FlowField {
    Tensor data;
};

/// Per-pixel visibility weight for the backward-warped previous frame,
/// [N,1,H,W], values in (0,1) by construction (sigmoid output).
struct OcclusionMap {
    Tensor data;
};

enum class HeadKind { Flow, Feature, Occlusion };

struct UNetConfig {
    std::array<int, 4> encoder_channels{32, 64, 128, 256};
    HeadKind head_kind = HeadKind::Flow;
    int feature_channels = 16; // Feature head emits 2x this many channels
    int in_channels = 6;       // 12 for the occlusion net

    void validate() const; // ConfigError on violation
    int head_out_channels() const;
};

/// Encoder-decoder trunk shared by the flow, feature and occlusion networks;
/// only the final layer differs. Four encoder stages (two 3x3 convs +
/// LeakyReLU each, then 2x average pooling), four decoder stages (2x
/// transposed conv, concat of the same-resolution encoder map, 3x3 conv +
/// LeakyReLU), then a plain 3x3 head conv.
class UNet {
public:
    UNet() = default;
    UNet(const UNetConfig& cfg, Rng& rng);

    /// Input [N, in_channels, H, W] with H, W divisible by 16; output keeps
    /// the spatial size and has head_out_channels() channels.
    Tensor forward(const Tensor& x) const;

    void register_params(const std::string& prefix, ParamMap& out) const;
    const UNetConfig& config() const { return cfg_; }

private:
    struct EncStage {
        ConvParams c1, c2;
    };
    struct DecStage {
        ConvParams up, fuse;
    };

    UNetConfig cfg_;
    std::array<EncStage, 4> enc_;
    std::array<DecStage, 4> dec_;
    ConvParams head_;
};

/// Both flows at full resolution; the head is a plain convolution, so flow
/// values are unbounded reals. Channels 0..1 of the head become F_prev,
/// channels 2..3 become F_next.
std::pair<FlowField, FlowField> predict_flow(const UNet& net, const Tensor& I_prev,
                                             const Tensor& I_next);

/// Feature maps (M_prev, M_next), feature_channels each; the head's 2C
/// output splits into halves, first half belonging to the earlier frame.
std::pair<Tensor, Tensor> extract_features(const UNet& net, const Tensor& I_prev,
                                           const Tensor& I_next);

/// Sigmoid-activated single-channel map; the complementary weight for the
/// later frame is 1 - O_prev, formed downstream.
OcclusionMap predict_occlusion(const UNet& net, const Tensor& inputs);

} // namespace vfift
