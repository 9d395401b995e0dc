#pragma once

#include <string>
#include <vector>

#include "vfift/flow_attention.hpp"

namespace vfift {

struct ModelConfig {
    int window = 5; // L
    int heads = 4;
    int attn_width = 16;
    int feature_channels = 16;
    std::array<int, 4> encoder_channels{32, 64, 128, 256};
    int num_scales = 4; // one full-resolution block + (num_scales-1) downsampling blocks
    AttnVariant variant = AttnVariant::FlowGuided;
    double lambda_warp = 1.0;
    double lambda_rec = 0.5;

    void validate() const; // ConfigError on violation

    /// key = value text, one field per line; parse accepts '#' comments and
    /// ignores unknown keys' absence (missing keys keep defaults).
    std::string to_text() const;
    static ModelConfig from_text(const std::string& text);
};

struct InterpolationOutput {
    Tensor I_t;   // O_t + delta, unclamped
    Tensor O_t;   // occlusion-blended warped frames
    Tensor delta; // predicted residual
    Tensor warped_prev, warped_next;
    FlowField flow_prev, flow_next;
    OcclusionMap occlusion;
};

/// output(i,j) = bilinear sample of frame at (i+dy, j+dx); out-of-range
/// sample coordinates clamp to the border. Differentiable in both frame and
/// flow (flow gradient is zero where a coordinate is clamped).
Tensor backward_warp(const Tensor& frame, const FlowField& flow);

/// Average-pool the field by a power-of-two factor and rescale the vectors
/// into the coarser pixel grid.
FlowField downscale_flow(const FlowField& flow, int factor);

/// O_prev * warped_prev + (1 - O_prev) * warped_next; weights sum to 1.
Tensor occlusion_blend(const Tensor& warped_prev, const Tensor& warped_next,
                       const OcclusionMap& O_prev);

/// Mean L1 distance between the ground truth and the average of the two
/// warped frames.
Tensor loss_warp(const Tensor& I_gt, const Tensor& warped_prev, const Tensor& warped_next);

/// Mean L1 reconstruction error.
Tensor loss_rec(const Tensor& I_gt, const Tensor& I_t);

/// lambda_warp * loss_warp + lambda_rec * loss_rec.
Tensor total_loss(const Tensor& I_gt, const InterpolationOutput& out, const ModelConfig& cfg);

/// The full interpolation model: flow / feature / occlusion networks, the
/// multi-scale transformer trunk, and the upsampling decoder that emits the
/// residual. Parameter handles are shared with the returned map, so an
/// optimizer stepping the map updates the model.
class VfiftModel {
public:
    VfiftModel() = default;
    VfiftModel(const ModelConfig& cfg, Rng& rng);

    /// Frames [N,3,H,W] in [0,1], H and W divisible by 16.
    InterpolationOutput forward(const Tensor& I_prev, const Tensor& I_next) const;

    ParamMap params() const;
    const ModelConfig& config() const { return cfg_; }

private:
    struct UpStage {
        ConvParams up, fuse;
    };

    ModelConfig cfg_;
    UNet flow_net_, feature_net_, occlusion_net_;
    std::vector<FtfbParams> blocks_;
    std::vector<UpStage> up_stages_;
    ConvParams delta_head_; // zero-initialized, so an untrained model emits no residual
};

} // namespace vfift
