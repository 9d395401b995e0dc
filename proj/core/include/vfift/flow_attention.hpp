#pragma once

#include "vfift/backbone.hpp"

namespace vfift {

/// Local attention geometry. heads * dk must equal the channel count of the
/// stream being attended.
struct WindowSpec {
    int L = 5; // odd window side length
    int heads = 1;
    int dk = 1;

    void validate(int channels) const; // ConfigError on violation
};

/// One query's L x L key/value window, always fully inside the image.
struct RefRegion {
    int row0 = 0, col0 = 0;       // top-left corner
    int center_i = 0, center_j = 0; // rounded, clamped flow target
};

enum class AttnVariant { FlowGuided, NoFlow, ConvReplace };

/// Round the flow-displaced position of query (i,j) to the nearest integer
/// pixel (half away from zero), clamp it into the image, and place the L x L
/// window centered there, shifted minimally so it never leaves the image.
RefRegion locate_reference(int i, int j, double dy, double dx, int H, int W, int L);

/// Q/K/V projections plus the output projection for one attended stream.
struct QkvProj {
    Tensor wq, bq, wk, bk, wv, bv; // [C,C], [C]
    Tensor wo, bo;                 // [C,C], [C]

    static QkvProj create(int channels, Rng& rng, bool zero_init = false);
    void register_params(const std::string& prefix, ParamMap& out) const;
};

/// Windowed multi-head attention where each query's key/value window is
/// located by the flow vector at that query. Output shape equals input.
/// The locating step reads flow values but is piecewise constant in them,
/// so no gradient propagates to the flow here.
Tensor flow_attention(const Tensor& X, const FlowField& flow, const WindowSpec& spec,
                      const QkvProj& proj);

/// flow_attention with the window centered at the query itself (zero flow).
Tensor noflow_attention(const Tensor& X, const WindowSpec& spec, const QkvProj& proj);

/// Shared dense weights over the flow-located window. weight is
/// [C, C*L*L] (output channel by flattened channel-row-col patch), bias [C].
Tensor conv_replace_forward(const Tensor& X, const FlowField& flow, const WindowSpec& spec,
                            const Tensor& weight, const Tensor& bias);

/// Largest usable window for a map of the given size: spec.L shrunk to the
/// largest odd value that fits both dimensions.
WindowSpec effective_spec(const WindowSpec& spec, int H, int W);

/// Transformer layer over a token stream whose channel halves belong to the
/// two input frames; each half attends under its own flow. Two residual
/// sub-layers: attention over layer-normed input, then an MLP likewise.
struct FtfaParams {
    int channels = 0;
    WindowSpec spec; // heads/dk apply per half-stream
    AttnVariant variant = AttnVariant::FlowGuided;
    LayerNormParams ln1, ln2;
    QkvProj attn_prev, attn_next;                       // attention variants
    Tensor gather_w_prev, gather_b_prev;                // ConvReplace variant
    Tensor gather_w_next, gather_b_next;
    MlpParams mlp_params;

    static FtfaParams create(int channels, const WindowSpec& spec, AttnVariant variant, Rng& rng,
                             bool zero_init = false);
    void register_params(const std::string& prefix, ParamMap& out) const;
};

Tensor ftfa_forward(const Tensor& k_in, const FlowField& f_prev, const FlowField& f_next,
                    const FtfaParams& p);

/// Downsampling transformer block: concat input with same-resolution skip
/// features, stride-2 conv, 3x3 conv + LeakyReLU, FTFA, 3x3 conv. The first
/// block takes the raw 12-channel frame stack, has no skip and no stride.
struct FtfbParams {
    bool is_first = false;
    ConvParams reduce;   // stride 2 (stride 1 for the first block)
    ConvParams conv_a;   // 3x3, followed by LeakyReLU
    FtfaParams ftfa;
    ConvParams conv_out; // 3x3, attention width channels

    static FtfbParams create(bool is_first, int in_channels, int skip_channels, int attn_width,
                             const WindowSpec& spec, AttnVariant variant, Rng& rng);
    void register_params(const std::string& prefix, ParamMap& out) const;
};

/// Flows must already be at the block's output resolution. skip must be
/// undefined for the first block and match x_in's spatial size otherwise.
Tensor ftfb_forward(const Tensor& x_in, const Tensor& skip, const FlowField& f_prev,
                    const FlowField& f_next, const FtfbParams& p);

} // namespace vfift
