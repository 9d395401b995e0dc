#pragma once

#include "vfift/tensor.hpp"

namespace vfift {

/// Fan-in scaled uniform init (bound sqrt(6/fan_in)); the library default
/// for conv and linear weights.
Tensor kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng);

struct ConvParams {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int padding = 1;
    Tensor weight; // [out, in, k, k]
    Tensor bias;   // [out]

    static ConvParams create(int in_ch, int out_ch, int kernel, int stride, int padding, Rng& rng,
                             bool zero_init = false);
    void register_params(const std::string& prefix, ParamMap& out) const;
};

/// Cross-correlation (no kernel flip), implicit zero padding.
/// Output spatial size: floor((H + 2 pad - k)/stride) + 1.
Tensor conv2d(const Tensor& x, const ConvParams& p);

/// Transposed convolution, the adjoint of conv2d. Restricted to stride 2
/// configurations that produce exactly 2x the input resolution.
Tensor conv_transpose2d(const Tensor& x, const ConvParams& p);

/// 2x2 block mean, stride 2. Requires even H and W.
Tensor avg_pool2(const Tensor& x);

Tensor leaky_relu(const Tensor& x, double slope = 0.1);
Tensor sigmoid(const Tensor& x);

struct LayerNormParams {
    int channels = 0;
    Tensor gamma; // [C]
    Tensor beta;  // [C]
    double epsilon = 1e-5;

    static LayerNormParams create(int channels);
    void register_params(const std::string& prefix, ParamMap& out) const;
};

/// Normalizes the channel vector at every position to zero mean and unit
/// variance, then applies gamma/beta. Accepts [N,C,H,W] (over axis 1) or
/// [M,C] (over axis 1).
Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// y = x W^T + b along the channel axis: [N,Cin,H,W] -> [N,Cout,H,W] with
/// W [Cout,Cin], or [M,Cin] -> [M,Cout]. Bias optional (undefined Tensor).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct MlpParams {
    Tensor w1, b1; // [hidden, C], [hidden]
    Tensor w2, b2; // [C, hidden], [C]

    static MlpParams create(int channels, double hidden_ratio, Rng& rng, bool zero_init = false);
    void register_params(const std::string& prefix, ParamMap& out) const;
};

/// linear -> LeakyReLU -> linear; channel count preserved end-to-end.
Tensor mlp(const Tensor& x, const MlpParams& p, double slope = 0.1);

} // namespace vfift
