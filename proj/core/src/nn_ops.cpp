#include "vfift/nn_ops.hpp"

#include <algorithm>
#include <cmath>

#include "vfift/complexity.hpp"

namespace vfift {

namespace {

struct Dims4 {
    int n, c, h, w;
};

Dims4 dims4(const Tensor& x, const char* what) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw DimensionError(std::string(what) + ": expected a 4D NCHW tensor");
    return {s[0], s[1], s[2], s[3]};
}

// The refactored backward closures all follow the same pattern: capture the
// parent nodes plus whatever forward state the formula needs, and add into
// the parents' scratch buffers.
using Node = std::shared_ptr<detail::TensorNode>;

Node fresh(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

void link(const Node& result, std::initializer_list<Tensor> inputs,
          std::function<void(const std::vector<double>&, GradTable&)> fn) {
    bool any = false;
    for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (!any) return;
    result->requires_grad = true;
    for (const auto& t : inputs)
        if (t.defined() && t.requires_grad()) result->parents.push_back(t.node());
    result->backward_fn = std::move(fn);
}

} // namespace

Tensor kaiming_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
    return Tensor::uniform(std::move(shape), -bound, bound, rng);
}

ConvParams ConvParams::create(int in_ch, int out_ch, int kernel, int stride, int padding, Rng& rng,
                              bool zero_init) {
    if (in_ch <= 0 || out_ch <= 0 || kernel <= 0 || stride <= 0 || padding < 0)
        throw ConfigError("conv: invalid parameters");
    ConvParams p;
    p.in_channels = in_ch;
    p.out_channels = out_ch;
    p.kernel = kernel;
    p.stride = stride;
    p.padding = padding;
    Shape wshape{out_ch, in_ch, kernel, kernel};
    p.weight = zero_init ? Tensor::zeros(wshape)
                         : kaiming_uniform(wshape, static_cast<int64_t>(in_ch) * kernel * kernel, rng);
    p.bias = Tensor::zeros({out_ch});
    p.weight.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    return p;
}

void ConvParams::register_params(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".weight"] = weight;
    out[prefix + ".bias"] = bias;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    Dims4 d = dims4(x, "conv2d");
    if (d.c != p.in_channels)
        throw DimensionError("conv2d: input has " + std::to_string(d.c) + " channels, expected " +
                             std::to_string(p.in_channels));
    const int k = p.kernel, stride = p.stride, pad = p.padding;
    const int oh = (d.h + 2 * pad - k) / stride + 1;
    const int ow = (d.w + 2 * pad - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: output would be empty");

    const auto& xv = x.values();
    const auto& wv = p.weight.values();
    const auto& bv = p.bias.values();
    const int ci = d.c, co = p.out_channels;
    std::vector<double> out(static_cast<size_t>(d.n) * co * oh * ow);

    int64_t macs = 0;
    for (int n = 0; n < d.n; ++n) {
        const double* xb = xv.data() + static_cast<int64_t>(n) * ci * d.h * d.w;
        double* ob = out.data() + static_cast<int64_t>(n) * co * oh * ow;
        for (int o = 0; o < co; ++o) {
            const double* wo = wv.data() + static_cast<int64_t>(o) * ci * k * k;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bv[o];
                    const int iy0 = oy * stride - pad;
                    const int ix0 = ox * stride - pad;
                    const int ky_lo = std::max(0, -iy0), ky_hi = std::min(k, d.h - iy0);
                    const int kx_lo = std::max(0, -ix0), kx_hi = std::min(k, d.w - ix0);
                    for (int c = 0; c < ci; ++c) {
                        const double* xc = xb + static_cast<int64_t>(c) * d.h * d.w;
                        const double* wc = wo + static_cast<int64_t>(c) * k * k;
                        for (int ky = ky_lo; ky < ky_hi; ++ky) {
                            const double* xrow = xc + static_cast<int64_t>(iy0 + ky) * d.w + ix0;
                            const double* wrow = wc + static_cast<int64_t>(ky) * k;
                            for (int kx = kx_lo; kx < kx_hi; ++kx) acc += xrow[kx] * wrow[kx];
                        }
                    }
                    macs += static_cast<int64_t>(ci) * (ky_hi - ky_lo) * (kx_hi - kx_lo);
                    ob[(static_cast<int64_t>(o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    count_macs(macs);

    auto result = fresh({d.n, co, oh, ow}, std::move(out));
    auto xn = x.node();
    auto wn = p.weight.node();
    auto bn = p.bias.node();
    link(result, {x, p.weight, p.bias},
         [xn, wn, bn, d, k, stride, pad, oh, ow, co](const std::vector<double>& g, GradTable& t) {
             const int ci = d.c;
             const auto& xv = xn->data;
             const auto& wv = wn->data;
             std::vector<double>* gx = xn->requires_grad ? &t.of(xn) : nullptr;
             std::vector<double>* gw = wn->requires_grad ? &t.of(wn) : nullptr;
             std::vector<double>* gb = bn->requires_grad ? &t.of(bn) : nullptr;
             for (int n = 0; n < d.n; ++n) {
                 const int64_t xoff = static_cast<int64_t>(n) * ci * d.h * d.w;
                 const int64_t ooff = static_cast<int64_t>(n) * co * oh * ow;
                 for (int o = 0; o < co; ++o) {
                     for (int oy = 0; oy < oh; ++oy) {
                         for (int ox = 0; ox < ow; ++ox) {
                             const double go = g[ooff + (static_cast<int64_t>(o) * oh + oy) * ow + ox];
                             if (go == 0.0) continue;
                             if (gb) (*gb)[o] += go;
                             const int iy0 = oy * stride - pad;
                             const int ix0 = ox * stride - pad;
                             const int ky_lo = std::max(0, -iy0), ky_hi = std::min(k, d.h - iy0);
                             const int kx_lo = std::max(0, -ix0), kx_hi = std::min(k, d.w - ix0);
                             for (int c = 0; c < ci; ++c) {
                                 const int64_t xc = xoff + static_cast<int64_t>(c) * d.h * d.w;
                                 const int64_t wc = (static_cast<int64_t>(o) * ci + c) * k * k;
                                 for (int ky = ky_lo; ky < ky_hi; ++ky) {
                                     const int64_t xrow = xc + static_cast<int64_t>(iy0 + ky) * d.w + ix0;
                                     const int64_t wrow = wc + static_cast<int64_t>(ky) * k;
                                     for (int kx = kx_lo; kx < kx_hi; ++kx) {
                                         if (gx) (*gx)[xrow + kx] += go * wv[wrow + kx];
                                         if (gw) (*gw)[wrow + kx] += go * xv[xrow + kx];
                                     }
                                 }
                             }
                         }
                     }
                 }
             }
         });
    return Tensor::wrap(result);
}

Tensor conv_transpose2d(const Tensor& x, const ConvParams& p) {
    Dims4 d = dims4(x, "conv_transpose2d");
    if (d.c != p.in_channels)
        throw DimensionError("conv_transpose2d: input has " + std::to_string(d.c) +
                             " channels, expected " + std::to_string(p.in_channels));
    const int k = p.kernel, stride = p.stride, pad = p.padding;
    const int oh = (d.h - 1) * stride - 2 * pad + k;
    const int ow = (d.w - 1) * stride - 2 * pad + k;
    if (stride != 2 || oh != 2 * d.h || ow != 2 * d.w)
        throw ConfigError("conv_transpose2d: configuration must produce exactly 2x output (stride 2)");

    const auto& xv = x.values();
    const auto& wv = p.weight.values();
    const auto& bv = p.bias.values();
    const int ci = d.c, co = p.out_channels;
    std::vector<double> out(static_cast<size_t>(d.n) * co * oh * ow);
    for (int n = 0; n < d.n; ++n)
        for (int o = 0; o < co; ++o)
            std::fill_n(out.begin() + (static_cast<int64_t>(n) * co + o) * oh * ow, oh * ow, bv[o]);

    int64_t macs = 0;
    for (int n = 0; n < d.n; ++n) {
        const int64_t xoff = static_cast<int64_t>(n) * ci * d.h * d.w;
        const int64_t ooff = static_cast<int64_t>(n) * co * oh * ow;
        for (int c = 0; c < ci; ++c) {
            for (int iy = 0; iy < d.h; ++iy) {
                for (int ix = 0; ix < d.w; ++ix) {
                    const double xval = xv[xoff + (static_cast<int64_t>(c) * d.h + iy) * d.w + ix];
                    for (int o = 0; o < co; ++o) {
                        const int64_t wc = (static_cast<int64_t>(o) * ci + c) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            const int oy = iy * stride + ky - pad;
                            if (oy < 0 || oy >= oh) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ox = ix * stride + kx - pad;
                                if (ox < 0 || ox >= ow) continue;
                                out[ooff + (static_cast<int64_t>(o) * oh + oy) * ow + ox] +=
                                    xval * wv[wc + ky * k + kx];
                                ++macs;
                            }
                        }
                    }
                }
            }
        }
    }
    count_macs(macs);

    auto result = fresh({d.n, co, oh, ow}, std::move(out));
    auto xn = x.node();
    auto wn = p.weight.node();
    auto bn = p.bias.node();
    link(result, {x, p.weight, p.bias},
         [xn, wn, bn, d, k, stride, pad, oh, ow, co](const std::vector<double>& g, GradTable& t) {
             const int ci = d.c;
             const auto& xv = xn->data;
             const auto& wv = wn->data;
             std::vector<double>* gx = xn->requires_grad ? &t.of(xn) : nullptr;
             std::vector<double>* gw = wn->requires_grad ? &t.of(wn) : nullptr;
             std::vector<double>* gb = bn->requires_grad ? &t.of(bn) : nullptr;
             if (gb) {
                 for (int n = 0; n < d.n; ++n)
                     for (int o = 0; o < co; ++o) {
                         const double* go = g.data() + (static_cast<int64_t>(n) * co + o) * oh * ow;
                         double acc = 0.0;
                         for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) acc += go[i];
                         (*gb)[o] += acc;
                     }
             }
             for (int n = 0; n < d.n; ++n) {
                 const int64_t xoff = static_cast<int64_t>(n) * ci * d.h * d.w;
                 const int64_t ooff = static_cast<int64_t>(n) * co * oh * ow;
                 for (int c = 0; c < ci; ++c) {
                     for (int iy = 0; iy < d.h; ++iy) {
                         for (int ix = 0; ix < d.w; ++ix) {
                             const int64_t xi = xoff + (static_cast<int64_t>(c) * d.h + iy) * d.w + ix;
                             const double xval = xv[xi];
                             double gacc = 0.0;
                             for (int o = 0; o < co; ++o) {
                                 const int64_t wc = (static_cast<int64_t>(o) * ci + c) * k * k;
                                 for (int ky = 0; ky < k; ++ky) {
                                     const int oy = iy * stride + ky - pad;
                                     if (oy < 0 || oy >= oh) continue;
                                     for (int kx = 0; kx < k; ++kx) {
                                         const int ox = ix * stride + kx - pad;
                                         if (ox < 0 || ox >= ow) continue;
                                         const double go =
                                             g[ooff + (static_cast<int64_t>(o) * oh + oy) * ow + ox];
                                         gacc += go * wv[wc + ky * k + kx];
                                         if (gw) (*gw)[wc + ky * k + kx] += go * xval;
                                     }
                                 }
                             }
                             if (gx) (*gx)[xi] += gacc;
                         }
                     }
                 }
             }
         });
    return Tensor::wrap(result);
}

Tensor avg_pool2(const Tensor& x) {
    Dims4 d = dims4(x, "avg_pool2");
    if (d.h % 2 != 0 || d.w % 2 != 0)
        throw DimensionError("avg_pool2: H and W must be even, got " + std::to_string(d.h) + "x" +
                             std::to_string(d.w));
    const int oh = d.h / 2, ow = d.w / 2;
    const auto& xv = x.values();
    std::vector<double> out(static_cast<size_t>(d.n) * d.c * oh * ow);
    for (int nc = 0; nc < d.n * d.c; ++nc) {
        const double* xp = xv.data() + static_cast<int64_t>(nc) * d.h * d.w;
        double* op = out.data() + static_cast<int64_t>(nc) * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                const double* r0 = xp + (2 * oy) * d.w + 2 * ox;
                const double* r1 = r0 + d.w;
                op[oy * ow + ox] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
            }
    }
    auto result = fresh({d.n, d.c, oh, ow}, std::move(out));
    auto xn = x.node();
    link(result, {x}, [xn, d, oh, ow](const std::vector<double>& g, GradTable& t) {
        auto& gx = t.of(xn);
        for (int nc = 0; nc < d.n * d.c; ++nc) {
            double* gxp = gx.data() + static_cast<int64_t>(nc) * d.h * d.w;
            const double* gp = g.data() + static_cast<int64_t>(nc) * oh * ow;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double v = 0.25 * gp[oy * ow + ox];
                    double* r0 = gxp + (2 * oy) * d.w + 2 * ox;
                    double* r1 = r0 + d.w;
                    r0[0] += v;
                    r0[1] += v;
                    r1[0] += v;
                    r1[1] += v;
                }
        }
    });
    return Tensor::wrap(result);
}

Tensor leaky_relu(const Tensor& x, double slope) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] >= 0.0 ? xv[i] : slope * xv[i];
    auto result = fresh(x.shape(), std::move(out));
    auto xn = x.node();
    link(result, {x}, [xn, slope](const std::vector<double>& g, GradTable& t) {
        auto& gx = t.of(xn);
        const auto& xv = xn->data;
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : slope);
    });
    return Tensor::wrap(result);
}

Tensor sigmoid(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    auto result = fresh(x.shape(), std::move(out));
    auto xn = x.node();
    // y(1-y) form; the closure must copy the saved output rather than hold
    // the result node, or the node would own itself through backward_fn and
    // the graph would never free.
    link(result, {x}, [xn, y = result->data](const std::vector<double>& g, GradTable& t) {
        auto& gx = t.of(xn);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
    });
    return Tensor::wrap(result);
}

LayerNormParams LayerNormParams::create(int channels) {
    if (channels <= 0) throw ConfigError("layer_norm: channels must be positive");
    LayerNormParams p;
    p.channels = channels;
    p.gamma = Tensor::ones({channels});
    p.beta = Tensor::zeros({channels});
    p.gamma.set_requires_grad(true);
    p.beta.set_requires_grad(true);
    return p;
}

void LayerNormParams::register_params(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".gamma"] = gamma;
    out[prefix + ".beta"] = beta;
}

namespace {

// Positions x channel stride view of a tensor normalized over channels:
// [N,C,H,W] has N*H*W positions with channel stride H*W; [M,C] has M
// positions with stride 1.
struct ChanView {
    int64_t positions;
    int64_t chan_stride;
    int channels;
    // flat index of (position, channel)
    int64_t operator()(int64_t pos, int c) const {
        if (chan_stride == 1) return pos * channels + c;
        // pos = n*HW + hw
        const int64_t n = pos / chan_stride_sq, hw = pos % chan_stride_sq;
        return (n * channels + c) * chan_stride_sq + hw;
    }
    int64_t chan_stride_sq; // H*W for 4D
};

ChanView chan_view(const Tensor& x, int expected_c, const char* what) {
    const Shape& s = x.shape();
    if (s.size() == 4) {
        if (s[1] != expected_c)
            throw DimensionError(std::string(what) + ": channel mismatch");
        int64_t hw = static_cast<int64_t>(s[2]) * s[3];
        return {static_cast<int64_t>(s[0]) * hw, hw, s[1], hw};
    }
    if (s.size() == 2) {
        if (s[1] != expected_c)
            throw DimensionError(std::string(what) + ": channel mismatch");
        return {s[0], 1, s[1], 1};
    }
    throw DimensionError(std::string(what) + ": expected [N,C,H,W] or [M,C]");
}

} // namespace

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
    if (p.epsilon <= 0.0) throw ConfigError("layer_norm: epsilon must be positive");
    ChanView v = chan_view(x, p.channels, "layer_norm");
    const auto& xv = x.values();
    const auto& gamma = p.gamma.values();
    const auto& beta = p.beta.values();
    const int C = v.channels;
    std::vector<double> out(xv.size());
    std::vector<double> means(v.positions), inv_stds(v.positions);
    for (int64_t pos = 0; pos < v.positions; ++pos) {
        double m = 0.0;
        for (int c = 0; c < C; ++c) m += xv[v(pos, c)];
        m /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            double dxc = xv[v(pos, c)] - m;
            var += dxc * dxc;
        }
        var /= C;
        double inv = 1.0 / std::sqrt(var + p.epsilon);
        means[pos] = m;
        inv_stds[pos] = inv;
        for (int c = 0; c < C; ++c)
            out[v(pos, c)] = (xv[v(pos, c)] - m) * inv * gamma[c] + beta[c];
    }
    auto result = fresh(x.shape(), std::move(out));
    auto xn = x.node();
    auto gn = p.gamma.node();
    auto bn = p.beta.node();
    link(result, {x, p.gamma, p.beta},
         [xn, gn, bn, v, means, inv_stds](const std::vector<double>& g, GradTable& t) {
             const int C = v.channels;
             const auto& xv = xn->data;
             const auto& gamma = gn->data;
             std::vector<double>* gx = xn->requires_grad ? &t.of(xn) : nullptr;
             std::vector<double>* gg = gn->requires_grad ? &t.of(gn) : nullptr;
             std::vector<double>* gb = bn->requires_grad ? &t.of(bn) : nullptr;
             for (int64_t pos = 0; pos < v.positions; ++pos) {
                 const double m = means[pos], inv = inv_stds[pos];
                 // dL/dxhat, plus the two reduction terms of the LN backward
                 double sum_gh = 0.0, sum_gh_xhat = 0.0;
                 for (int c = 0; c < C; ++c) {
                     const int64_t i = v(pos, c);
                     const double xhat = (xv[i] - m) * inv;
                     const double gh = g[i] * gamma[c];
                     sum_gh += gh;
                     sum_gh_xhat += gh * xhat;
                     if (gg) (*gg)[c] += g[i] * xhat;
                     if (gb) (*gb)[c] += g[i];
                 }
                 if (gx) {
                     for (int c = 0; c < C; ++c) {
                         const int64_t i = v(pos, c);
                         const double xhat = (xv[i] - m) * inv;
                         const double gh = g[i] * gamma[c];
                         (*gx)[i] += inv * (gh - (sum_gh + xhat * sum_gh_xhat) / C);
                     }
                 }
             }
         });
    return Tensor::wrap(result);
}

Tensor softmax(const Tensor& x, int axis) {
    const Shape& s = x.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw DimensionError("softmax: axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
    const int64_t len = s[axis];

    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            double mx = xv[base];
            for (int64_t j = 1; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
            double denom = 0.0;
            for (int64_t j = 0; j < len; ++j) {
                double e = std::exp(xv[base + j * inner] - mx);
                out[base + j * inner] = e;
                denom += e;
            }
            for (int64_t j = 0; j < len; ++j) out[base + j * inner] /= denom;
        }
    }
    auto result = fresh(s, std::move(out));
    auto xn = x.node();
    auto rn = result;
    link(result, {x}, [xn, rn, outer, inner, len](const std::vector<double>& g, GradTable& t) {
        auto& gx = t.of(xn);
        const auto& y = rn->data;
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * len * inner + in;
                double dot = 0.0;
                for (int64_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
                for (int64_t j = 0; j < len; ++j) {
                    const int64_t i = base + j * inner;
                    gx[i] += y[i] * (g[i] - dot);
                }
            }
        }
    });
    return Tensor::wrap(result);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const Shape& ws = weight.shape();
    if (ws.size() != 2) throw DimensionError("linear: weight must be [Cout,Cin]");
    const int cout = ws[0], cin = ws[1];
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout))
        throw DimensionError("linear: bias must be [Cout]");

    const Shape& xs = x.shape();
    Shape oshape;
    int64_t positions, chan_stride;
    if (xs.size() == 4) {
        if (xs[1] != cin) throw DimensionError("linear: input channel mismatch");
        oshape = {xs[0], cout, xs[2], xs[3]};
        chan_stride = static_cast<int64_t>(xs[2]) * xs[3];
        positions = static_cast<int64_t>(xs[0]) * chan_stride;
    } else if (xs.size() == 2) {
        if (xs[1] != cin) throw DimensionError("linear: input channel mismatch");
        oshape = {xs[0], cout};
        chan_stride = 1;
        positions = xs[0];
    } else {
        throw DimensionError("linear: expected [N,C,H,W] or [M,C]");
    }

    const auto& xv = x.values();
    const auto& wv = weight.values();
    const double* bv = bias.defined() ? bias.values().data() : nullptr;
    std::vector<double> out(static_cast<size_t>(positions) * cout);

    auto x_index = [chan_stride, cin](int64_t pos, int c) -> int64_t {
        if (chan_stride == 1) return pos * cin + c;
        const int64_t n = pos / chan_stride, hw = pos % chan_stride;
        return (n * cin + c) * chan_stride + hw;
    };
    auto o_index = [chan_stride, cout](int64_t pos, int c) -> int64_t {
        if (chan_stride == 1) return pos * cout + c;
        const int64_t n = pos / chan_stride, hw = pos % chan_stride;
        return (n * cout + c) * chan_stride + hw;
    };

    for (int64_t pos = 0; pos < positions; ++pos) {
        for (int o = 0; o < cout; ++o) {
            double acc = bv ? bv[o] : 0.0;
            const double* wrow = wv.data() + static_cast<int64_t>(o) * cin;
            for (int c = 0; c < cin; ++c) acc += wrow[c] * xv[x_index(pos, c)];
            out[o_index(pos, o)] = acc;
        }
    }
    count_macs(positions * cout * cin);

    auto result = fresh(std::move(oshape), std::move(out));
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    link(result, {x, weight, bias},
         [xn, wn, bn, positions, cin, cout, x_index, o_index](const std::vector<double>& g,
                                                              GradTable& t) {
             const auto& xv = xn->data;
             const auto& wv = wn->data;
             std::vector<double>* gx = xn->requires_grad ? &t.of(xn) : nullptr;
             std::vector<double>* gw = wn->requires_grad ? &t.of(wn) : nullptr;
             std::vector<double>* gb = (bn && bn->requires_grad) ? &t.of(bn) : nullptr;
             for (int64_t pos = 0; pos < positions; ++pos) {
                 for (int o = 0; o < cout; ++o) {
                     const double go = g[o_index(pos, o)];
                     if (go == 0.0) continue;
                     if (gb) (*gb)[o] += go;
                     const double* wrow = wv.data() + static_cast<int64_t>(o) * cin;
                     double* gwrow = gw ? gw->data() + static_cast<int64_t>(o) * cin : nullptr;
                     for (int c = 0; c < cin; ++c) {
                         const int64_t xi = x_index(pos, c);
                         if (gx) (*gx)[xi] += go * wrow[c];
                         if (gwrow) gwrow[c] += go * xv[xi];
                     }
                 }
             }
         });
    return Tensor::wrap(result);
}

MlpParams MlpParams::create(int channels, double hidden_ratio, Rng& rng, bool zero_init) {
    if (channels <= 0 || hidden_ratio <= 0.0) throw ConfigError("mlp: invalid config");
    const int hidden = std::max(1, static_cast<int>(channels * hidden_ratio));
    MlpParams p;
    p.w1 = zero_init ? Tensor::zeros({hidden, channels}) : kaiming_uniform({hidden, channels}, channels, rng);
    p.b1 = Tensor::zeros({hidden});
    p.w2 = zero_init ? Tensor::zeros({channels, hidden}) : kaiming_uniform({channels, hidden}, hidden, rng);
    p.b2 = Tensor::zeros({channels});
    p.w1.set_requires_grad(true);
    p.b1.set_requires_grad(true);
    p.w2.set_requires_grad(true);
    p.b2.set_requires_grad(true);
    return p;
}

void MlpParams::register_params(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".w1"] = w1;
    out[prefix + ".b1"] = b1;
    out[prefix + ".w2"] = w2;
    out[prefix + ".b2"] = b2;
}

Tensor mlp(const Tensor& x, const MlpParams& p, double slope) {
    return linear(leaky_relu(linear(x, p.w1, p.b1), slope), p.w2, p.b2);
}

} // namespace vfift
