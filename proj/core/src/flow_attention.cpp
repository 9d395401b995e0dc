#include "vfift/flow_attention.hpp"

#include <algorithm>
#include <cmath>

#include "vfift/complexity.hpp"

namespace vfift {

void WindowSpec::validate(int channels) const {
    if (L < 1 || L % 2 == 0) throw ConfigError("window: L must be odd and >= 1");
    if (heads < 1) throw ConfigError("window: heads must be >= 1");
    if (dk < 1 || heads * dk != channels)
        throw ConfigError("window: heads*dk must equal the attended channel count (" +
                          std::to_string(heads) + "*" + std::to_string(dk) +
                          " != " + std::to_string(channels) + ")");
}

RefRegion locate_reference(int i, int j, double dy, double dx, int H, int W, int L) {
    if (L < 1 || L % 2 == 0) throw ConfigError("locate_reference: L must be odd and >= 1");
    if (L > H || L > W)
        throw ConfigError("locate_reference: window " + std::to_string(L) +
                          " exceeds image " + std::to_string(H) + "x" + std::to_string(W));
    RefRegion r;
    r.center_i = static_cast<int>(std::clamp(std::round(i + dy), 0.0, H - 1.0));
    r.center_j = static_cast<int>(std::clamp(std::round(j + dx), 0.0, W - 1.0));
    r.row0 = std::clamp(r.center_i - (L - 1) / 2, 0, H - L);
    r.col0 = std::clamp(r.center_j - (L - 1) / 2, 0, W - L);
    return r;
}

WindowSpec effective_spec(const WindowSpec& spec, int H, int W) {
    WindowSpec e = spec;
    e.L = std::min({spec.L, H, W});
    if (e.L % 2 == 0) --e.L;
    if (e.L < 1) e.L = 1;
    return e;
}

QkvProj QkvProj::create(int channels, Rng& rng, bool zero_init) {
    auto weight = [&] {
        return zero_init ? Tensor::zeros({channels, channels})
                         : kaiming_uniform({channels, channels}, channels, rng);
    };
    QkvProj p;
    p.wq = weight();
    p.wk = weight();
    p.wv = weight();
    p.wo = weight();
    p.bq = Tensor::zeros({channels});
    p.bk = Tensor::zeros({channels});
    p.bv = Tensor::zeros({channels});
    p.bo = Tensor::zeros({channels});
    for (Tensor* t : {&p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo})
        t->set_requires_grad(true);
    return p;
}

void QkvProj::register_params(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".wq"] = wq;
    out[prefix + ".bq"] = bq;
    out[prefix + ".wk"] = wk;
    out[prefix + ".bk"] = bk;
    out[prefix + ".wv"] = wv;
    out[prefix + ".bv"] = bv;
    out[prefix + ".wo"] = wo;
    out[prefix + ".bo"] = bo;
}

namespace {

using Node = std::shared_ptr<detail::TensorNode>;

void check_flow_matches(const Tensor& X, const FlowField& flow, const char* what) {
    const Shape& fs = flow.data.shape();
    if (fs.size() != 4 || fs[1] != 2)
        throw DimensionError(std::string(what) + ": flow must be [N,2,H,W]");
    if (fs[0] != X.dim(0) || fs[2] != X.dim(2) || fs[3] != X.dim(3))
        throw DimensionError(std::string(what) + ": flow spatial dims must match the feature map");
}

/// Multi-head window attention over precomputed Q/K/V, one tape node.
/// flow_data is the raw [N,2,H,W] buffer or nullptr for zero flow.
Tensor window_attention_core(const Tensor& Q, const Tensor& K, const Tensor& V,
                             const std::vector<double>* flow_data, const WindowSpec& spec) {
    const Shape& s = Q.shape();
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    spec.validate(C);
    const int L = spec.L, heads = spec.heads, dk = spec.dk;
    const int win = L * L;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    const int64_t hw = static_cast<int64_t>(H) * W;

    const auto& qv = Q.values();
    const auto& kv = K.values();
    const auto& vv = V.values();
    std::vector<double> out(qv.size());
    // Saved for backward: window origins per pixel, softmax weights per
    // (pixel, head, window slot).
    auto origins = std::make_shared<std::vector<int>>(static_cast<size_t>(N) * hw * 2);
    auto weights = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * hw * heads * win);

    std::vector<double> scores(win);
    for (int n = 0; n < N; ++n) {
        const int64_t nbase = static_cast<int64_t>(n) * C * hw;
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                const int64_t pix = n * hw + static_cast<int64_t>(i) * W + j;
                double dy = 0.0, dx = 0.0;
                if (flow_data) {
                    dy = (*flow_data)[static_cast<int64_t>(n) * 2 * hw + static_cast<int64_t>(i) * W + j];
                    dx = (*flow_data)[static_cast<int64_t>(n) * 2 * hw + hw + static_cast<int64_t>(i) * W + j];
                }
                const RefRegion reg = locate_reference(i, j, dy, dx, H, W, L);
                (*origins)[pix * 2] = reg.row0;
                (*origins)[pix * 2 + 1] = reg.col0;
                for (int h = 0; h < heads; ++h) {
                    const int c0 = h * dk;
                    // scores over the window, then a stable softmax
                    for (int p = 0; p < win; ++p) {
                        const int r = reg.row0 + p / L, c = reg.col0 + p % L;
                        const int64_t koff = nbase + static_cast<int64_t>(c0) * hw +
                                             static_cast<int64_t>(r) * W + c;
                        const int64_t qoff = nbase + static_cast<int64_t>(c0) * hw +
                                             static_cast<int64_t>(i) * W + j;
                        double acc = 0.0;
                        for (int d = 0; d < dk; ++d) acc += qv[qoff + d * hw] * kv[koff + d * hw];
                        scores[p] = acc * inv_sqrt_dk;
                    }
                    double mx = scores[0];
                    for (int p = 1; p < win; ++p) mx = std::max(mx, scores[p]);
                    double denom = 0.0;
                    double* wrow = weights->data() + (pix * heads + h) * win;
                    for (int p = 0; p < win; ++p) {
                        wrow[p] = std::exp(scores[p] - mx);
                        denom += wrow[p];
                    }
                    for (int p = 0; p < win; ++p) wrow[p] /= denom;
                    for (int d = 0; d < dk; ++d) {
                        const int64_t ch = nbase + static_cast<int64_t>(c0 + d) * hw;
                        double acc = 0.0;
                        for (int p = 0; p < win; ++p) {
                            const int r = reg.row0 + p / L, c = reg.col0 + p % L;
                            acc += wrow[p] * vv[ch + static_cast<int64_t>(r) * W + c];
                        }
                        out[ch + static_cast<int64_t>(i) * W + j] = acc;
                    }
                }
            }
        }
    }
    count_macs(2 * static_cast<int64_t>(N) * hw * C * win);

    auto result = std::make_shared<detail::TensorNode>();
    result->shape = s;
    result->data = std::move(out);
    const bool needs = Q.requires_grad() || K.requires_grad() || V.requires_grad();
    if (needs) {
        result->requires_grad = true;
        auto qn = Q.node();
        auto kn = K.node();
        auto vn = V.node();
        for (const auto& t : {Q, K, V})
            if (t.requires_grad()) result->parents.push_back(t.node());
        result->backward_fn = [qn, kn, vn, origins, weights, N, C, H, W, L, heads, dk,
                               inv_sqrt_dk](const std::vector<double>& g, GradTable& t) {
            const int win = L * L;
            const int64_t hw = static_cast<int64_t>(H) * W;
            const auto& qv = qn->data;
            const auto& kv = kn->data;
            const auto& vv = vn->data;
            std::vector<double>* gq = qn->requires_grad ? &t.of(qn) : nullptr;
            std::vector<double>* gk = kn->requires_grad ? &t.of(kn) : nullptr;
            std::vector<double>* gv = vn->requires_grad ? &t.of(vn) : nullptr;
            std::vector<double> ds(win);
            for (int n = 0; n < N; ++n) {
                const int64_t nbase = static_cast<int64_t>(n) * C * hw;
                for (int i = 0; i < H; ++i) {
                    for (int j = 0; j < W; ++j) {
                        const int64_t pix = n * hw + static_cast<int64_t>(i) * W + j;
                        const int row0 = (*origins)[pix * 2], col0 = (*origins)[pix * 2 + 1];
                        for (int h = 0; h < heads; ++h) {
                            const int c0 = h * dk;
                            const double* wrow = weights->data() + (pix * heads + h) * win;
                            // dV and the per-slot score gradients
                            double dot = 0.0;
                            for (int p = 0; p < win; ++p) {
                                const int r = row0 + p / L, c = col0 + p % L;
                                double acc = 0.0;
                                for (int d = 0; d < dk; ++d) {
                                    const int64_t ch = nbase + static_cast<int64_t>(c0 + d) * hw;
                                    const double go = g[ch + static_cast<int64_t>(i) * W + j];
                                    acc += go * vv[ch + static_cast<int64_t>(r) * W + c];
                                    if (gv)
                                        (*gv)[ch + static_cast<int64_t>(r) * W + c] += wrow[p] * go;
                                }
                                ds[p] = acc;
                            }
                            for (int p = 0; p < win; ++p) dot += ds[p] * wrow[p];
                            // softmax backward, then into Q and K
                            for (int p = 0; p < win; ++p) {
                                const double dz = wrow[p] * (ds[p] - dot) * inv_sqrt_dk;
                                if (dz == 0.0) continue;
                                const int r = row0 + p / L, c = col0 + p % L;
                                for (int d = 0; d < dk; ++d) {
                                    const int64_t ch = nbase + static_cast<int64_t>(c0 + d) * hw;
                                    const int64_t qi = ch + static_cast<int64_t>(i) * W + j;
                                    const int64_t ki = ch + static_cast<int64_t>(r) * W + c;
                                    if (gq) (*gq)[qi] += dz * kv[ki];
                                    if (gk) (*gk)[ki] += dz * qv[qi];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor::wrap(result);
}

Tensor attention_common(const Tensor& X, const std::vector<double>* flow_data,
                        const WindowSpec& spec, const QkvProj& proj) {
    if (X.ndim() != 4) throw DimensionError("flow_attention: expected a 4D NCHW input");
    Tensor Q = linear(X, proj.wq, proj.bq);
    Tensor K = linear(X, proj.wk, proj.bk);
    Tensor V = linear(X, proj.wv, proj.bv);
    Tensor attended = window_attention_core(Q, K, V, flow_data, spec);
    return linear(attended, proj.wo, proj.bo);
}

} // namespace

Tensor flow_attention(const Tensor& X, const FlowField& flow, const WindowSpec& spec,
                      const QkvProj& proj) {
    check_flow_matches(X, flow, "flow_attention");
    return attention_common(X, &flow.data.values(), spec, proj);
}

Tensor noflow_attention(const Tensor& X, const WindowSpec& spec, const QkvProj& proj) {
    return attention_common(X, nullptr, spec, proj);
}

Tensor conv_replace_forward(const Tensor& X, const FlowField& flow, const WindowSpec& spec,
                            const Tensor& weight, const Tensor& bias) {
    if (X.ndim() != 4) throw DimensionError("conv_replace: expected a 4D NCHW input");
    check_flow_matches(X, flow, "conv_replace");
    const Shape& s = X.shape();
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const int L = spec.L, win = L * L;
    if (weight.ndim() != 2 || weight.dim(0) != C || weight.dim(1) != C * win)
        throw DimensionError("conv_replace: weight must be [C, C*L*L]");
    if (bias.ndim() != 1 || bias.dim(0) != C)
        throw DimensionError("conv_replace: bias must be [C]");
    const int64_t hw = static_cast<int64_t>(H) * W;

    const auto& xv = X.values();
    const auto& wv = weight.values();
    const auto& bv = bias.values();
    const auto& fv = flow.data.values();
    std::vector<double> out(xv.size());
    auto origins = std::make_shared<std::vector<int>>(static_cast<size_t>(N) * hw * 2);

    for (int n = 0; n < N; ++n) {
        const int64_t nbase = static_cast<int64_t>(n) * C * hw;
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                const int64_t pix = n * hw + static_cast<int64_t>(i) * W + j;
                const double dy = fv[static_cast<int64_t>(n) * 2 * hw + static_cast<int64_t>(i) * W + j];
                const double dx =
                    fv[static_cast<int64_t>(n) * 2 * hw + hw + static_cast<int64_t>(i) * W + j];
                const RefRegion reg = locate_reference(i, j, dy, dx, H, W, L);
                (*origins)[pix * 2] = reg.row0;
                (*origins)[pix * 2 + 1] = reg.col0;
                for (int o = 0; o < C; ++o) {
                    const double* wrow = wv.data() + static_cast<int64_t>(o) * C * win;
                    double acc = bv[o];
                    for (int c = 0; c < C; ++c) {
                        const int64_t ch = nbase + static_cast<int64_t>(c) * hw;
                        for (int p = 0; p < win; ++p) {
                            const int r = reg.row0 + p / L, cc = reg.col0 + p % L;
                            acc += wrow[c * win + p] * xv[ch + static_cast<int64_t>(r) * W + cc];
                        }
                    }
                    out[nbase + static_cast<int64_t>(o) * hw + static_cast<int64_t>(i) * W + j] = acc;
                }
            }
        }
    }
    count_macs(static_cast<int64_t>(N) * hw * C * C * win);

    auto result = std::make_shared<detail::TensorNode>();
    result->shape = s;
    result->data = std::move(out);
    const bool needs = X.requires_grad() || weight.requires_grad() || bias.requires_grad();
    if (needs) {
        result->requires_grad = true;
        auto xn = X.node();
        auto wn = weight.node();
        auto bn = bias.node();
        for (const auto& t : {X, weight, bias})
            if (t.requires_grad()) result->parents.push_back(t.node());
        result->backward_fn = [xn, wn, bn, origins, N, C, H, W, L](const std::vector<double>& g,
                                                                   GradTable& t) {
            const int win = L * L;
            const int64_t hw = static_cast<int64_t>(H) * W;
            const auto& xv = xn->data;
            const auto& wv = wn->data;
            std::vector<double>* gx = xn->requires_grad ? &t.of(xn) : nullptr;
            std::vector<double>* gw = wn->requires_grad ? &t.of(wn) : nullptr;
            std::vector<double>* gb = bn->requires_grad ? &t.of(bn) : nullptr;
            for (int n = 0; n < N; ++n) {
                const int64_t nbase = static_cast<int64_t>(n) * C * hw;
                for (int i = 0; i < H; ++i) {
                    for (int j = 0; j < W; ++j) {
                        const int64_t pix = n * hw + static_cast<int64_t>(i) * W + j;
                        const int row0 = (*origins)[pix * 2], col0 = (*origins)[pix * 2 + 1];
                        for (int o = 0; o < C; ++o) {
                            const double go =
                                g[nbase + static_cast<int64_t>(o) * hw + static_cast<int64_t>(i) * W + j];
                            if (go == 0.0) continue;
                            if (gb) (*gb)[o] += go;
                            const int64_t wbase = static_cast<int64_t>(o) * C * win;
                            for (int c = 0; c < C; ++c) {
                                const int64_t ch = nbase + static_cast<int64_t>(c) * hw;
                                for (int p = 0; p < win; ++p) {
                                    const int r = row0 + p / L, cc = col0 + p % L;
                                    const int64_t xi = ch + static_cast<int64_t>(r) * W + cc;
                                    if (gx) (*gx)[xi] += go * wv[wbase + c * win + p];
                                    if (gw) (*gw)[wbase + c * win + p] += go * xv[xi];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return Tensor::wrap(result);
}

FtfaParams FtfaParams::create(int channels, const WindowSpec& spec, AttnVariant variant, Rng& rng,
                              bool zero_init) {
    if (channels <= 0 || channels % 2 != 0)
        throw ConfigError("ftfa: channels must be even (the stream splits into frame halves)");
    const int half = channels / 2;
    if (half % spec.heads != 0)
        throw ConfigError("ftfa: half-stream width " + std::to_string(half) +
                          " not divisible by " + std::to_string(spec.heads) + " heads");
    FtfaParams p;
    p.channels = channels;
    p.spec = WindowSpec{spec.L, spec.heads, half / spec.heads};
    p.spec.validate(half);
    p.variant = variant;
    p.ln1 = LayerNormParams::create(channels);
    p.ln2 = LayerNormParams::create(channels);
    if (variant == AttnVariant::ConvReplace) {
        const int win = spec.L * spec.L;
        auto gather_weight = [&] {
            return zero_init ? Tensor::zeros({half, half * win})
                             : kaiming_uniform({half, half * win},
                                               static_cast<int64_t>(half) * win, rng);
        };
        p.gather_w_prev = gather_weight();
        p.gather_b_prev = Tensor::zeros({half});
        p.gather_w_next = gather_weight();
        p.gather_b_next = Tensor::zeros({half});
        for (Tensor* t : {&p.gather_w_prev, &p.gather_b_prev, &p.gather_w_next, &p.gather_b_next})
            t->set_requires_grad(true);
    } else {
        p.attn_prev = QkvProj::create(half, rng, zero_init);
        p.attn_next = QkvProj::create(half, rng, zero_init);
    }
    p.mlp_params = MlpParams::create(channels, 2.0, rng, zero_init);
    return p;
}

void FtfaParams::register_params(const std::string& prefix, ParamMap& out) const {
    ln1.register_params(prefix + ".ln1", out);
    ln2.register_params(prefix + ".ln2", out);
    if (variant == AttnVariant::ConvReplace) {
        out[prefix + ".gather_prev.weight"] = gather_w_prev;
        out[prefix + ".gather_prev.bias"] = gather_b_prev;
        out[prefix + ".gather_next.weight"] = gather_w_next;
        out[prefix + ".gather_next.bias"] = gather_b_next;
    } else {
        attn_prev.register_params(prefix + ".attn_prev", out);
        attn_next.register_params(prefix + ".attn_next", out);
    }
    mlp_params.register_params(prefix + ".mlp", out);
}

Tensor ftfa_forward(const Tensor& k_in, const FlowField& f_prev, const FlowField& f_next,
                    const FtfaParams& p) {
    if (k_in.ndim() != 4) throw DimensionError("ftfa: expected a 4D NCHW input");
    if (k_in.dim(1) != p.channels)
        throw DimensionError("ftfa: input has " + std::to_string(k_in.dim(1)) +
                             " channels, expected " + std::to_string(p.channels));
    const int half = p.channels / 2;
    const int H = k_in.dim(2), W = k_in.dim(3);

    Tensor x = layer_norm(k_in, p.ln1);
    Tensor xa = slice_channels(x, 0, half);
    Tensor xb = slice_channels(x, half, p.channels);
    Tensor ya, yb;
    switch (p.variant) {
    case AttnVariant::FlowGuided: {
        const WindowSpec eff = effective_spec(p.spec, H, W);
        ya = flow_attention(xa, f_prev, eff, p.attn_prev);
        yb = flow_attention(xb, f_next, eff, p.attn_next);
        break;
    }
    case AttnVariant::NoFlow: {
        const WindowSpec eff = effective_spec(p.spec, H, W);
        ya = noflow_attention(xa, eff, p.attn_prev);
        yb = noflow_attention(xb, eff, p.attn_next);
        break;
    }
    case AttnVariant::ConvReplace:
        // Gather weights are sized by the configured L, so the map must be
        // large enough; no shrink fallback here.
        ya = conv_replace_forward(xa, f_prev, p.spec, p.gather_w_prev, p.gather_b_prev);
        yb = conv_replace_forward(xb, f_next, p.spec, p.gather_w_next, p.gather_b_next);
        break;
    }
    Tensor k_hat = add(concat_channels({ya, yb}), k_in);
    return add(mlp(layer_norm(k_hat, p.ln2), p.mlp_params), k_hat);
}

FtfbParams FtfbParams::create(bool is_first, int in_channels, int skip_channels, int attn_width,
                              const WindowSpec& spec, AttnVariant variant, Rng& rng) {
    FtfbParams p;
    p.is_first = is_first;
    if (is_first) {
        if (skip_channels != 0) throw ConfigError("ftfb: the first block takes no skip features");
        p.reduce = ConvParams::create(in_channels, attn_width, 3, 1, 1, rng);
    } else {
        if (skip_channels <= 0) throw ConfigError("ftfb: non-first blocks need skip features");
        p.reduce = ConvParams::create(in_channels + skip_channels, attn_width, 3, 2, 1, rng);
    }
    p.conv_a = ConvParams::create(attn_width, attn_width, 3, 1, 1, rng);
    p.ftfa = FtfaParams::create(attn_width, spec, variant, rng);
    p.conv_out = ConvParams::create(attn_width, attn_width, 3, 1, 1, rng);
    return p;
}

void FtfbParams::register_params(const std::string& prefix, ParamMap& out) const {
    reduce.register_params(prefix + ".reduce", out);
    conv_a.register_params(prefix + ".conv_a", out);
    ftfa.register_params(prefix + ".ftfa", out);
    conv_out.register_params(prefix + ".conv_out", out);
}

Tensor ftfb_forward(const Tensor& x_in, const Tensor& skip, const FlowField& f_prev,
                    const FlowField& f_next, const FtfbParams& p) {
    Tensor h;
    if (p.is_first) {
        if (skip.defined()) throw ContractError("ftfb: the first block takes no skip features");
        h = conv2d(x_in, p.reduce);
    } else {
        if (!skip.defined()) throw ContractError("ftfb: non-first blocks need skip features");
        if (skip.dim(2) != x_in.dim(2) || skip.dim(3) != x_in.dim(3))
            throw DimensionError("ftfb: skip resolution must match the block input");
        h = conv2d(concat_channels({x_in, skip}), p.reduce);
    }
    h = leaky_relu(conv2d(h, p.conv_a));
    h = ftfa_forward(h, f_prev, f_next, p.ftfa);
    return conv2d(h, p.conv_out);
}

} // namespace vfift
