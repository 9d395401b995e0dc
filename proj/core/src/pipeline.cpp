#include "vfift/pipeline.hpp"

#include <cmath>
#include <sstream>

namespace vfift {

void ModelConfig::validate() const {
    if (window < 1 || window % 2 == 0) throw ConfigError("config: window must be odd and >= 1");
    if (heads < 1) throw ConfigError("config: heads must be >= 1");
    if (num_scales < 2) throw ConfigError("config: num_scales must be >= 2");
    if (lambda_warp < 0.0 || lambda_rec < 0.0)
        throw ConfigError("config: loss weights must be nonnegative");
    if (attn_width < 2 || attn_width % (2 * heads) != 0)
        throw ConfigError("config: attn_width must be divisible by 2*heads (the stream splits "
                          "into per-frame halves, each divided among heads)");
    if (feature_channels <= 0) throw ConfigError("config: feature_channels must be positive");
    for (int c : encoder_channels)
        if (c <= 0) throw ConfigError("config: encoder channels must be positive");
}

namespace {

const char* variant_name(AttnVariant v) {
    switch (v) {
    case AttnVariant::FlowGuided: return "flow_guided";
    case AttnVariant::NoFlow: return "no_flow";
    case AttnVariant::ConvReplace: return "conv_replace";
    }
    return "flow_guided";
}

AttnVariant parse_variant(const std::string& s) {
    if (s == "flow_guided") return AttnVariant::FlowGuided;
    if (s == "no_flow") return AttnVariant::NoFlow;
    if (s == "conv_replace") return AttnVariant::ConvReplace;
    throw ConfigError("config: unknown variant '" + s + "'");
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "window = " << window << "\n";
    os << "heads = " << heads << "\n";
    os << "attn_width = " << attn_width << "\n";
    os << "feature_channels = " << feature_channels << "\n";
    os << "encoder_channels = " << encoder_channels[0] << "," << encoder_channels[1] << ","
       << encoder_channels[2] << "," << encoder_channels[3] << "\n";
    os << "num_scales = " << num_scales << "\n";
    os << "variant = " << variant_name(variant) << "\n";
    os << "lambda_warp = " << lambda_warp << "\n";
    os << "lambda_rec = " << lambda_rec << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config: expected 'key = value': " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "window") cfg.window = std::stoi(val);
            else if (key == "heads") cfg.heads = std::stoi(val);
            else if (key == "attn_width") cfg.attn_width = std::stoi(val);
            else if (key == "feature_channels") cfg.feature_channels = std::stoi(val);
            else if (key == "num_scales") cfg.num_scales = std::stoi(val);
            else if (key == "variant") cfg.variant = parse_variant(val);
            else if (key == "lambda_warp") cfg.lambda_warp = std::stod(val);
            else if (key == "lambda_rec") cfg.lambda_rec = std::stod(val);
            else if (key == "encoder_channels") {
                std::istringstream vs(val);
                std::string item;
                int i = 0;
                while (std::getline(vs, item, ',')) {
                    if (i >= 4) throw ConfigError("config: encoder_channels takes 4 values");
                    cfg.encoder_channels[i++] = std::stoi(trim(item));
                }
                if (i != 4) throw ConfigError("config: encoder_channels takes 4 values");
            } else {
                throw ConfigError("config: unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("config: bad value for '" + key + "': " + val);
        } catch (const std::out_of_range&) {
            throw ConfigError("config: value out of range for '" + key + "': " + val);
        }
    }
    cfg.validate();
    return cfg;
}

Tensor backward_warp(const Tensor& frame, const FlowField& flow) {
    if (frame.ndim() != 4) throw DimensionError("warp: expected a 4D NCHW frame");
    const Shape& fs = flow.data.shape();
    if (fs.size() != 4 || fs[1] != 2) throw DimensionError("warp: flow must be [N,2,H,W]");
    const int N = frame.dim(0), C = frame.dim(1), H = frame.dim(2), W = frame.dim(3);
    if (fs[0] != N || fs[2] != H || fs[3] != W)
        throw DimensionError("warp: flow dims must match the frame");

    const auto& fv = frame.values();
    const auto& flv = flow.data.values();
    const int64_t hw = static_cast<int64_t>(H) * W;
    std::vector<double> out(fv.size());

    auto sample_corners = [&](int n, int i, int j, int& y0, int& x0, int& y1, int& x1, double& fy,
                              double& fx) {
        const int64_t fbase = static_cast<int64_t>(n) * 2 * hw + static_cast<int64_t>(i) * W + j;
        const double yc = std::clamp(i + flv[fbase], 0.0, H - 1.0);
        const double xc = std::clamp(j + flv[fbase + hw], 0.0, W - 1.0);
        y0 = static_cast<int>(std::floor(yc));
        x0 = static_cast<int>(std::floor(xc));
        y1 = std::min(y0 + 1, H - 1);
        x1 = std::min(x0 + 1, W - 1);
        fy = yc - y0;
        fx = xc - x0;
    };

    for (int n = 0; n < N; ++n) {
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                int y0, x0, y1, x1;
                double fy, fx;
                sample_corners(n, i, j, y0, x0, y1, x1, fy, fx);
                for (int c = 0; c < C; ++c) {
                    const int64_t ch = (static_cast<int64_t>(n) * C + c) * hw;
                    const double v00 = fv[ch + static_cast<int64_t>(y0) * W + x0];
                    const double v01 = fv[ch + static_cast<int64_t>(y0) * W + x1];
                    const double v10 = fv[ch + static_cast<int64_t>(y1) * W + x0];
                    const double v11 = fv[ch + static_cast<int64_t>(y1) * W + x1];
                    out[ch + static_cast<int64_t>(i) * W + j] =
                        (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
                }
            }
        }
    }

    auto result = std::make_shared<detail::TensorNode>();
    result->shape = frame.shape();
    result->data = std::move(out);
    const bool needs = frame.requires_grad() || flow.data.requires_grad();
    if (needs) {
        result->requires_grad = true;
        auto fn = frame.node();
        auto fln = flow.data.node();
        if (frame.requires_grad()) result->parents.push_back(fn);
        if (flow.data.requires_grad()) result->parents.push_back(fln);
        result->backward_fn = [fn, fln, N, C, H, W](const std::vector<double>& g, GradTable& t) {
            const int64_t hw = static_cast<int64_t>(H) * W;
            const auto& fv = fn->data;
            const auto& flv = fln->data;
            std::vector<double>* gf = fn->requires_grad ? &t.of(fn) : nullptr;
            std::vector<double>* gfl = fln->requires_grad ? &t.of(fln) : nullptr;
            for (int n = 0; n < N; ++n) {
                for (int i = 0; i < H; ++i) {
                    for (int j = 0; j < W; ++j) {
                        const int64_t fbase =
                            static_cast<int64_t>(n) * 2 * hw + static_cast<int64_t>(i) * W + j;
                        const double y = i + flv[fbase];
                        const double x = j + flv[fbase + hw];
                        const double yc = std::clamp(y, 0.0, H - 1.0);
                        const double xc = std::clamp(x, 0.0, W - 1.0);
                        const int y0 = static_cast<int>(std::floor(yc));
                        const int x0 = static_cast<int>(std::floor(xc));
                        const int y1 = std::min(y0 + 1, H - 1);
                        const int x1 = std::min(x0 + 1, W - 1);
                        const double fy = yc - y0, fx = xc - x0;
                        // Clamped coordinates stop responding to the flow.
                        const bool y_in = y > 0.0 && y < H - 1.0;
                        const bool x_in = x > 0.0 && x < W - 1.0;
                        double dy_acc = 0.0, dx_acc = 0.0;
                        for (int c = 0; c < C; ++c) {
                            const int64_t ch = (static_cast<int64_t>(n) * C + c) * hw;
                            const double go = g[ch + static_cast<int64_t>(i) * W + j];
                            if (go == 0.0) continue;
                            const double v00 = fv[ch + static_cast<int64_t>(y0) * W + x0];
                            const double v01 = fv[ch + static_cast<int64_t>(y0) * W + x1];
                            const double v10 = fv[ch + static_cast<int64_t>(y1) * W + x0];
                            const double v11 = fv[ch + static_cast<int64_t>(y1) * W + x1];
                            if (gf) {
                                (*gf)[ch + static_cast<int64_t>(y0) * W + x0] += go * (1 - fy) * (1 - fx);
                                (*gf)[ch + static_cast<int64_t>(y0) * W + x1] += go * (1 - fy) * fx;
                                (*gf)[ch + static_cast<int64_t>(y1) * W + x0] += go * fy * (1 - fx);
                                (*gf)[ch + static_cast<int64_t>(y1) * W + x1] += go * fy * fx;
                            }
                            if (gfl) {
                                if (y_in)
                                    dy_acc += go * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                                if (x_in)
                                    dx_acc += go * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                            }
                        }
                        if (gfl) {
                            (*gfl)[fbase] += dy_acc;
                            (*gfl)[fbase + hw] += dx_acc;
                        }
                    }
                }
            }
        };
    }
    return Tensor::wrap(result);
}

FlowField downscale_flow(const FlowField& flow, int factor) {
    if (factor < 1 || (factor & (factor - 1)) != 0)
        throw ConfigError("downscale_flow: factor must be a power of two");
    Tensor cur = flow.data;
    for (int f = factor; f > 1; f /= 2) cur = avg_pool2(cur);
    if (factor > 1) cur = scale(cur, 1.0 / factor);
    return FlowField{cur};
}

Tensor occlusion_blend(const Tensor& warped_prev, const Tensor& warped_next,
                       const OcclusionMap& O_prev) {
    check_same_shape(warped_prev, warped_next, "occlusion_blend");
    const Shape& os = O_prev.data.shape();
    if (os.size() != 4 || os[1] != 1)
        throw DimensionError("occlusion_blend: occlusion map must be [N,1,H,W]");
    Tensor O_next = sub(Tensor::ones(os), O_prev.data);
    return add(mul(warped_prev, O_prev.data), mul(warped_next, O_next));
}

Tensor loss_warp(const Tensor& I_gt, const Tensor& warped_prev, const Tensor& warped_next) {
    check_same_shape(I_gt, warped_prev, "loss_warp");
    check_same_shape(I_gt, warped_next, "loss_warp");
    return mean(abs(sub(I_gt, scale(add(warped_prev, warped_next), 0.5))));
}

Tensor loss_rec(const Tensor& I_gt, const Tensor& I_t) {
    check_same_shape(I_gt, I_t, "loss_rec");
    return mean(abs(sub(I_gt, I_t)));
}

Tensor total_loss(const Tensor& I_gt, const InterpolationOutput& out, const ModelConfig& cfg) {
    return add(scale(loss_warp(I_gt, out.warped_prev, out.warped_next), cfg.lambda_warp),
               scale(loss_rec(I_gt, out.I_t), cfg.lambda_rec));
}

VfiftModel::VfiftModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    UNetConfig base;
    base.encoder_channels = cfg.encoder_channels;
    base.feature_channels = cfg.feature_channels;

    UNetConfig flow_cfg = base;
    flow_cfg.head_kind = HeadKind::Flow;
    flow_net_ = UNet(flow_cfg, rng);

    UNetConfig feat_cfg = base;
    feat_cfg.head_kind = HeadKind::Feature;
    feature_net_ = UNet(feat_cfg, rng);

    UNetConfig occ_cfg = base;
    occ_cfg.head_kind = HeadKind::Occlusion;
    occ_cfg.in_channels = 12; // both inputs plus both warped frames
    occlusion_net_ = UNet(occ_cfg, rng);

    const WindowSpec spec{cfg.window, cfg.heads, 1};
    blocks_.reserve(cfg.num_scales);
    blocks_.push_back(FtfbParams::create(true, 12, 0, cfg.attn_width, spec, cfg.variant, rng));
    for (int s = 1; s < cfg.num_scales; ++s)
        blocks_.push_back(FtfbParams::create(false, cfg.attn_width, 2 * cfg.feature_channels,
                                             cfg.attn_width, spec, cfg.variant, rng));

    up_stages_.resize(cfg.num_scales - 1);
    for (auto& st : up_stages_) {
        st.up = ConvParams::create(cfg.attn_width, cfg.attn_width, 4, 2, 1, rng);
        st.fuse = ConvParams::create(2 * cfg.attn_width, cfg.attn_width, 3, 1, 1, rng);
    }
    delta_head_ = ConvParams::create(cfg.attn_width, 3, 3, 1, 1, rng, /*zero_init=*/true);
}

InterpolationOutput VfiftModel::forward(const Tensor& I_prev, const Tensor& I_next) const {
    if (blocks_.empty()) throw ContractError("model: not initialized");
    if (I_prev.ndim() != 4 || I_prev.dim(1) != 3)
        throw DimensionError("model: frames must be [N,3,H,W]");
    check_same_shape(I_prev, I_next, "model");

    InterpolationOutput out;
    auto [F_prev, F_next] = predict_flow(flow_net_, I_prev, I_next);
    auto [M_prev, M_next] = extract_features(feature_net_, I_prev, I_next);
    out.flow_prev = F_prev;
    out.flow_next = F_next;
    out.warped_prev = backward_warp(I_prev, F_prev);
    out.warped_next = backward_warp(I_next, F_next);

    Tensor stack = concat_channels({I_prev, I_next, out.warped_prev, out.warped_next});
    out.occlusion = predict_occlusion(occlusion_net_, stack);

    // Transformer trunk: full-resolution block, then halving blocks fed with
    // the feature maps and flows brought to each block's output resolution.
    const int S = cfg_.num_scales;
    std::vector<Tensor> trunk(S);
    trunk[0] = ftfb_forward(stack, Tensor(), F_prev, F_next, blocks_[0]);
    Tensor skip = concat_channels({M_prev, M_next});
    for (int s = 1; s < S; ++s) {
        FlowField fp = downscale_flow(F_prev, 1 << s);
        FlowField fn = downscale_flow(F_next, 1 << s);
        trunk[s] = ftfb_forward(trunk[s - 1], skip, fp, fn, blocks_[s]);
        if (s < S - 1) skip = avg_pool2(skip);
    }

    Tensor cur = trunk[S - 1];
    for (int i = 0; i < S - 1; ++i) {
        Tensor up = conv_transpose2d(cur, up_stages_[i].up);
        cur = leaky_relu(conv2d(concat_channels({up, trunk[S - 2 - i]}), up_stages_[i].fuse));
    }
    out.delta = conv2d(cur, delta_head_);
    out.O_t = occlusion_blend(out.warped_prev, out.warped_next, out.occlusion);
    out.I_t = add(out.O_t, out.delta);
    return out;
}

ParamMap VfiftModel::params() const {
    ParamMap m;
    flow_net_.register_params("flow_net", m);
    feature_net_.register_params("feature_net", m);
    occlusion_net_.register_params("occlusion_net", m);
    for (size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].register_params("block" + std::to_string(i), m);
    for (size_t i = 0; i < up_stages_.size(); ++i) {
        const std::string p = "up" + std::to_string(i + 1);
        up_stages_[i].up.register_params(p + ".up", m);
        up_stages_[i].fuse.register_params(p + ".fuse", m);
    }
    delta_head_.register_params("delta_head", m);
    return m;
}

} // namespace vfift
