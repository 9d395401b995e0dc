#include "vfift/training.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace vfift {

AdamW::AdamW(ParamMap params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg.lr <= 0.0 || cfg.eps <= 0.0) throw ConfigError("adamw: lr and eps must be positive");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
        throw ConfigError("adamw: betas must lie in [0,1)");
    if (cfg.weight_decay < 0.0) throw ConfigError("adamw: weight decay must be nonnegative");
    for (const auto& [name, p] : params_) {
        m_[name].assign(p.numel(), 0.0);
        v_[name].assign(p.numel(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params_) {
        if (!p.has_grad()) throw ContractError("adamw: parameter '" + name + "' has no gradient");
        const auto& g = p.grad();
        auto& m = m_[name];
        auto& v = v_[name];
        auto& w = p.mutable_values();
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
}

// --- synthetic data ----------------------------------------------------------

namespace {

/// Smooth periodic texture: a small bank of sinusoids per channel, bounded
/// away from 0 and 1 so shifted renders stay valid images.
struct Texture {
    static constexpr int kWaves = 4;
    struct Wave {
        double fy, fx, phase, amp;
    };
    std::array<std::array<Wave, kWaves>, 3> waves;

    static Texture random(Rng& rng) {
        std::uniform_real_distribution<double> freq(0.15, 0.55);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
        std::uniform_real_distribution<double> sign(-1.0, 1.0);
        Texture t;
        for (auto& ch : t.waves) {
            double total = 0.0;
            for (auto& w : ch) {
                w.fy = freq(rng) * (sign(rng) < 0 ? -1.0 : 1.0);
                w.fx = freq(rng) * (sign(rng) < 0 ? -1.0 : 1.0);
                w.phase = phase(rng);
                w.amp = 0.5 + 0.5 * std::abs(sign(rng));
                total += w.amp;
            }
            for (auto& w : ch) w.amp *= 0.45 / total;
        }
        return t;
    }

    double at(int channel, double y, double x) const {
        double v = 0.5;
        for (const auto& w : waves[channel]) v += w.amp * std::sin(w.fy * y + w.fx * x + w.phase);
        return v;
    }
};

Tensor render(int size, const std::function<double(int, double, double)>& shade) {
    std::vector<double> data(static_cast<size_t>(3) * size * size);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x)
                data[(static_cast<size_t>(c) * size + y) * size + x] = shade(c, y, x);
    return Tensor::from_data({1, 3, size, size}, std::move(data));
}

Tensor constant_flow(int size, double dy, double dx) {
    std::vector<double> data(static_cast<size_t>(2) * size * size);
    std::fill_n(data.begin(), static_cast<size_t>(size) * size, dy);
    std::fill_n(data.begin() + static_cast<size_t>(size) * size, static_cast<size_t>(size) * size, dx);
    return Tensor::from_data({1, 2, size, size}, std::move(data));
}

} // namespace

SyntheticTriplet gen_synthetic(uint64_t seed, MotionKind kind, int size, double motion) {
    if (size < 4) throw ConfigError("gen_synthetic: size too small");
    Rng rng(seed);
    SyntheticTriplet t;
    t.kind = kind;
    const double half = motion / 2.0;

    switch (kind) {
    case MotionKind::Translate: {
        // Content translates down by `motion` pixels from the earlier frame
        // to the later one; the midpoint sits half way.
        const Texture tex = Texture::random(rng);
        auto frame = [&](double shift) {
            return render(size, [&](int c, double y, double x) { return tex.at(c, y - shift, x); });
        };
        t.I_prev = frame(0.0);
        t.I_gt = frame(half);
        t.I_next = frame(2.0 * half);
        t.true_flow_prev = FlowField{constant_flow(size, -half, 0.0)};
        t.true_flow_next = FlowField{constant_flow(size, half, 0.0)};
        break;
    }
    case MotionKind::RotateSmall: {
        // Rotation about the image center; `motion` pixels of arc at half
        // the image radius per frame pair.
        const Texture tex = Texture::random(rng);
        const double cy = (size - 1) / 2.0, cx = (size - 1) / 2.0;
        const double alpha = half / (size / 4.0); // radians per half-step
        auto rot = [&](double a, double vy, double vx, double& ry, double& rx) {
            ry = std::cos(a) * vy + std::sin(a) * vx;
            rx = -std::sin(a) * vy + std::cos(a) * vx;
        };
        auto frame = [&](double a) {
            return render(size, [&](int c, double y, double x) {
                double ry, rx;
                rot(a, y - cy, x - cx, ry, rx);
                return tex.at(c, cy + ry, cx + rx);
            });
        };
        t.I_prev = frame(alpha);
        t.I_gt = frame(0.0);
        t.I_next = frame(-alpha);
        auto flow = [&](double a) {
            std::vector<double> data(static_cast<size_t>(2) * size * size);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double ry, rx;
                    rot(a, y - cy, x - cx, ry, rx);
                    data[static_cast<size_t>(y) * size + x] = ry - (y - cy);
                    data[static_cast<size_t>(size) * size + y * size + x] = rx - (x - cx);
                }
            return FlowField{Tensor::from_data({1, 2, size, size}, std::move(data))};
        };
        t.true_flow_prev = flow(alpha);
        t.true_flow_next = flow(-alpha);
        break;
    }
    case MotionKind::TwoObject: {
        // Static background, two textured discs on a collision course: they
        // slide horizontally toward each other with a small vertical offset
        // and genuinely overlap by the later frame, so each frame pair has
        // occluded and disoccluded bands that warping alone cannot recover.
        // Disc edges get a one-pixel linear ramp; disc 2 covers disc 1.
        const Texture bg = Texture::random(rng);
        const Texture tex1 = Texture::random(rng);
        const Texture tex2 = Texture::random(rng);
        const double r = size / 6.0;
        const double c1y = 0.41 * size, c1x = 0.38 * size;
        const double c2y = 0.59 * size, c2x = 0.62 * size;
        auto alpha_at = [&](double y, double x, double cy, double cx) {
            const double d = std::hypot(y - cy, x - cx);
            return std::clamp(r + 0.5 - d, 0.0, 1.0);
        };
        auto frame = [&](double tau) {
            const double o1 = c1x + tau * half, o2 = c2x - tau * half;
            return render(size, [&](int c, double y, double x) {
                double v = bg.at(c, y, x);
                const double a1 = alpha_at(y, x, c1y, o1);
                v = (1 - a1) * v + a1 * tex1.at(c, y, x - tau * half);
                const double a2 = alpha_at(y, x, c2y, o2);
                v = (1 - a2) * v + a2 * tex2.at(c, y, x + tau * half);
                return v;
            });
        };
        t.I_prev = frame(-1.0);
        t.I_gt = frame(0.0);
        t.I_next = frame(1.0);
        // Flow of the surface visible at the middle frame; disc 2 wins where
        // the discs overlap because it is composited on top.
        auto flow = [&](double sign) {
            std::vector<double> data(static_cast<size_t>(2) * size * size, 0.0);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double dx = 0.0;
                    if (alpha_at(y, x, c2y, c2x) > 0.5) dx = sign * half;
                    else if (alpha_at(y, x, c1y, c1x) > 0.5) dx = sign * -half;
                    data[static_cast<size_t>(size) * size + static_cast<size_t>(y) * size + x] = dx;
                }
            return FlowField{Tensor::from_data({1, 2, size, size}, std::move(data))};
        };
        t.true_flow_prev = flow(1.0);
        t.true_flow_next = flow(-1.0);
        break;
    }
    }
    return t;
}

// --- augmentation ------------------------------------------------------------

namespace {

Tensor flip_axis(const Tensor& x, int axis /* 2=H, 3=W */) {
    const Shape& s = x.shape();
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = xv.data() + static_cast<int64_t>(nc) * H * W;
        double* dst = out.data() + static_cast<int64_t>(nc) * H * W;
        for (int y = 0; y < H; ++y)
            for (int x2 = 0; x2 < W; ++x2) {
                const int sy = axis == 2 ? H - 1 - y : y;
                const int sx = axis == 3 ? W - 1 - x2 : x2;
                dst[y * W + x2] = src[sy * W + sx];
            }
    }
    return Tensor::from_data(s, std::move(out));
}

Tensor negate_channel(const Tensor& x, int channel) {
    const Shape& s = x.shape();
    const int64_t hw = static_cast<int64_t>(s[2]) * s[3];
    std::vector<double> out = x.values();
    for (int n = 0; n < s[0]; ++n) {
        double* p = out.data() + (static_cast<int64_t>(n) * s[1] + channel) * hw;
        for (int64_t i = 0; i < hw; ++i) p[i] = -p[i];
    }
    return Tensor::from_data(s, std::move(out));
}

} // namespace

SyntheticTriplet flip_horizontal(const SyntheticTriplet& t) {
    SyntheticTriplet r = t;
    r.I_prev = flip_axis(t.I_prev, 3);
    r.I_gt = flip_axis(t.I_gt, 3);
    r.I_next = flip_axis(t.I_next, 3);
    r.true_flow_prev = FlowField{negate_channel(flip_axis(t.true_flow_prev.data, 3), 1)};
    r.true_flow_next = FlowField{negate_channel(flip_axis(t.true_flow_next.data, 3), 1)};
    return r;
}

SyntheticTriplet flip_vertical(const SyntheticTriplet& t) {
    SyntheticTriplet r = t;
    r.I_prev = flip_axis(t.I_prev, 2);
    r.I_gt = flip_axis(t.I_gt, 2);
    r.I_next = flip_axis(t.I_next, 2);
    r.true_flow_prev = FlowField{negate_channel(flip_axis(t.true_flow_prev.data, 2), 0)};
    r.true_flow_next = FlowField{negate_channel(flip_axis(t.true_flow_next.data, 2), 0)};
    return r;
}

SyntheticTriplet reverse_time(const SyntheticTriplet& t) {
    SyntheticTriplet r = t;
    r.I_prev = t.I_next;
    r.I_next = t.I_prev;
    r.true_flow_prev = t.true_flow_next;
    r.true_flow_next = t.true_flow_prev;
    return r;
}

// --- training loop -----------------------------------------------------------

TrainResult train_loop(VfiftModel& model, const std::vector<SyntheticTriplet>& data,
                       const TrainOptions& opts) {
    if (data.empty()) throw ContractError("train: dataset is empty");
    AdamWConfig ac;
    ac.lr = opts.lr;
    ac.weight_decay = opts.weight_decay;
    AdamW opt(model.params(), ac);
    Rng rng(opts.seed);

    TrainResult res;
    res.history.reserve(opts.steps);
    for (int step = 0; step < opts.steps; ++step) {
        SyntheticTriplet sample = data[step % data.size()];
        if (opts.augment) {
            if (rng() & 1) sample = flip_horizontal(sample);
            if (rng() & 1) sample = flip_vertical(sample);
            if (rng() & 1) sample = reverse_time(sample);
        }
        InterpolationOutput out = model.forward(sample.I_prev, sample.I_next);
        Tensor lw = loss_warp(sample.I_gt, out.warped_prev, out.warped_next);
        Tensor lr = loss_rec(sample.I_gt, out.I_t);
        Tensor lt = add(scale(lw, model.config().lambda_warp), scale(lr, model.config().lambda_rec));
        const double total = lt.item();
        if (!std::isfinite(total))
            throw ContractError("train: loss diverged (non-finite) at step " + std::to_string(step));
        opt.zero_grad();
        backward(lt);
        opt.step();
        res.history.push_back({step, lw.item(), lr.item(), total});
    }
    return res;
}

void write_loss_csv(const std::vector<LossRow>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss CSV: " + path);
    out << "step,loss_warp,loss_rec,total\n";
    out.precision(17);
    for (const auto& row : history)
        out << row.step << "," << row.l_warp << "," << row.l_rec << "," << row.total << "\n";
    if (!out) throw IoError("short write on loss CSV: " + path);
}

// --- gradient verification ---------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParamMap& params, double eps,
                           int max_coords, uint64_t seed,
                           const std::function<void(ParamMap&)>& corrupt, double rescue_eps) {
    for (auto& [name, p] : params) p.zero_grad();
    backward(loss_fn());
    if (corrupt) corrupt(params);

    std::map<std::string, std::vector<double>> analytic;
    int64_t total_coords = 0;
    for (auto& [name, p] : params) {
        analytic[name] = p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0);
        total_coords += p.numel();
    }

    // Sample coordinates without replacement across the flattened parameter
    // space; check everything when the model is small enough.
    std::vector<int64_t> picks;
    if (total_coords <= max_coords) {
        picks.resize(total_coords);
        for (int64_t i = 0; i < total_coords; ++i) picks[i] = i;
    } else {
        Rng rng(seed);
        std::uniform_int_distribution<int64_t> dist(0, total_coords - 1);
        std::set<int64_t> seen;
        while (static_cast<int>(seen.size()) < max_coords) seen.insert(dist(rng));
        picks.assign(seen.begin(), seen.end());
    }

    GradCheckReport report;
    report.coords_checked = static_cast<int>(picks.size());
    auto it = params.begin();
    int64_t base = 0;
    for (int64_t flat : picks) {
        while (flat >= base + it->second.numel()) {
            base += it->second.numel();
            ++it;
        }
        const int64_t idx = flat - base;
        auto& w = it->second.mutable_values();
        const double a = analytic[it->first][idx];
        const double orig = w[idx];
        const auto rel_at = [&](double step) {
            w[idx] = orig + step;
            const double f_plus = loss_fn().item();
            w[idx] = orig - step;
            const double f_minus = loss_fn().item();
            w[idx] = orig;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            return std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        };
        double rel = rel_at(eps);
        if (rescue_eps > 0.0) rel = std::min(rel, rel_at(rescue_eps));
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_param = it->first + "[" + std::to_string(idx) + "]";
        }
    }
    return report;
}

} // namespace vfift
