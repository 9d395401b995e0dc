#pragma once

#include <cstdint>
#include <functional>

#include "vfift/pipeline.hpp"

namespace vfift {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay and bias correction. Parameter tensors
/// are shared handles; stepping updates them in place.
class AdamW {
public:
    explicit AdamW(ParamMap params, AdamWConfig cfg = {});

    /// Applies one update from the tensors' current grad buffers.
    /// A parameter without a grad buffer is a contract violation.
    void step();
    void zero_grad();
    int64_t step_count() const { return t_; }

private:
    ParamMap params_;
    AdamWConfig cfg_;
    std::map<std::string, std::vector<double>> m_, v_;
    int64_t t_ = 0;
};

enum class MotionKind { Translate, RotateSmall, TwoObject };

/// Procedurally textured frame triple with analytically known midpoint
/// motion. `motion` is the total displacement (pixels) from the earlier to
/// the later frame; the ground-truth middle frame sits halfway along it.
struct SyntheticTriplet {
    Tensor I_prev, I_gt, I_next; // [1,3,H,W]
    FlowField true_flow_prev, true_flow_next;
    MotionKind kind = MotionKind::Translate;
};

SyntheticTriplet gen_synthetic(uint64_t seed, MotionKind kind, int size, double motion = 2.0);

/// Augmentations used during training; each returns a transformed copy with
/// the ground-truth flows adjusted consistently.
SyntheticTriplet flip_horizontal(const SyntheticTriplet& t);
SyntheticTriplet flip_vertical(const SyntheticTriplet& t);
SyntheticTriplet reverse_time(const SyntheticTriplet& t);

struct LossRow {
    int step;
    double l_warp, l_rec, total;
};

struct TrainOptions {
    int steps = 500;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    bool augment = false;
    uint64_t seed = 0;
};

struct TrainResult {
    std::vector<LossRow> history;
};

/// Steps the model over the dataset in round-robin order. Loss turning
/// non-finite aborts with a diagnostic.
TrainResult train_loop(VfiftModel& model, const std::vector<SyntheticTriplet>& data,
                       const TrainOptions& opts);

/// CSV rows "step,loss_warp,loss_rec,total" with a header line.
void write_loss_csv(const std::vector<LossRow>& history, const std::string& path);

struct GradCheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;
    std::string worst_param;
};

/// Central-difference check of analytic gradients on a random subsample of
/// parameter coordinates. `loss_fn` must be re-runnable (pure in the
/// parameters). `corrupt` optionally mutates the analytic gradients before
/// comparison; it exists so the failure path of verification tooling can be
/// exercised. When `rescue_eps` > 0 each coordinate is probed at both step
/// sizes and the smaller error kept: coordinates whose true derivative sits
/// near the f64 rounding floor of the primary step are then judged at the
/// coarser step, while a genuinely wrong gradient fails at every step size.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ParamMap& params,
                           double eps = 1e-5, int max_coords = 200, uint64_t seed = 0,
                           const std::function<void(ParamMap&)>& corrupt = nullptr,
                           double rescue_eps = 0.0);

} // namespace vfift
