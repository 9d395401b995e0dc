#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vfift/errors.hpp"

namespace vfift {

enum class CostKind { Conv, SelfAttn, SwinAttn, FlowAttn };

/// Analytical multiply-add model for one layer at the stated granularity:
/// inner products only, no softmax exponentials or memory traffic.
struct CostModel {
    CostKind kind = CostKind::Conv;
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 0;
    int64_t window = 0;
    /// Counts the second, shifted-window attention pass of a Swin layer as a
    /// x2 on the total. Off by default.
    bool swin_shifted_pass = false;
};

int64_t cost(const CostModel& model);

const char* cost_kind_name(CostKind kind);

struct InequalityViolation {
    std::string which; // "channel-window" or "window-area"
    int64_t channels, window, height, width;
    int64_t lhs, rhs;
};

struct InequalityReport {
    int64_t checked_channel_window = 0; // 3C + 2L^2 <= C L^2 for C>=3, L>=3
    int64_t checked_window_area = 0;    // L^2 < H W for L<H, L<W
    std::vector<InequalityViolation> violations;
    bool ok() const { return violations.empty(); }
};

/// Exhaustive check of the two cost inequalities over integer grids
/// C in [3,64], L in {3,5,...,15}, H,W in [L+1,64].
InequalityReport verify_inequalities();

/// Multiply-add accumulator for one instrumented forward pass.
struct OpCounter {
    int64_t macs = 0;
};

/// Routes mac counts from nn ops into `counter` for the scope's lifetime.
/// Scopes nest; one active counter per thread.
class CounterScope {
public:
    explicit CounterScope(OpCounter& counter);
    ~CounterScope();
    CounterScope(const CounterScope&) = delete;
    CounterScope& operator=(const CounterScope&) = delete;

private:
    OpCounter* previous_;
};

/// Adds to the active counter, if any. Called by the instrumented ops.
void count_macs(int64_t macs);

/// Runs `forward` under a fresh counter and returns the multiply-adds it
/// executed.
int64_t measure_ops(const std::function<void()>& forward);

struct CostReportRow {
    CostKind kind;
    int64_t height, width, channels, window;
    int64_t modeled;
    int64_t measured; // -1 when not measured
};

void write_cost_csv(const std::vector<CostReportRow>& rows, const std::string& path);

/// Least-squares fit of count = k * (H*W); returns {k, r_squared}.
std::pair<double, double> fit_linear_in_area(const std::vector<std::pair<int64_t, int64_t>>& area_count);

} // namespace vfift
