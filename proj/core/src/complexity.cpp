#include "vfift/complexity.hpp"

#include <cmath>
#include <fstream>

namespace vfift {

namespace {

void check_dims(const CostModel& m) {
    if (m.height <= 0 || m.width <= 0 || m.channels <= 0)
        throw ConfigError("cost: dimensions must be positive");
    if ((m.kind == CostKind::Conv || m.kind == CostKind::SwinAttn || m.kind == CostKind::FlowAttn)) {
        if (m.window <= 0) throw ConfigError("cost: window must be positive");
        if (m.window > m.height || m.window > m.width)
            throw ConfigError("cost: window exceeds spatial dims");
    }
}

thread_local OpCounter* g_active_counter = nullptr;

} // namespace

int64_t cost(const CostModel& m) {
    check_dims(m);
    const int64_t H = m.height, W = m.width, C = m.channels, L = m.window;
    switch (m.kind) {
    case CostKind::Conv:
        return H * W * C * C * L * L;
    case CostKind::SelfAttn:
        return 3 * H * W * C * C + 2 * H * H * W * W * C;
    case CostKind::SwinAttn: {
        int64_t base = 3 * H * W * C * C + 2 * H * W * C * L * L;
        return m.swin_shifted_pass ? 2 * base : base;
    }
    case CostKind::FlowAttn:
        // same leading-term expression as windowed (Swin-style) attention
        return 3 * H * W * C * C + 2 * H * W * C * L * L;
    }
    throw ConfigError("cost: unknown kind");
}

const char* cost_kind_name(CostKind kind) {
    switch (kind) {
    case CostKind::Conv: return "conv";
    case CostKind::SelfAttn: return "self_attn";
    case CostKind::SwinAttn: return "swin_attn";
    case CostKind::FlowAttn: return "flow_attn";
    }
    return "?";
}

InequalityReport verify_inequalities() {
    InequalityReport report;
    for (int64_t C = 3; C <= 64; ++C) {
        for (int64_t L = 3; L <= 15; L += 2) {
            ++report.checked_channel_window;
            int64_t lhs = 3 * C + 2 * L * L;
            int64_t rhs = C * L * L;
            if (lhs > rhs)
                report.violations.push_back({"channel-window", C, L, 0, 0, lhs, rhs});
        }
    }
    for (int64_t L = 3; L <= 15; L += 2) {
        for (int64_t H = L + 1; H <= 64; ++H) {
            for (int64_t W = L + 1; W <= 64; ++W) {
                ++report.checked_window_area;
                if (L * L >= H * W)
                    report.violations.push_back({"window-area", 0, L, H, W, L * L, H * W});
            }
        }
    }
    return report;
}

CounterScope::CounterScope(OpCounter& counter) : previous_(g_active_counter) {
    g_active_counter = &counter;
}

CounterScope::~CounterScope() { g_active_counter = previous_; }

void count_macs(int64_t macs) {
    if (g_active_counter) g_active_counter->macs += macs;
}

int64_t measure_ops(const std::function<void()>& forward) {
    OpCounter counter;
    CounterScope scope(counter);
    forward();
    return counter.macs;
}

void write_cost_csv(const std::vector<CostReportRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write cost report: " + path);
    out << "kind,H,W,C,L,modeled,measured\n";
    for (const auto& r : rows) {
        out << cost_kind_name(r.kind) << "," << r.height << "," << r.width << "," << r.channels
            << "," << r.window << "," << r.modeled << ",";
        if (r.measured >= 0) out << r.measured;
        out << "\n";
    }
}

std::pair<double, double> fit_linear_in_area(const std::vector<std::pair<int64_t, int64_t>>& pts) {
    if (pts.size() < 2) throw ContractError("fit_linear_in_area: need at least 2 points");
    // least squares through the origin: count = k * area
    double sxy = 0.0, sxx = 0.0;
    for (const auto& [x, y] : pts) {
        sxy += static_cast<double>(x) * static_cast<double>(y);
        sxx += static_cast<double>(x) * static_cast<double>(x);
    }
    double k = sxy / sxx;
    double mean_y = 0.0;
    for (const auto& [x, y] : pts) mean_y += static_cast<double>(y);
    mean_y /= static_cast<double>(pts.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (const auto& [x, y] : pts) {
        double e = static_cast<double>(y) - k * static_cast<double>(x);
        ss_res += e * e;
        double d = static_cast<double>(y) - mean_y;
        ss_tot += d * d;
    }
    double r2 = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
    return {k, r2};
}

} // namespace vfift
