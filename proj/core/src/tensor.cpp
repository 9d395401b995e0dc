#include "vfift/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vfift {

namespace {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::shared_ptr<detail::TensorNode> make_node(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

bool any_requires_grad(const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
        if (t.requires_grad()) return true;
    return false;
}

// Keeps only grad-requiring parents on the node; the backward closure still
// captures whatever it needs by value.
void attach(const std::shared_ptr<detail::TensorNode>& result, const std::vector<Tensor>& inputs,
            std::function<void(const std::vector<double>&, GradTable&)> fn) {
    if (!any_requires_grad(inputs)) return;
    result->requires_grad = true;
    for (const auto& t : inputs)
        if (t.requires_grad()) result->parents.push_back(t.node());
    result->backward_fn = std::move(fn);
}

} // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

std::vector<double>& GradTable::of(const detail::TensorNode* n) {
    auto it = bufs_.find(n);
    if (it == bufs_.end())
        it = bufs_.emplace(n, std::vector<double>(n->data.size(), 0.0)).first;
    return it->second;
}

const std::vector<double>* GradTable::find(const detail::TensorNode* n) const {
    auto it = bufs_.find(n);
    return it == bufs_.end() ? nullptr : &it->second;
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
    int64_t n = shape_numel(shape);
    return wrap(make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), value)));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw DimensionError("from_data: " + std::to_string(data.size()) +
                             " values for shape " + shape_str(shape));
    return wrap(make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
    int64_t n = shape_numel(shape);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(static_cast<size_t>(n));
    for (auto& v : data) v = dist(rng);
    return wrap(make_node(std::move(shape), std::move(data)));
}

const Shape& Tensor::shape() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->shape;
}

int Tensor::dim(int axis) const {
    const Shape& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

int64_t Tensor::numel() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->numel();
}

const std::vector<double>& Tensor::values() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

std::vector<double>& Tensor::mutable_values() {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return values()[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    if (!node_) throw ContractError("use of undefined tensor");
    node_->requires_grad = v;
    return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw ContractError("grad(): no gradient buffer; call backward() first");
    return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
    if (!has_grad()) throw ContractError("mutable_grad(): no gradient buffer; call backward() first");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_) throw ContractError("use of undefined tensor");
    node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
    if (!node_) return Tensor();
    return wrap(make_node(node_->shape, node_->data));
}

// --- broadcasting -----------------------------------------------------------

namespace {

enum class Bcast { Same, Scalar, ChannelVec, ChannelMap };

Bcast classify(const Shape& a, const Shape& b) {
    if (a == b) return Bcast::Same;
    if (shape_numel(b) == 1) return Bcast::Scalar;
    if (a.size() == 4 && b.size() == 1 && b[0] == a[1]) return Bcast::ChannelVec;
    if (a.size() == 4 && b.size() == 4 && b[0] == a[0] && b[1] == 1 && b[2] == a[2] && b[3] == a[3])
        return Bcast::ChannelMap;
    throw DimensionError("elementwise: cannot broadcast " + shape_str(b) + " against " + shape_str(a));
}

// Flat index into b for position `i` of a.
struct BcastIndex {
    Bcast kind;
    int64_t chw = 0, hw = 0;
    int64_t operator()(int64_t i) const {
        switch (kind) {
        case Bcast::Same: return i;
        case Bcast::Scalar: return 0;
        case Bcast::ChannelVec: return (i % chw) / hw;
        case Bcast::ChannelMap: return (i / chw) * hw + (i % hw);
        }
        return 0;
    }
};

BcastIndex make_index(Bcast kind, const Shape& a) {
    BcastIndex ix{kind, 0, 0};
    if (kind == Bcast::ChannelVec || kind == Bcast::ChannelMap) {
        ix.hw = static_cast<int64_t>(a[2]) * a[3];
        ix.chw = static_cast<int64_t>(a[1]) * ix.hw;
    }
    return ix;
}

} // namespace

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    Bcast kind = classify(as, b.shape());
    BcastIndex ix = make_index(kind, as);

    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    const int64_t n = static_cast<int64_t>(av.size());
    switch (op) {
    case BinaryOp::Add:
        for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[ix(i)];
        break;
    case BinaryOp::Sub:
        for (int64_t i = 0; i < n; ++i) out[i] = av[i] - bv[ix(i)];
        break;
    case BinaryOp::Mul:
        for (int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[ix(i)];
        break;
    case BinaryOp::Div:
        for (int64_t i = 0; i < n; ++i) out[i] = av[i] / bv[ix(i)];
        break;
    }

    auto result = make_node(as, std::move(out));
    auto an = a.node();
    auto bn = b.node();
    attach(result, {a, b},
           [op, ix, an, bn, n](const std::vector<double>& g, GradTable& t) {
               const auto& av = an->data;
               const auto& bv = bn->data;
               if (an->requires_grad) {
                   auto& ga = t.of(an);
                   switch (op) {
                   case BinaryOp::Add:
                       for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
                       break;
                   case BinaryOp::Sub:
                       for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
                       break;
                   case BinaryOp::Mul:
                       for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bv[ix(i)];
                       break;
                   case BinaryOp::Div:
                       for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / bv[ix(i)];
                       break;
                   }
               }
               if (bn->requires_grad) {
                   auto& gb = t.of(bn);
                   switch (op) {
                   case BinaryOp::Add:
                       for (int64_t i = 0; i < n; ++i) gb[ix(i)] += g[i];
                       break;
                   case BinaryOp::Sub:
                       for (int64_t i = 0; i < n; ++i) gb[ix(i)] -= g[i];
                       break;
                   case BinaryOp::Mul:
                       for (int64_t i = 0; i < n; ++i) gb[ix(i)] += g[i] * av[i];
                       break;
                   case BinaryOp::Div:
                       for (int64_t i = 0; i < n; ++i) {
                           double bb = bv[ix(i)];
                           gb[ix(i)] -= g[i] * av[i] / (bb * bb);
                       }
                       break;
                   }
               }
           });
    return Tensor::wrap(result);
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Mul, a, b); }
Tensor divide(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Div, a, b); }

Tensor scale(const Tensor& a, double s) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
    auto result = make_node(a.shape(), std::move(out));
    auto an = a.node();
    attach(result, {a}, [an, s](const std::vector<double>& g, GradTable& t) {
        auto& ga = t.of(an);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
    return Tensor::wrap(result);
}

Tensor add_scalar(const Tensor& a, double s) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
    auto result = make_node(a.shape(), std::move(out));
    auto an = a.node();
    attach(result, {a}, [an](const std::vector<double>& g, GradTable& t) {
        auto& ga = t.of(an);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return Tensor::wrap(result);
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor abs(const Tensor& a) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::abs(av[i]);
    auto result = make_node(a.shape(), std::move(out));
    auto an = a.node();
    // subgradient 0 at the kink
    attach(result, {a}, [an](const std::vector<double>& g, GradTable& t) {
        auto& ga = t.of(an);
        const auto& av = an->data;
        for (size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0));
    });
    return Tensor::wrap(result);
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto result = make_node({1}, {s});
    auto an = a.node();
    attach(result, {a}, [an](const std::vector<double>& g, GradTable& t) {
        auto& ga = t.of(an);
        for (auto& v : ga) v += g[0];
    });
    return Tensor::wrap(result);
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto result = make_node({1}, {s * inv});
    auto an = a.node();
    attach(result, {a}, [an, inv](const std::vector<double>& g, GradTable& t) {
        auto& ga = t.of(an);
        for (auto& v : ga) v += g[0] * inv;
    });
    return Tensor::wrap(result);
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw DimensionError("reshape: element count mismatch");
    auto result = make_node(std::move(new_shape), a.values());
    auto an = a.node();
    attach(result, {a}, [an](const std::vector<double>& g, GradTable& t) {
        auto& ga = t.of(an);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return Tensor::wrap(result);
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_channels: no inputs");
    const Shape& s0 = parts[0].shape();
    if (s0.size() != 4) throw DimensionError("concat_channels: expects 4D tensors");
    int n = s0[0], h = s0[2], w = s0[3];
    int c_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != 4 || s[0] != n || s[2] != h || s[3] != w)
            throw DimensionError("concat_channels: incompatible shapes");
        c_total += s[1];
    }
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<double> out(static_cast<size_t>(n) * c_total * hw);
    int c_off = 0;
    for (const auto& p : parts) {
        const auto& pv = p.values();
        int pc = p.dim(1);
        for (int b = 0; b < n; ++b)
            std::copy(pv.begin() + b * pc * hw, pv.begin() + (b + 1) * pc * hw,
                      out.begin() + (static_cast<int64_t>(b) * c_total + c_off) * hw);
        c_off += pc;
    }
    auto result = make_node({n, c_total, h, w}, std::move(out));

    std::vector<Tensor> inputs = parts;
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    attach(result, inputs, [nodes, n, c_total, hw](const std::vector<double>& g, GradTable& t) {
        int c_off = 0;
        for (const auto& pn : nodes) {
            int pc = pn->shape[1];
            if (pn->requires_grad) {
                auto& gp = t.of(pn);
                for (int b = 0; b < n; ++b) {
                    const double* src = g.data() + (static_cast<int64_t>(b) * c_total + c_off) * hw;
                    double* dst = gp.data() + static_cast<int64_t>(b) * pc * hw;
                    for (int64_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
                }
            }
            c_off += pc;
        }
    });
    return Tensor::wrap(result);
}

Tensor slice_channels(const Tensor& a, int c0, int c1) {
    const Shape& s = a.shape();
    if (s.size() != 4) throw DimensionError("slice_channels: expects a 4D tensor");
    if (c0 < 0 || c1 > s[1] || c0 >= c1)
        throw DimensionError("slice_channels: range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") out of " + std::to_string(s[1]) + " channels");
    int n = s[0], c = s[1], h = s[2], w = s[3], oc = c1 - c0;
    const int64_t hw = static_cast<int64_t>(h) * w;
    const auto& av = a.values();
    std::vector<double> out(static_cast<size_t>(n) * oc * hw);
    for (int b = 0; b < n; ++b)
        std::copy(av.begin() + (static_cast<int64_t>(b) * c + c0) * hw,
                  av.begin() + (static_cast<int64_t>(b) * c + c1) * hw,
                  out.begin() + static_cast<int64_t>(b) * oc * hw);
    auto result = make_node({n, oc, h, w}, std::move(out));
    auto an = a.node();
    attach(result, {a}, [an, n, c, c0, oc, hw](const std::vector<double>& g, GradTable& t) {
        auto& ga = t.of(an);
        for (int b = 0; b < n; ++b) {
            const double* src = g.data() + static_cast<int64_t>(b) * oc * hw;
            double* dst = ga.data() + (static_cast<int64_t>(b) * c + c0) * hw;
            for (int64_t i = 0; i < oc * hw; ++i) dst[i] += src[i];
        }
    });
    return Tensor::wrap(result);
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    const auto& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::clamp(av[i], lo, hi);
    auto result = make_node(a.shape(), std::move(out));
    auto an = a.node();
    attach(result, {a}, [an, lo, hi](const std::vector<double>& g, GradTable& t) {
        auto& ga = t.of(an);
        const auto& av = an->data;
        for (size_t i = 0; i < g.size(); ++i)
            if (av[i] >= lo && av[i] <= hi) ga[i] += g[i];
    });
    return Tensor::wrap(result);
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined tensor");
    if (loss.numel() != 1) throw ContractError("backward: loss must be scalar");
    auto root = loss.node();
    if (!root->requires_grad) return; // constant loss: all grads stay zero

    // Reverse DFS finish order = topological order with users before inputs.
    std::vector<detail::TensorNode*> order;
    std::unordered_map<detail::TensorNode*, int> state; // 0 new, 1 open, 2 done
    std::vector<detail::TensorNode*> stack{root.get()};
    while (!stack.empty()) {
        detail::TensorNode* n = stack.back();
        int& st = state[n];
        if (st == 0) {
            st = 1;
            for (auto& p : n->parents)
                if (p->requires_grad && state[p.get()] == 0) stack.push_back(p.get());
        } else {
            stack.pop_back();
            if (st == 1) {
                st = 2;
                order.push_back(n);
            }
        }
    }

    GradTable table;
    table.of(root)[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* n = *it;
        if (!n->backward_fn) continue;
        const std::vector<double>* g = table.find(n);
        if (!g) continue;
        n->backward_fn(*g, table);
    }
    for (detail::TensorNode* n : order) {
        const std::vector<double>* g = table.find(n);
        if (!g) continue;
        if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
        for (size_t i = 0; i < g->size(); ++i) n->grad[i] += (*g)[i];
    }
}

} // namespace vfift
