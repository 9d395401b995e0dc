#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "vfift/errors.hpp"

namespace vfift {

using Shape = std::vector<int>;
using Rng = std::mt19937_64;

class GradTable;

namespace detail {

/// Shared storage behind a Tensor handle. Data is immutable once the forward
/// op that produced it returns; only `grad` (and parameter data between
/// optimizer steps) is written afterwards.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // allocated lazily, same size as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(const std::vector<double>&, GradTable&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

} // namespace detail

/// Scratch gradients for one backward traversal. Keeping per-pass gradients
/// out of the nodes makes repeated backward() calls accumulate exactly.
class GradTable {
public:
    std::vector<double>& of(const std::shared_ptr<detail::TensorNode>& n) { return of(n.get()); }
    std::vector<double>& of(const detail::TensorNode* n);
    const std::vector<double>* find(const detail::TensorNode* n) const;

private:
    std::unordered_map<const detail::TensorNode*, std::vector<double>> bufs_;
};

/// Dense 64-bit tensor with reverse-mode differentiation. Copies share
/// storage; image tensors use row-major NCHW (batch, channel, row, col).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor ones(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int ndim() const { return static_cast<int>(shape().size()); }
    int dim(int axis) const;
    int64_t numel() const;

    const std::vector<double>& values() const;
    std::vector<double>& mutable_values(); // parameters only, between steps
    double value_at(int64_t flat) const { return values()[static_cast<size_t>(flat)]; }
    double item() const; // scalar tensors

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    bool has_grad() const;
    const std::vector<double>& grad() const;
    std::vector<double>& mutable_grad(); // existing buffer required
    void zero_grad();                    // allocates a zero buffer if absent

    /// Same data, no graph history. Used where a value must not receive
    /// gradient (e.g. flow values read by the window locator).
    Tensor detach() const;

    const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::TensorNode> n);

private:
    std::shared_ptr<detail::TensorNode> node_;
};

/// Named parameters. std::map keeps deterministic iteration order for the
/// optimizer and checkpoint writer.
using ParamMap = std::map<std::string, Tensor>;

enum class BinaryOp { Add, Sub, Mul, Div };

/// Pointwise binary op. `b` may share `a`'s shape, be a scalar, a [C] vector
/// matching a 4D tensor's channel count, or an [N,1,H,W] map broadcast over
/// channels.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape new_shape);

/// Concatenate 4D tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Channels [c0, c1) of a 4D tensor.
Tensor slice_channels(const Tensor& a, int c0, int c1);
/// Clamp values to [lo, hi]; gradient passes through the interior only.
Tensor clamp(const Tensor& a, double lo, double hi);

/// Fill grad buffers of every tensor the scalar `loss` depends on.
/// Repeated calls accumulate: two passes give exactly twice the grad.
void backward(const Tensor& loss);

int64_t shape_numel(const Shape& s);
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

} // namespace vfift
