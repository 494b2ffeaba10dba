#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "edgi/core.hpp"

namespace edgi {

// Dense tensor participating in a reverse-mode differentiation graph.
// Element type S is float (training/sampling) or double (gradient checks).

template <class S>
struct TensorNode;

template <class S>
using NodePtr = std::shared_ptr<TensorNode<S>>;

template <class S>
struct TensorNode {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated during backward
    bool requires_grad = false;
    std::string op;  // empty for leaves
    std::vector<NodePtr<S>> inputs;
    std::function<void(TensorNode<S>&)> backprop;

    Dim numel() const { return edgi::numel(shape); }
    bool is_leaf() const { return op.empty(); }
};

template <class S>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodePtr<S> node) : node_(std::move(node)) {}

    static Tensor leaf(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<S>>();
        n->shape = std::move(shape);
        n->value.assign(static_cast<size_t>(edgi::numel(n->shape)), S(0));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (edgi::numel(shape) != static_cast<Dim>(data.size()))
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        auto t = leaf(std::move(shape), requires_grad);
        t.node_->value = std::move(data);
        return t;
    }

    static Tensor zeros(Shape shape) { return leaf(std::move(shape)); }

    static Tensor full(Shape shape, S fill) {
        auto t = leaf(std::move(shape));
        std::fill(t.node_->value.begin(), t.node_->value.end(), fill);
        return t;
    }

    static Tensor scalar(S v) { return full({1}, v); }

    static Tensor randn(Shape shape, Rng& rng, S stddev = S(1), bool requires_grad = false) {
        auto t = leaf(std::move(shape), requires_grad);
        for (auto& x : t.node_->value) x = static_cast<S>(rng.normal()) * stddev;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    Dim numel() const { return node_->numel(); }
    Dim dim(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<S>& value() { return node_->value; }
    const std::vector<S>& value() const { return node_->value; }
    const std::vector<S>& grad() const { return node_->grad; }

    S item() const {
        if (numel() != 1) throw std::runtime_error("item: tensor is not scalar");
        return node_->value[0];
    }

    NodePtr<S> node() const { return node_; }

  private:
    NodePtr<S> node_;
};

namespace detail {

template <class S>
Tensor<S> make_op(const std::string& op, Shape shape, std::vector<Tensor<S>> inputs,
                  std::function<void(TensorNode<S>&)> backprop) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(edgi::numel(n->shape)), S(0));
    n->op = op;
    for (auto& t : inputs) {
        n->requires_grad = n->requires_grad || t.requires_grad();
        n->inputs.push_back(t.node());
    }
    n->backprop = std::move(backprop);
    return Tensor<S>(std::move(n));
}

// Right-aligned broadcasting: aligned extents must match or be 1.
inline bool broadcast_shapes(const Shape& a, const Shape& b, Shape& out) {
    size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    out.assign(r, 1);
    for (size_t i = 0; i < r; ++i) {
        Dim da = i < ra ? a[ra - 1 - i] : 1;
        Dim db = i < rb ? b[rb - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) return false;
        out[r - 1 - i] = std::max(da, db);
    }
    return true;
}

// Strides of `shape` when iterated over `out_shape` (0 on broadcast axes).
inline std::vector<Dim> broadcast_strides(const Shape& shape, const Shape& out_shape) {
    auto strides = row_major_strides(shape);
    std::vector<Dim> result(out_shape.size(), 0);
    size_t offset = out_shape.size() - shape.size();
    for (size_t i = 0; i < shape.size(); ++i)
        result[offset + i] = (shape[i] == 1 && out_shape[offset + i] != 1) ? 0 : strides[i];
    return result;
}

template <class S, class Fwd, class BwdA, class BwdB>
Tensor<S> binary_op(const std::string& name, const Tensor<S>& a, const Tensor<S>& b, Fwd fwd,
                    BwdA bwd_a, BwdB bwd_b) {
    Shape out_shape;
    if (!broadcast_shapes(a.shape(), b.shape(), out_shape))
        throw std::invalid_argument(name + ": shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " are not broadcast-compatible");
    auto out = make_op<S>(
        name, out_shape, {a, b}, [name, out_shape, fwd, bwd_a, bwd_b](TensorNode<S>& node) {
            auto& an = *node.inputs[0];
            auto& bn = *node.inputs[1];
            bool same = an.shape == out_shape && bn.shape == out_shape;
            Dim total = node.numel();
            if (same) {
                for (Dim i = 0; i < total; ++i) {
                    size_t u = static_cast<size_t>(i);
                    if (an.requires_grad) an.grad[u] += bwd_a(node.grad[u], an.value[u], bn.value[u]);
                    if (bn.requires_grad) bn.grad[u] += bwd_b(node.grad[u], an.value[u], bn.value[u]);
                }
                return;
            }
            auto sa = broadcast_strides(an.shape, out_shape);
            auto sb = broadcast_strides(bn.shape, out_shape);
            std::vector<Dim> out_strides = row_major_strides(out_shape);
            for (Dim lin = 0; lin < total; ++lin) {
                Dim ia = 0, ib = 0, rem = lin;
                for (size_t d = 0; d < out_shape.size(); ++d) {
                    Dim coord = rem / out_strides[d];
                    rem -= coord * out_strides[d];
                    ia += coord * sa[d];
                    ib += coord * sb[d];
                }
                S g = node.grad[static_cast<size_t>(lin)];
                if (an.requires_grad)
                    an.grad[static_cast<size_t>(ia)] +=
                        bwd_a(g, an.value[static_cast<size_t>(ia)], bn.value[static_cast<size_t>(ib)]);
                if (bn.requires_grad)
                    bn.grad[static_cast<size_t>(ib)] +=
                        bwd_b(g, an.value[static_cast<size_t>(ia)], bn.value[static_cast<size_t>(ib)]);
            }
        });
    // forward
    {
        auto& av = a.value();
        auto& bv = b.value();
        auto& ov = out.value();
        if (a.shape() == out_shape && b.shape() == out_shape) {
            for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
        } else {
            auto sa = broadcast_strides(a.shape(), out_shape);
            auto sb = broadcast_strides(b.shape(), out_shape);
            auto out_strides = row_major_strides(out_shape);
            Dim total = numel(out_shape);
            for (Dim lin = 0; lin < total; ++lin) {
                Dim ia = 0, ib = 0, rem = lin;
                for (size_t d = 0; d < out_shape.size(); ++d) {
                    Dim coord = rem / out_strides[d];
                    rem -= coord * out_strides[d];
                    ia += coord * sa[d];
                    ib += coord * sb[d];
                }
                ov[static_cast<size_t>(lin)] =
                    fwd(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)]);
            }
        }
    }
    return out;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Elementwise ops
// ----------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "add", a, b, [](S x, S y) { return x + y; }, [](S g, S, S) { return g; },
        [](S g, S, S) { return g; });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "sub", a, b, [](S x, S y) { return x - y; }, [](S g, S, S) { return g; },
        [](S g, S, S) { return -g; });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "mul", a, b, [](S x, S y) { return x * y; }, [](S g, S, S y) { return g * y; },
        [](S g, S x, S) { return g * x; });
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "div", a, b, [](S x, S y) { return x / y; }, [](S g, S, S y) { return g / y; },
        [](S g, S x, S y) { return -g * x / (y * y); });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
    auto out = detail::make_op<S>("scale", a.shape(), {a}, [factor](TensorNode<S>& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i) an.grad[i] += node.grad[i] * factor;
    });
    const auto& av = a.value();
    auto& ov = out.value();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
    return out;
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
    return scale(a, S(-1));
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
    auto out = detail::make_op<S>("relu", a.shape(), {a}, [](TensorNode<S>& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i)
            if (an.value[i] > S(0)) an.grad[i] += node.grad[i];
    });
    const auto& av = a.value();
    auto& ov = out.value();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > S(0) ? av[i] : S(0);
    return out;
}

namespace detail {
template <class S>
inline S softplus(S x) {
    if (x > S(20)) return x;
    if (x < S(-20)) return std::exp(x);
    return std::log(S(1) + std::exp(x));
}
}  // namespace detail

// mish(x) = x * tanh(softplus(x))
template <class S>
Tensor<S> mish(const Tensor<S>& a) {
    auto out = detail::make_op<S>("mish", a.shape(), {a}, [](TensorNode<S>& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i) {
            S x = an.value[i];
            S t = std::tanh(detail::softplus(x));
            S sig = S(1) / (S(1) + std::exp(-x));
            an.grad[i] += node.grad[i] * (t + x * (S(1) - t * t) * sig);
        }
    });
    const auto& av = a.value();
    auto& ov = out.value();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * std::tanh(detail::softplus(av[i]));
    return out;
}

template <class S>
Tensor<S> sqrt_op(const Tensor<S>& a) {
    auto out = detail::make_op<S>("sqrt", a.shape(), {a}, [](TensorNode<S>& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i)
            an.grad[i] += node.grad[i] * S(0.5) / node.value[i];
    });
    const auto& av = a.value();
    auto& ov = out.value();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::sqrt(av[i]);
    return out;
}

template <class S>
Tensor<S> square(const Tensor<S>& a) {
    return mul(a, a);
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <class S>
Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }

// ----------------------------------------------------------------------------
// Reductions
// ----------------------------------------------------------------------------

namespace detail {
inline void check_axis(const std::string& op, const Shape& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw std::invalid_argument(op + ": axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(shape));
}

inline void axis_split(const Shape& shape, int axis, Dim& outer, Dim& extent, Dim& inner) {
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    extent = shape[axis];
    inner = 1;
    for (size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
}

inline Shape drop_axis(const Shape& shape, int axis) {
    Shape out;
    for (int i = 0; i < static_cast<int>(shape.size()); ++i)
        if (i != axis) out.push_back(shape[i]);
    if (out.empty()) out.push_back(1);
    return out;
}
}  // namespace detail

template <class S>
Tensor<S> sum(const Tensor<S>& a, int axis) {
    detail::check_axis("sum", a.shape(), axis);
    Dim outer, extent, inner;
    detail::axis_split(a.shape(), axis, outer, extent, inner);
    auto out = detail::make_op<S>("sum", detail::drop_axis(a.shape(), axis), {a},
                                  [outer, extent, inner](TensorNode<S>& node) {
                                      auto& an = *node.inputs[0];
                                      if (!an.requires_grad) return;
                                      for (Dim o = 0; o < outer; ++o)
                                          for (Dim e = 0; e < extent; ++e)
                                              for (Dim i = 0; i < inner; ++i)
                                                  an.grad[static_cast<size_t>((o * extent + e) * inner + i)] +=
                                                      node.grad[static_cast<size_t>(o * inner + i)];
                                  });
    const auto& av = a.value();
    auto& ov = out.value();
    for (Dim o = 0; o < outer; ++o)
        for (Dim i = 0; i < inner; ++i) {
            S acc = S(0);
            for (Dim e = 0; e < extent; ++e)
                acc += av[static_cast<size_t>((o * extent + e) * inner + i)];
            ov[static_cast<size_t>(o * inner + i)] = acc;
        }
    return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a, int axis) {
    Dim extent = a.shape()[static_cast<size_t>(axis)];
    return scale(sum(a, axis), S(1) / static_cast<S>(extent));
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
    Dim total = a.numel();
    (void)total;
    auto out = detail::make_op<S>("sum_all", {1}, {a}, [](TensorNode<S>& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        for (auto& g : an.grad) g += node.grad[0];
    });
    S acc = S(0);
    for (S x : a.value()) acc += x;
    out.value()[0] = acc;
    return out;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

// Max over an axis; ties resolve to the first occurrence.
template <class S>
Tensor<S> max_reduce(const Tensor<S>& a, int axis) {
    detail::check_axis("max", a.shape(), axis);
    Dim outer, extent, inner;
    detail::axis_split(a.shape(), axis, outer, extent, inner);
    auto argmax = std::make_shared<std::vector<Dim>>(static_cast<size_t>(outer * inner));
    auto out = detail::make_op<S>("max", detail::drop_axis(a.shape(), axis), {a},
                                  [outer, extent, inner, argmax](TensorNode<S>& node) {
                                      auto& an = *node.inputs[0];
                                      if (!an.requires_grad) return;
                                      for (Dim o = 0; o < outer; ++o)
                                          for (Dim i = 0; i < inner; ++i) {
                                              Dim e = (*argmax)[static_cast<size_t>(o * inner + i)];
                                              an.grad[static_cast<size_t>((o * extent + e) * inner + i)] +=
                                                  node.grad[static_cast<size_t>(o * inner + i)];
                                          }
                                  });
    const auto& av = a.value();
    auto& ov = out.value();
    for (Dim o = 0; o < outer; ++o)
        for (Dim i = 0; i < inner; ++i) {
            Dim best = 0;
            S best_v = av[static_cast<size_t>(o * extent * inner + i)];
            for (Dim e = 1; e < extent; ++e) {
                S v = av[static_cast<size_t>((o * extent + e) * inner + i)];
                if (v > best_v) {
                    best_v = v;
                    best = e;
                }
            }
            ov[static_cast<size_t>(o * inner + i)] = best_v;
            (*argmax)[static_cast<size_t>(o * inner + i)] = best;
        }
    return out;
}

template <class S>
Tensor<S> min_reduce(const Tensor<S>& a, int axis) {
    return neg(max_reduce(neg(a), axis));
}

// Numerically stable softmax over the given axis.
template <class S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
    detail::check_axis("softmax", a.shape(), axis);
    Dim outer, extent, inner;
    detail::axis_split(a.shape(), axis, outer, extent, inner);
    auto out = detail::make_op<S>("softmax", a.shape(), {a},
                                  [outer, extent, inner](TensorNode<S>& node) {
                                      auto& an = *node.inputs[0];
                                      if (!an.requires_grad) return;
                                      for (Dim o = 0; o < outer; ++o)
                                          for (Dim i = 0; i < inner; ++i) {
                                              S dot = S(0);
                                              for (Dim e = 0; e < extent; ++e) {
                                                  size_t k = static_cast<size_t>((o * extent + e) * inner + i);
                                                  dot += node.grad[k] * node.value[k];
                                              }
                                              for (Dim e = 0; e < extent; ++e) {
                                                  size_t k = static_cast<size_t>((o * extent + e) * inner + i);
                                                  an.grad[k] += node.value[k] * (node.grad[k] - dot);
                                              }
                                          }
                                  });
    const auto& av = a.value();
    auto& ov = out.value();
    for (Dim o = 0; o < outer; ++o)
        for (Dim i = 0; i < inner; ++i) {
            S m = av[static_cast<size_t>(o * extent * inner + i)];
            for (Dim e = 1; e < extent; ++e)
                m = std::max(m, av[static_cast<size_t>((o * extent + e) * inner + i)]);
            S z = S(0);
            for (Dim e = 0; e < extent; ++e) {
                size_t k = static_cast<size_t>((o * extent + e) * inner + i);
                ov[k] = std::exp(av[k] - m);
                z += ov[k];
            }
            for (Dim e = 0; e < extent; ++e) ov[static_cast<size_t>((o * extent + e) * inner + i)] /= z;
        }
    return out;
}

// ----------------------------------------------------------------------------
// Shape ops
// ----------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
    // one extent may be -1 (inferred)
    Dim known = 1;
    int infer = -1;
    for (int i = 0; i < static_cast<int>(new_shape.size()); ++i) {
        if (new_shape[i] == -1) {
            if (infer >= 0) throw std::invalid_argument("reshape: multiple -1 extents");
            infer = i;
        } else {
            known *= new_shape[i];
        }
    }
    if (infer >= 0) new_shape[infer] = a.numel() / known;
    if (numel(new_shape) != a.numel())
        throw std::invalid_argument("reshape: cannot reshape " + shape_str(a.shape()) + " to " +
                                    shape_str(new_shape));
    auto out = detail::make_op<S>("reshape", new_shape, {a}, [](TensorNode<S>& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        for (size_t i = 0; i < node.grad.size(); ++i) an.grad[i] += node.grad[i];
    });
    out.value() = a.value();
    return out;
}

template <class S>
Tensor<S> permute(const Tensor<S>& a, std::vector<int> axes) {
    if (static_cast<int>(axes.size()) != a.rank())
        throw std::invalid_argument("permute: axes rank mismatch for " + shape_str(a.shape()));
    Shape out_shape(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) out_shape[i] = a.shape()[static_cast<size_t>(axes[i])];
    auto in_strides = row_major_strides(a.shape());
    auto out_strides = row_major_strides(out_shape);
    // src stride per output axis
    std::vector<Dim> src_stride(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) src_stride[i] = in_strides[static_cast<size_t>(axes[i])];
    Dim total = a.numel();
    auto map_fwd = [out_shape, out_strides, src_stride, total](const std::vector<S>& src,
                                                               std::vector<S>& dst, bool add) {
        for (Dim lin = 0; lin < total; ++lin) {
            Dim rem = lin, si = 0;
            for (size_t d = 0; d < out_shape.size(); ++d) {
                Dim coord = rem / out_strides[d];
                rem -= coord * out_strides[d];
                si += coord * src_stride[d];
            }
            if (add)
                dst[static_cast<size_t>(si)] += src[static_cast<size_t>(lin)];
            else
                dst[static_cast<size_t>(lin)] = src[static_cast<size_t>(si)];
        }
    };
    auto out = detail::make_op<S>("permute", out_shape, {a}, [map_fwd](TensorNode<S>& node) {
        auto& an = *node.inputs[0];
        if (!an.requires_grad) return;
        map_fwd(node.grad, an.grad, true);
    });
    map_fwd(a.value(), out.value(), false);
    return out;
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int axis, Dim start, Dim length) {
    detail::check_axis("slice", a.shape(), axis);
    if (start < 0 || length < 0 || start + length > a.shape()[static_cast<size_t>(axis)])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + length) + ") out of bounds for " +
                                    shape_str(a.shape()));
    Dim outer, extent, inner;
    detail::axis_split(a.shape(), axis, outer, extent, inner);
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = length;
    auto out = detail::make_op<S>(
        "slice", out_shape, {a}, [outer, extent, inner, start, length](TensorNode<S>& node) {
            auto& an = *node.inputs[0];
            if (!an.requires_grad) return;
            for (Dim o = 0; o < outer; ++o)
                for (Dim e = 0; e < length; ++e)
                    for (Dim i = 0; i < inner; ++i)
                        an.grad[static_cast<size_t>((o * extent + start + e) * inner + i)] +=
                            node.grad[static_cast<size_t>((o * length + e) * inner + i)];
        });
    const auto& av = a.value();
    auto& ov = out.value();
    for (Dim o = 0; o < outer; ++o)
        for (Dim e = 0; e < length; ++e)
            std::memcpy(&ov[static_cast<size_t>((o * length + e) * inner)],
                        &av[static_cast<size_t>((o * extent + start + e) * inner)],
                        static_cast<size_t>(inner) * sizeof(S));
    return out;
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    detail::check_axis("concat", parts[0].shape(), axis);
    Shape out_shape = parts[0].shape();
    Dim total_extent = 0;
    for (const auto& p : parts) {
        if (p.rank() != parts[0].rank())
            throw std::invalid_argument("concat: rank mismatch");
        for (int d = 0; d < p.rank(); ++d)
            if (d != axis && p.shape()[static_cast<size_t>(d)] != out_shape[static_cast<size_t>(d)])
                throw std::invalid_argument("concat: shape mismatch between " +
                                            shape_str(parts[0].shape()) + " and " +
                                            shape_str(p.shape()));
        total_extent += p.shape()[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total_extent;
    Dim outer, extent_out, inner;
    detail::axis_split(out_shape, axis, outer, extent_out, inner);
    std::vector<Dim> extents;
    for (const auto& p : parts) extents.push_back(p.shape()[static_cast<size_t>(axis)]);
    auto out = detail::make_op<S>(
        "concat", out_shape, parts, [outer, extent_out, inner, extents](TensorNode<S>& node) {
            Dim offset = 0;
            for (size_t pi = 0; pi < node.inputs.size(); ++pi) {
                auto& pn = *node.inputs[pi];
                Dim ext = extents[pi];
                if (pn.requires_grad) {
                    for (Dim o = 0; o < outer; ++o)
                        for (Dim e = 0; e < ext; ++e)
                            for (Dim i = 0; i < inner; ++i)
                                pn.grad[static_cast<size_t>((o * ext + e) * inner + i)] +=
                                    node.grad[static_cast<size_t>((o * extent_out + offset + e) * inner + i)];
                }
                offset += ext;
            }
        });
    auto& ov = out.value();
    Dim offset = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const auto& pv = parts[pi].value();
        Dim ext = extents[pi];
        for (Dim o = 0; o < outer; ++o)
            for (Dim e = 0; e < ext; ++e)
                std::memcpy(&ov[static_cast<size_t>((o * extent_out + offset + e) * inner)],
                            &pv[static_cast<size_t>((o * ext + e) * inner)],
                            static_cast<size_t>(inner) * sizeof(S));
        offset += ext;
    }
    return out;
}

// Upper triangle (including diagonal) of the trailing [m, m] block, flattened
// to m(m+1)/2 entries in row-major order.
template <class S>
Tensor<S> triu_vec(const Tensor<S>& a) {
    if (a.rank() < 2) throw std::invalid_argument("triu_vec: rank must be >= 2");
    Dim m = a.shape()[static_cast<size_t>(a.rank() - 1)];
    if (a.shape()[static_cast<size_t>(a.rank() - 2)] != m)
        throw std::invalid_argument("triu_vec: trailing block not square in " + shape_str(a.shape()));
    Dim pairs = m * (m + 1) / 2;
    Dim batch = a.numel() / (m * m);
    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(pairs);
    std::vector<Dim> index;
    index.reserve(static_cast<size_t>(pairs));
    for (Dim i = 0; i < m; ++i)
        for (Dim j = i; j < m; ++j) index.push_back(i * m + j);
    auto out = detail::make_op<S>("triu_vec", out_shape, {a},
                                  [batch, m, pairs, index](TensorNode<S>& node) {
                                      auto& an = *node.inputs[0];
                                      if (!an.requires_grad) return;
                                      for (Dim b = 0; b < batch; ++b)
                                          for (Dim k = 0; k < pairs; ++k)
                                              an.grad[static_cast<size_t>(b * m * m + index[static_cast<size_t>(k)])] +=
                                                  node.grad[static_cast<size_t>(b * pairs + k)];
                                  });
    const auto& av = a.value();
    auto& ov = out.value();
    for (Dim b = 0; b < batch; ++b)
        for (Dim k = 0; k < pairs; ++k)
            ov[static_cast<size_t>(b * pairs + k)] =
                av[static_cast<size_t>(b * m * m + index[static_cast<size_t>(k)])];
    return out;
}

// Nearest-neighbor upsampling of the last axis by an integer factor.
template <class S>
Tensor<S> upsample_last(const Tensor<S>& a, Dim factor) {
    Dim t = a.shape().back();
    Dim batch = a.numel() / t;
    Shape out_shape = a.shape();
    out_shape.back() = t * factor;
    auto out = detail::make_op<S>("upsample_last", out_shape, {a},
                                  [batch, t, factor](TensorNode<S>& node) {
                                      auto& an = *node.inputs[0];
                                      if (!an.requires_grad) return;
                                      for (Dim b = 0; b < batch; ++b)
                                          for (Dim i = 0; i < t; ++i) {
                                              S acc = S(0);
                                              for (Dim f = 0; f < factor; ++f)
                                                  acc += node.grad[static_cast<size_t>((b * t + i) * factor + f)];
                                              an.grad[static_cast<size_t>(b * t + i)] += acc;
                                          }
                                  });
    const auto& av = a.value();
    auto& ov = out.value();
    for (Dim b = 0; b < batch; ++b)
        for (Dim i = 0; i < t; ++i)
            for (Dim f = 0; f < factor; ++f)
                ov[static_cast<size_t>((b * t + i) * factor + f)] = av[static_cast<size_t>(b * t + i)];
    return out;
}

// ----------------------------------------------------------------------------
// Matrix multiplication: contracts the last axis of a with the second-to-last
// of b. Leading axes must match elementwise, or be absent on one operand
// (rank-2 weight shared across the batch).
// ----------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw std::invalid_argument("matmul: ranks must be >= 2, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    Dim m = a.shape()[static_cast<size_t>(a.rank() - 2)];
    Dim k = a.shape()[static_cast<size_t>(a.rank() - 1)];
    Dim kb = b.shape()[static_cast<size_t>(b.rank() - 2)];
    Dim n = b.shape()[static_cast<size_t>(b.rank() - 1)];
    if (k != kb)
        throw std::invalid_argument("matmul: inner extents disagree between " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    Shape lead;
    if (lead_a == lead_b)
        lead = lead_a;
    else if (lead_b.empty())
        lead = lead_a;
    else if (lead_a.empty())
        lead = lead_b;
    else
        throw std::invalid_argument("matmul: leading axes disagree between " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    Dim batch = numel(lead);
    bool a_shared = lead_a.empty() && !lead.empty();
    bool b_shared = lead_b.empty() && !lead.empty();
    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);
    auto out = detail::make_op<S>(
        "matmul", out_shape, {a, b},
        [m, n, k, batch, a_shared, b_shared](TensorNode<S>& node) {
            auto& an = *node.inputs[0];
            auto& bn = *node.inputs[1];
            for (Dim bi = 0; bi < batch; ++bi) {
                const S* gv = node.grad.data() + bi * m * n;
                const S* av = an.value.data() + (a_shared ? 0 : bi * m * k);
                const S* bv = bn.value.data() + (b_shared ? 0 : bi * k * n);
                if (an.requires_grad) {
                    S* ag = an.grad.data() + (a_shared ? 0 : bi * m * k);
                    gemm(false, true, m, k, n, S(1), gv, n, bv, n, S(1), ag, k);
                }
                if (bn.requires_grad) {
                    S* bg = bn.grad.data() + (b_shared ? 0 : bi * k * n);
                    gemm(true, false, k, n, m, S(1), av, k, gv, n, S(1), bg, n);
                }
            }
        });
    const S* av = a.value().data();
    const S* bv = b.value().data();
    S* ov = out.value().data();
    for (Dim bi = 0; bi < batch; ++bi)
        gemm(false, false, m, n, k, S(1), av + (a_shared ? 0 : bi * m * k), k,
             bv + (b_shared ? 0 : bi * k * n), n, S(0), ov + bi * m * n, n);
    return out;
}

// ----------------------------------------------------------------------------
// 1D convolution, bias-free. Input [..., C_in, T], kernel [C_out, C_in, K];
// leading input axes are batch. Same-length output for odd K via pad (K-1)/2;
// the strided variant backs temporal resampling.
// ----------------------------------------------------------------------------

enum class PadMode { kZero, kCircular };

namespace detail {

// im2col index: column matrix [C_in*K, T_out], entry (c*K+k, to) reads
// input position to*stride + k - pad (wrapped or zero-padded).
template <class S>
void im2col(const S* x, Dim c_in, Dim t_in, Dim kk, Dim t_out, Dim stride, Dim pad,
            PadMode mode, S* col) {
    for (Dim c = 0; c < c_in; ++c)
        for (Dim k = 0; k < kk; ++k) {
            S* row = col + (c * kk + k) * t_out;
            for (Dim to = 0; to < t_out; ++to) {
                Dim ti = to * stride + k - pad;
                if (mode == PadMode::kCircular) {
                    ti = ((ti % t_in) + t_in) % t_in;
                    row[to] = x[c * t_in + ti];
                } else {
                    row[to] = (ti >= 0 && ti < t_in) ? x[c * t_in + ti] : S(0);
                }
            }
        }
}

template <class S>
void col2im_add(const S* col, Dim c_in, Dim t_in, Dim kk, Dim t_out, Dim stride, Dim pad,
                PadMode mode, S* x) {
    for (Dim c = 0; c < c_in; ++c)
        for (Dim k = 0; k < kk; ++k) {
            const S* row = col + (c * kk + k) * t_out;
            for (Dim to = 0; to < t_out; ++to) {
                Dim ti = to * stride + k - pad;
                if (mode == PadMode::kCircular) {
                    ti = ((ti % t_in) + t_in) % t_in;
                    x[c * t_in + ti] += row[to];
                } else if (ti >= 0 && ti < t_in) {
                    x[c * t_in + ti] += row[to];
                }
            }
        }
}

}  // namespace detail

template <class S>
Tensor<S> conv1d_strided(const Tensor<S>& input, const Tensor<S>& kernel, Dim stride, Dim pad,
                         PadMode mode) {
    if (input.rank() < 2 || kernel.rank() != 3)
        throw std::invalid_argument("conv1d: input " + shape_str(input.shape()) +
                                    " must have rank >= 2 and kernel " +
                                    shape_str(kernel.shape()) + " rank 3");
    Dim t_in = input.shape()[static_cast<size_t>(input.rank() - 1)];
    Dim c_in = input.shape()[static_cast<size_t>(input.rank() - 2)];
    Dim c_out = kernel.shape()[0];
    Dim kc_in = kernel.shape()[1];
    Dim kk = kernel.shape()[2];
    if (kc_in != c_in)
        throw std::invalid_argument("conv1d: input channels of " + shape_str(input.shape()) +
                                    " disagree with kernel " + shape_str(kernel.shape()));
    Dim t_out = (t_in + 2 * pad - kk) / stride + 1;
    if (t_out < 1) throw std::invalid_argument("conv1d: kernel longer than padded input");
    Dim batch = input.numel() / (c_in * t_in);
    Shape out_shape(input.shape().begin(), input.shape().end() - 2);
    out_shape.push_back(c_out);
    out_shape.push_back(t_out);
    auto out = detail::make_op<S>(
        "conv1d", out_shape, {input, kernel},
        [batch, c_in, t_in, c_out, kk, t_out, stride, pad, mode](TensorNode<S>& node) {
            auto& xn = *node.inputs[0];
            auto& kn = *node.inputs[1];
            std::vector<S> col(static_cast<size_t>(c_in * kk * t_out));
            std::vector<S> dcol(static_cast<size_t>(c_in * kk * t_out));
            for (Dim b = 0; b < batch; ++b) {
                const S* gv = node.grad.data() + b * c_out * t_out;
                if (kn.requires_grad) {
                    detail::im2col(xn.value.data() + b * c_in * t_in, c_in, t_in, kk, t_out,
                                   stride, pad, mode, col.data());
                    // dk [C_out, C_in*K] += g [C_out, T_out] @ col^T
                    gemm(false, true, c_out, c_in * kk, t_out, S(1), gv, t_out, col.data(), t_out,
                         S(1), kn.grad.data(), c_in * kk);
                }
                if (xn.requires_grad) {
                    // dcol [C_in*K, T_out] = k^T [C_in*K, C_out] @ g
                    gemm(true, false, c_in * kk, t_out, c_out, S(1), kn.value.data(), c_in * kk,
                         gv, t_out, S(0), dcol.data(), t_out);
                    detail::col2im_add(dcol.data(), c_in, t_in, kk, t_out, stride, pad, mode,
                                       xn.grad.data() + b * c_in * t_in);
                }
            }
        });
    const S* xv = input.value().data();
    const S* kv = kernel.value().data();
    S* ov = out.value().data();
    std::vector<S> col(static_cast<size_t>(c_in * kk * t_out));
    for (Dim b = 0; b < batch; ++b) {
        detail::im2col(xv + b * c_in * t_in, c_in, t_in, kk, t_out, stride, pad, mode, col.data());
        gemm(false, false, c_out, t_out, c_in * kk, S(1), kv, c_in * kk, col.data(), t_out, S(0),
             ov + b * c_out * t_out, t_out);
    }
    return out;
}

// Same-length convolution; K must be odd.
template <class S>
Tensor<S> conv1d(const Tensor<S>& input, const Tensor<S>& kernel, PadMode mode = PadMode::kZero) {
    Dim kk = kernel.shape()[2];
    if (kk % 2 == 0)
        throw std::invalid_argument("conv1d: kernel size " + std::to_string(kk) +
                                    " must be odd for same-length output");
    return conv1d_strided(input, kernel, 1, (kk - 1) / 2, mode);
}

// ----------------------------------------------------------------------------
// Reverse-mode differentiation
// ----------------------------------------------------------------------------

template <class S>
void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(loss.shape()));
    // Topological order by iterative DFS.
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> visited;
    struct Frame {
        TensorNode<S>* node;
        size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_input < f.node->inputs.size()) {
            TensorNode<S>* child = f.node->inputs[f.next_input++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    for (auto* node : order) node->grad.assign(node->value.size(), S(0));
    loss.node()->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<S>* node = *it;
        if (!node->is_leaf() && node->requires_grad && node->backprop) node->backprop(*node);
    }
}

}  // namespace edgi
