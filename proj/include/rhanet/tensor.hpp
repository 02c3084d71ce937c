#pragma once

// Dense N-d tensors with reverse-mode automatic differentiation over a
// dynamically recorded graph. Float storage is used for training and
// inference; instantiate with double for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rhanet/errors.hpp"

namespace rhanet {

using Shape = std::vector<int>;

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class ValueError : public std::runtime_error {
public:
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

namespace autograd {

// Thread-local recording switch. Inside a NoGradGuard no graph is built,
// so inference passes keep no history.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

} // namespace autograd

namespace detail {

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad; // allocated lazily, same length as values
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(TensorNode&)> backward_rule;

    bool is_leaf() const { return !backward_rule; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), T(0));
    }
};

} // namespace detail

template <typename T = float>
class Tensor {
public:
    using Node = detail::TensorNode<T>;

    Tensor() : node_(std::make_shared<Node>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
        node_->shape = std::move(shape);
        node_->values.assign(static_cast<size_t>(shape_numel(node_->shape)), fill);
    }

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node>()) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        node_->shape = std::move(shape);
        node_->values = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    static Tensor from_node(std::shared_ptr<Node> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(node_->values.size()); }

    std::vector<T>& values() { return node_->values; }
    const std::vector<T>& values() const { return node_->values; }

    T item() const {
        if (size() != 1)
            throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }

    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    const std::vector<T>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Deep copy of values; drops graph history and grad.
    Tensor clone() const {
        Tensor t(node_->shape, node_->values);
        return t;
    }

    void backward() const;

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Topologically ordered record of the operations reachable from a root.
// Parents always precede their consumers in `order`.
template <typename T>
class Graph {
public:
    using Node = detail::TensorNode<T>;

    static Graph trace(const Tensor<T>& root) {
        Graph g;
        g.root_ = root.node();
        // Iterative postorder DFS over parent edges.
        std::vector<std::pair<Node*, size_t>> stack;
        std::vector<Node*> visited;
        stack.emplace_back(g.root_.get(), 0);
        g.mark(g.root_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* p = node->parents[next].get();
                ++next;
                if (!g.seen(p)) {
                    g.mark(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                g.order_.push_back(node);
                stack.pop_back();
            }
        }
        return g;
    }

    // Seeds the root gradient with 1 and applies every backward rule once,
    // in reverse topological order. Fan-out gradients accumulate by sum.
    void run_backward() {
        if (!root_) return;
        for (Node* n : order_) n->ensure_grad();
        root_->grad[0] += T(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            Node* n = *it;
            if (n->backward_rule) n->backward_rule(*n);
        }
        // Intermediate results are one-shot; only leaves keep accumulating.
        for (Node* n : order_) {
            if (!n->is_leaf() && n != root_.get()) {
                n->grad.clear();
                n->grad.shrink_to_fit();
            }
        }
    }

    const std::vector<Node*>& order() const { return order_; }

private:
    std::shared_ptr<Node> root_;
    std::vector<Node*> order_;
    std::vector<Node*> seen_; // sorted pointer set

    bool seen(Node* n) const {
        auto it = std::lower_bound(seen_.begin(), seen_.end(), n);
        return it != seen_.end() && *it == n;
    }
    void mark(Node* n) {
        seen_.insert(std::lower_bound(seen_.begin(), seen_.end(), n), n);
    }
};

template <typename T>
void Tensor<T>::backward() const {
    if (size() != 1)
        throw ShapeError("backward: loss must be a scalar, got " + shape_str(shape()));
    Graph<T>::trace(*this).run_backward();
}

namespace detail {

template <typename T>
inline void check_finite(const std::vector<T>& v, const char* op) {
#ifndef NDEBUG
    for (T x : v) {
        if (std::isnan(x))
            throw NumericsError(std::string(op) + ": NaN produced on finite input");
    }
#else
    (void)v;
    (void)op;
#endif
}

// Builds an op result: output node owns the values and, when recording is on
// and any input needs gradients, the parent edges plus the backward rule.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values,
                         const std::vector<Tensor<T>>& inputs,
                         std::function<void(TensorNode<T>&)> rule, const char* op) {
    check_finite(values, op);
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    bool track = autograd::grad_mode();
    bool any_grad = false;
    for (const auto& in : inputs) any_grad = any_grad || in.requires_grad();
    if (track && any_grad) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node());
        node->backward_rule = std::move(rule);
    }
    return Tensor<T>::from_node(std::move(node));
}

// Row-major strides with zero stride on broadcast (extent-1) axes, padded on
// the left to the output rank.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    const int orank = static_cast<int>(out.size());
    const int irank = static_cast<int>(in.size());
    std::vector<int64_t> natural(static_cast<size_t>(irank));
    int64_t acc = 1;
    for (int d = irank - 1; d >= 0; --d) {
        natural[static_cast<size_t>(d)] = acc;
        acc *= in[static_cast<size_t>(d)];
    }
    std::vector<int64_t> strides(static_cast<size_t>(orank), 0);
    for (int d = 0; d < irank; ++d) {
        const int od = d + orank - irank;
        const int ie = in[static_cast<size_t>(d)];
        if (ie == out[static_cast<size_t>(od)])
            strides[static_cast<size_t>(od)] = natural[static_cast<size_t>(d)];
        else if (ie == 1)
            strides[static_cast<size_t>(od)] = 0;
        else
            throw ShapeError("broadcast: shapes " + shape_str(in) + " and " + shape_str(out) +
                             " are incompatible");
    }
    return strides;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const int rank = static_cast<int>(std::max(a.size(), b.size()));
    Shape out(static_cast<size_t>(rank));
    for (int d = 0; d < rank; ++d) {
        const int ad = d - (rank - static_cast<int>(a.size()));
        const int bd = d - (rank - static_cast<int>(b.size()));
        const int ae = ad >= 0 ? a[static_cast<size_t>(ad)] : 1;
        const int be = bd >= 0 ? b[static_cast<size_t>(bd)] : 1;
        if (ae != be && ae != 1 && be != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcast-compatible");
        out[static_cast<size_t>(d)] = std::max(ae, be);
    }
    return out;
}

// Applies f over the broadcast extent of two operands.
template <typename T, typename F>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& f) {
    const int rank = static_cast<int>(out.size());
    const int64_t n = shape_numel(out);
    std::vector<int> idx(static_cast<size_t>(rank), 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < n; ++i) {
        f(i, oa, ob);
        for (int d = rank - 1; d >= 0; --d) {
            ++idx[static_cast<size_t>(d)];
            oa += sa[static_cast<size_t>(d)];
            ob += sb[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
            oa -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            ob -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
}

// Sums `full` (laid out as `from`) over the axes that were broadcast,
// producing a buffer shaped like `to`.
template <typename T>
std::vector<T> reduce_to_shape(const std::vector<T>& full, const Shape& from, const Shape& to) {
    std::vector<T> out(static_cast<size_t>(shape_numel(to)), T(0));
    const auto st = broadcast_strides(to, from);
    const std::vector<int64_t> sf = [&] {
        std::vector<int64_t> s(from.size());
        int64_t acc = 1;
        for (int d = static_cast<int>(from.size()) - 1; d >= 0; --d) {
            s[static_cast<size_t>(d)] = acc;
            acc *= from[static_cast<size_t>(d)];
        }
        return s;
    }();
    for_each_broadcast<T>(from, sf, st, [&](int64_t, int64_t off_full, int64_t off_out) {
        out[static_cast<size_t>(off_out)] += full[static_cast<size_t>(off_full)];
    });
    return out;
}

template <typename T, typename Fwd>
Tensor<T> elementwise_binary(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, const char* op,
                             std::function<void(TensorNode<T>&)> rule) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
    std::vector<T> out(static_cast<size_t>(shape_numel(out_shape)));
    if (a.shape() == b.shape()) {
        const auto& av = a.values();
        const auto& bv = b.values();
        for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        const auto sa = broadcast_strides(a.shape(), out_shape);
        const auto sb = broadcast_strides(b.shape(), out_shape);
        const auto& av = a.values();
        const auto& bv = b.values();
        for_each_broadcast<T>(out_shape, sa, sb, [&](int64_t i, int64_t oa, int64_t ob) {
            out[static_cast<size_t>(i)] = fwd(av[static_cast<size_t>(oa)], bv[static_cast<size_t>(ob)]);
        });
    }
    return make_op_result<T>(out_shape, std::move(out), {a, b}, std::move(rule), op);
}

} // namespace detail

// Elementwise addition; either operand may broadcast over the other by
// singleton extents (channel weights C×1×1 over C×H×W, spatial maps 1×H×W).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    auto an = a.node();
    auto bn = b.node();
    auto rule = [an, bn](detail::TensorNode<T>& out) {
        if (an->requires_grad) {
            an->ensure_grad();
            if (an->shape == out.shape) {
                for (size_t i = 0; i < out.grad.size(); ++i) an->grad[i] += out.grad[i];
            } else {
                auto r = detail::reduce_to_shape<T>(out.grad, out.shape, an->shape);
                for (size_t i = 0; i < r.size(); ++i) an->grad[i] += r[i];
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            if (bn->shape == out.shape) {
                for (size_t i = 0; i < out.grad.size(); ++i) bn->grad[i] += out.grad[i];
            } else {
                auto r = detail::reduce_to_shape<T>(out.grad, out.shape, bn->shape);
                for (size_t i = 0; i < r.size(); ++i) bn->grad[i] += r[i];
            }
        }
    };
    return detail::elementwise_binary<T>(a, b, [](T x, T y) { return x + y; }, "add", rule);
}

// Elementwise multiplication with the same broadcasting contract as add.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    auto an = a.node();
    auto bn = b.node();
    auto rule = [an, bn](detail::TensorNode<T>& out) {
        const auto sa = detail::broadcast_strides(an->shape, out.shape);
        const auto sb = detail::broadcast_strides(bn->shape, out.shape);
        if (an->requires_grad) {
            an->ensure_grad();
            std::vector<T> full(out.grad.size());
            detail::for_each_broadcast<T>(out.shape, sa, sb, [&](int64_t i, int64_t, int64_t ob) {
                full[static_cast<size_t>(i)] =
                    out.grad[static_cast<size_t>(i)] * bn->values[static_cast<size_t>(ob)];
            });
            auto r = detail::reduce_to_shape<T>(full, out.shape, an->shape);
            for (size_t i = 0; i < r.size(); ++i) an->grad[i] += r[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            std::vector<T> full(out.grad.size());
            detail::for_each_broadcast<T>(out.shape, sa, sb, [&](int64_t i, int64_t oa, int64_t) {
                full[static_cast<size_t>(i)] =
                    out.grad[static_cast<size_t>(i)] * an->values[static_cast<size_t>(oa)];
            });
            auto r = detail::reduce_to_shape<T>(full, out.shape, bn->shape);
            for (size_t i = 0; i < r.size(); ++i) bn->grad[i] += r[i];
        }
    };
    return detail::elementwise_binary<T>(a, b, [](T x, T y) { return x * y; }, "mul", rule);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T alpha) {
    auto xn = x.node();
    std::vector<T> out(x.values());
    for (auto& v : out) v *= alpha;
    auto rule = [xn, alpha](detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += alpha * o.grad[i];
    };
    return detail::make_op_result<T>(x.shape(), std::move(out), {x}, rule, "scale");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

// Full reduction to a scalar.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    auto xn = x.node();
    T acc = T(0);
    for (T v : x.values()) acc += v;
    auto rule = [xn](detail::TensorNode<T>& o) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const T g = o.grad[0];
        for (auto& gv : xn->grad) gv += g;
    };
    return detail::make_op_result<T>(Shape{1}, std::vector<T>{acc}, {x}, rule, "sum");
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }

// Central-difference gradient estimate of a tensor→scalar function, one
// element at a time: (f(x+h·e) − f(x−h·e)) / 2h. The oracle for every
// backward rule in the library; keep it free of autodiff internals.
template <typename T, typename F>
Tensor<T> finite_diff_grad(F&& f, const Tensor<T>& x, T h = T(1e-4)) {
    autograd::NoGradGuard ng;
    Tensor<T> probe = x.clone();
    Tensor<T> out(x.shape());
    auto& pv = probe.values();
    auto& ov = out.values();
    for (size_t i = 0; i < pv.size(); ++i) {
        const T orig = pv[i];
        pv[i] = orig + h;
        const T fp = f(probe).item();
        pv[i] = orig - h;
        const T fm = f(probe).item();
        pv[i] = orig;
        ov[i] = (fp - fm) / (T(2) * h);
    }
    return out;
}

} // namespace rhanet
