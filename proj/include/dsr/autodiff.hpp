#pragma once

// Tape-based reverse-mode differentiation.
//
// A Graph owns every node created while evaluating one forward pass. Nodes
// are appended in creation order, which is already a topological order, so
// backward() simply walks the tape from the loss towards the leaves.

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dsr/errors.hpp"
#include "dsr/kernels.hpp"
#include "dsr/tensor.hpp"

namespace dsr {

template <typename T>
class Graph;

template <typename T>
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return graph_ != nullptr; }
    Graph<T>& graph() const { return *graph_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor<T>& value() const { return graph_->value(id_); }
    const Tensor<T>& grad() const { return graph_->grad(id_); }
    const Shape& shape() const { return value().shape(); }

private:
    friend class Graph<T>;
    Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

    Graph<T>* graph_ = nullptr;
    std::size_t id_ = 0;
};

template <typename T>
class Graph {
public:
    // Called with the graph and the id of the node being differentiated;
    // reads grad(self) and accumulates into its inputs' gradient buffers.
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;
    using value_type = T;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, true, {}, nullptr); }
    Var<T> parameter(Tensor<T> value) { return push(std::move(value), true, true, {}, nullptr); }

    // Records an operation node. The node needs a gradient iff any input does;
    // otherwise the backward closure is dropped.
    Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
        for (std::size_t in : inputs) {
            if (in >= nodes_.size()) throw UsageError("node input refers to a later node");
        }
        if (!value.all_finite()) {
            throw NumericError("non-finite value produced by forward op (node " + std::to_string(nodes_.size()) + ")");
        }
        bool needs = false;
        for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
        return push(std::move(value), needs, false, std::move(inputs), needs ? std::move(backward) : nullptr);
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    const Tensor<T>& grad(std::size_t id) const {
        const Node& n = nodes_.at(id);
        if (n.grad.size() != n.value.size()) {
            // Unreached nodes report a zero gradient of the right shape.
            n.grad = Tensor<T>(n.value.shape());
        }
        return n.grad;
    }

    // Gradient buffer for accumulation; allocated zero-filled on first use.
    Tensor<T>& grad_buffer(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

    // Leaf gradients accumulate across calls until zero_grad(); interior
    // gradients are recomputed from scratch on every call.
    void backward(const Var<T>& loss) {
        if (loss.graph_ != this) throw UsageError("loss belongs to a different graph");
        const Node& root = nodes_.at(loss.id_);
        if (root.value.size() != 1) {
            throw UsageError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
        }
        if (!std::isfinite(static_cast<double>(root.value[0]))) throw NumericError("backward on non-finite loss");
        for (Node& n : nodes_)
            if (!n.is_leaf) n.grad = Tensor<T>();
        if (!root.requires_grad) return;
        grad_buffer(loss.id_)[0] += T{1};
        for (std::size_t id = loss.id_ + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.is_leaf || !n.requires_grad || !n.backward || n.grad.size() != n.value.size()) continue;
            n.backward(*this, id);
        }
    }

    void zero_grad() {
        for (Node& n : nodes_) n.grad = Tensor<T>();
    }

private:
    struct Node {
        Tensor<T> value;
        mutable Tensor<T> grad;
        bool requires_grad = false;
        bool is_leaf = true;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };

    Var<T> push(Tensor<T> value, bool requires_grad, bool leaf, std::vector<std::size_t> inputs,
                BackwardFn backward) {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, leaf, std::move(inputs), std::move(backward)});
        return Var<T>(this, nodes_.size() - 1);
    }

    // deque keeps references to existing nodes valid while new ones are appended.
    std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Activations

enum class ActivationKind { relu, leaky_relu, softplus };

struct Activation {
    ActivationKind kind = ActivationKind::leaky_relu;
    double alpha = 0.01;  // leaky slope

    static Activation relu() { return {ActivationKind::relu, 0.0}; }
    static Activation leaky_relu(double a) { return {ActivationKind::leaky_relu, a}; }
    static Activation softplus() { return {ActivationKind::softplus, 0.0}; }

    static Activation parse(const std::string& name, double alpha = 0.01) {
        if (name == "relu") return relu();
        if (name == "leaky_relu") return leaky_relu(alpha);
        if (name == "softplus") return softplus();
        throw ConfigError("unknown activation kind '" + name + "'");
    }

    std::string name() const {
        switch (kind) {
            case ActivationKind::relu: return "relu";
            case ActivationKind::leaky_relu: return "leaky_relu";
            case ActivationKind::softplus: return "softplus";
        }
        return "?";
    }

    template <typename T>
    T apply(T x) const {
        switch (kind) {
            case ActivationKind::relu: return x > T{0} ? x : T{0};
            case ActivationKind::leaky_relu: return x > T{0} ? x : static_cast<T>(alpha) * x;
            case ActivationKind::softplus: return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
        }
        return x;
    }

    // Derivative; the kink of relu/leaky relu at 0 takes the left slope.
    template <typename T>
    T slope(T x) const {
        switch (kind) {
            case ActivationKind::relu: return x > T{0} ? T{1} : T{0};
            case ActivationKind::leaky_relu: return x > T{0} ? T{1} : static_cast<T>(alpha);
            case ActivationKind::softplus: return T{1} / (T{1} + std::exp(-x));
        }
        return T{1};
    }
};

namespace ad {

namespace detail {

template <typename T>
void require_same_graph(const Var<T>& a, const Var<T>& b) {
    if (&a.graph() != &b.graph()) throw UsageError("operands belong to different graphs");
}

// Accepts [C,D,H,W] (batch 1) or [N,C,D,H,W].
inline kernels::Volume volume_of(const Shape& s, const char* op) {
    if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
    if (s.size() == 5) return {s[0] * s[1], s[2], s[3], s[4]};
    throw DimensionError(std::string(op) + " expects a [C,D,H,W] or [N,C,D,H,W] tensor, got " + shape_str(s));
}

inline Shape spatial_scaled(const Shape& s, std::size_t num, std::size_t den) {
    Shape out = s;
    for (std::size_t a = s.size() - 3; a < s.size(); ++a) out[a] = s[a] * num / den;
    return out;
}

}  // namespace detail

// out[i,j] = sum_l in[i,l] * weight[l,j] + bias[j]
template <typename T>
Var<T> affine(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
    detail::require_same_graph(input, weight);
    detail::require_same_graph(input, bias);
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    const Shape& bs = bias.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0] || bs.size() != 1 || bs[0] != ws[1]) {
        throw DimensionError("affine: input " + shape_str(xs) + " incompatible with weights " + shape_str(ws) +
                             " and bias " + shape_str(bs));
    }
    const std::size_t n = xs[0], d = xs[1], k = ws[1];
    Tensor<T> out({n, k});
    kernels::gemm_bias(input.value().ptr(), weight.value().ptr(), bias.value().ptr(), out.ptr(), n, d, k);
    Graph<T>& g = input.graph();
    return g.record(std::move(out), {input.id(), weight.id(), bias.id()}, [n, d, k](Graph<T>& gr, std::size_t self) {
        const auto& in = gr.inputs(self);
        const T* dout = gr.grad(self).ptr();
        T* din = gr.requires_grad(in[0]) ? gr.grad_buffer(in[0]).ptr() : nullptr;
        T* dw = gr.requires_grad(in[1]) ? gr.grad_buffer(in[1]).ptr() : nullptr;
        T* db = gr.requires_grad(in[2]) ? gr.grad_buffer(in[2]).ptr() : nullptr;
        kernels::gemm_backward(gr.value(in[0]).ptr(), gr.value(in[1]).ptr(), dout, din, dw, db, n, d, k);
    });
}

// Cross-correlation with zero "same" padding; kernel [Cout,Cin,k,k,k], k odd.
template <typename T>
Var<T> conv3d(const Var<T>& input, const Var<T>& kernel, const Var<T>& bias) {
    detail::require_same_graph(input, kernel);
    detail::require_same_graph(input, bias);
    const Shape& xs = input.shape();
    const Shape& ks = kernel.shape();
    if (ks.size() != 5 || ks[2] != ks[3] || ks[3] != ks[4]) {
        throw DimensionError("conv3d: kernel must be [Cout,Cin,k,k,k], got " + shape_str(ks));
    }
    if (ks[2] % 2 == 0) throw ConfigError("conv3d: kernel size must be odd, got " + std::to_string(ks[2]));
    const bool batched = xs.size() == 5;
    if (!batched && xs.size() != 4) throw DimensionError("conv3d: input must be [C,D,H,W] or [N,C,D,H,W], got " + shape_str(xs));
    const std::size_t off = batched ? 1 : 0;
    if (xs[off] != ks[1]) {
        throw DimensionError("conv3d: input " + shape_str(xs) + " has " + std::to_string(xs[off]) +
                             " channels, kernel " + shape_str(ks) + " expects " + std::to_string(ks[1]));
    }
    if (bias.shape() != Shape{ks[0]}) throw DimensionError("conv3d: bias " + shape_str(bias.shape()) + " for kernel " + shape_str(ks));
    kernels::Conv3dGeom geom{batched ? xs[0] : 1, ks[1], ks[0], xs[off + 1], xs[off + 2], xs[off + 3], ks[2]};
    Shape os = xs;
    os[off] = ks[0];
    Tensor<T> out(os);
    kernels::conv3d_forward(input.value().ptr(), kernel.value().ptr(), bias.value().ptr(), out.ptr(), geom);
    return input.graph().record(std::move(out), {input.id(), kernel.id(), bias.id()}, [geom](Graph<T>& gr, std::size_t self) {
        const auto& in = gr.inputs(self);
        T* din = gr.requires_grad(in[0]) ? gr.grad_buffer(in[0]).ptr() : nullptr;
        T* dk = gr.requires_grad(in[1]) ? gr.grad_buffer(in[1]).ptr() : nullptr;
        T* db = gr.requires_grad(in[2]) ? gr.grad_buffer(in[2]).ptr() : nullptr;
        kernels::conv3d_backward(gr.value(in[0]).ptr(), gr.value(in[1]).ptr(), gr.grad(self).ptr(), din, dk, db, geom);
    });
}

// 2x2x2 mean pooling.
template <typename T>
Var<T> avg_pool3d(const Var<T>& input, std::size_t factor = 2) {
    if (factor != 2) throw ConfigError("avg_pool3d: only factor 2 is supported");
    const Shape& xs = input.shape();
    const kernels::Volume v = detail::volume_of(xs, "avg_pool3d");
    if (v.d % 2 || v.h % 2 || v.w % 2) throw DimensionError("avg_pool3d: odd spatial extent in " + shape_str(xs));
    Tensor<T> out(detail::spatial_scaled(xs, 1, 2));
    kernels::avg_pool2(input.value().ptr(), out.ptr(), v);
    return input.graph().record(std::move(out), {input.id()}, [v](Graph<T>& gr, std::size_t self) {
        const std::size_t in = gr.inputs(self)[0];
        kernels::avg_pool2_backward(gr.grad(self).ptr(), gr.grad_buffer(in).ptr(), v);
    });
}

// Block replication by an integer factor (factor 1 is the identity).
template <typename T>
Var<T> nearest_upsample3d(const Var<T>& input, std::size_t factor) {
    if (factor < 1) throw ConfigError("nearest_upsample3d: factor must be >= 1");
    const Shape& xs = input.shape();
    const kernels::Volume v = detail::volume_of(xs, "nearest_upsample3d");
    Tensor<T> out(detail::spatial_scaled(xs, factor, 1));
    kernels::nearest_upsample(input.value().ptr(), out.ptr(), v, factor);
    return input.graph().record(std::move(out), {input.id()}, [v, factor](Graph<T>& gr, std::size_t self) {
        const std::size_t in = gr.inputs(self)[0];
        kernels::nearest_upsample_backward(gr.grad(self).ptr(), gr.grad_buffer(in).ptr(), v, factor);
    });
}

template <typename T>
Var<T> activation(const Var<T>& input, Activation act) {
    const Tensor<T>& x = input.value();
    Tensor<T> out(x.shape());
    const T* xp = x.ptr();
    T* op = out.ptr();
    const kernels::Index n = static_cast<kernels::Index>(x.size());
#pragma omp parallel for schedule(static)
    for (kernels::Index i = 0; i < n; ++i) op[i] = act.apply(xp[i]);
    return input.graph().record(std::move(out), {input.id()}, [act](Graph<T>& gr, std::size_t self) {
        const std::size_t in = gr.inputs(self)[0];
        const T* xv = gr.value(in).ptr();
        const T* go = gr.grad(self).ptr();
        T* dx = gr.grad_buffer(in).ptr();
        const kernels::Index count = static_cast<kernels::Index>(gr.value(in).size());
#pragma omp parallel for schedule(static)
        for (kernels::Index i = 0; i < count; ++i) dx[i] += go[i] * act.slope(xv[i]);
    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    detail::require_same_graph(a, b);
    if (a.shape() != b.shape()) throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    Tensor<T> out = a.value();
    const T* bp = b.value().ptr();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bp[i];
    return a.graph().record(std::move(out), {a.id(), b.id()}, [](Graph<T>& gr, std::size_t self) {
        const T* go = gr.grad(self).ptr();
        for (std::size_t in : gr.inputs(self)) {
            if (!gr.requires_grad(in)) continue;
            Tensor<T>& dx = gr.grad_buffer(in);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    Tensor<T> out = a.value();
    for (auto& v : out.data()) v *= factor;
    return a.graph().record(std::move(out), {a.id()}, [factor](Graph<T>& gr, std::size_t self) {
        const T* go = gr.grad(self).ptr();
        Tensor<T>& dx = gr.grad_buffer(gr.inputs(self)[0]);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * go[i];
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return a.graph().record(std::move(out), {a.id()}, [](Graph<T>& gr, std::size_t self) {
        const T* go = gr.grad(self).ptr();
        Tensor<T>& dx = gr.grad_buffer(gr.inputs(self)[0]);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go[i];
    });
}

// Concatenation along the channel axis of [N,C,...] tensors.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    detail::require_same_graph(a, b);
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() < 2 || as.size() != bs.size() || as[0] != bs[0] ||
        !std::equal(as.begin() + 2, as.end(), bs.begin() + 2)) {
        throw DimensionError("concat_channels: shapes " + shape_str(as) + " and " + shape_str(bs));
    }
    const std::size_t n = as[0], ca = as[1], cb = bs[1];
    const std::size_t inner = numel(Shape(as.begin() + 2, as.end()));
    Shape os = as;
    os[1] = ca + cb;
    Tensor<T> out(os);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.value().ptr() + i * ca * inner, ca * inner, out.ptr() + i * (ca + cb) * inner);
        std::copy_n(b.value().ptr() + i * cb * inner, cb * inner, out.ptr() + (i * (ca + cb) + ca) * inner);
    }
    return a.graph().record(std::move(out), {a.id(), b.id()}, [n, ca, cb, inner](Graph<T>& gr, std::size_t self) {
        const auto& in = gr.inputs(self);
        const T* go = gr.grad(self).ptr();
        if (gr.requires_grad(in[0])) {
            T* da = gr.grad_buffer(in[0]).ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < ca * inner; ++j) da[i * ca * inner + j] += go[i * (ca + cb) * inner + j];
        }
        if (gr.requires_grad(in[1])) {
            T* db = gr.grad_buffer(in[1]).ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < cb * inner; ++j)
                    db[i * cb * inner + j] += go[(i * (ca + cb) + ca) * inner + j];
        }
    });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    double acc = 0;
    for (T v : a.value().data()) acc += v;
    return a.graph().record(Tensor<T>({1}, {static_cast<T>(acc)}), {a.id()}, [](Graph<T>& gr, std::size_t self) {
        const T go = gr.grad(self)[0];
        Tensor<T>& dx = gr.grad_buffer(gr.inputs(self)[0]);
        for (auto& v : dx.data()) v += go;
    });
}

template <typename T>
Var<T> sum_squares(const Var<T>& a) {
    double acc = 0;
    for (T v : a.value().data()) acc += static_cast<double>(v) * v;
    return a.graph().record(Tensor<T>({1}, {static_cast<T>(acc)}), {a.id()}, [](Graph<T>& gr, std::size_t self) {
        const std::size_t in = gr.inputs(self)[0];
        const T go = gr.grad(self)[0];
        const T* x = gr.value(in).ptr();
        Tensor<T>& dx = gr.grad_buffer(in);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += T{2} * go * x[i];
    });
}

}  // namespace ad
}  // namespace dsr
