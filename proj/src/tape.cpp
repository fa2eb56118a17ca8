#include "eva/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eva::ag {

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
    throw std::invalid_argument(std::string(op) + ": " + detail);
}

// Right-aligned matching-or-1 broadcast plan. stride 0 marks a broadcast axis.
struct BcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;
};

BcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));

    BcastPlan plan;
    plan.out.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            shape_fail(op, "incompatible shapes " + shape_str(a) + " and " + shape_str(b));
        plan.out[i] = std::max(pa[i], pb[i]);
    }

    auto strides = [&](const Shape& padded) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t acc = 1;
        for (std::size_t i = rank; i-- > 0;) {
            st[i] = (padded[i] == 1 && plan.out[i] != 1) ? 0 : acc;
            acc *= padded[i];
        }
        return st;
    };
    plan.stride_a = strides(pa);
    plan.stride_b = strides(pb);
    return plan;
}

// Calls fn(out_flat, a_flat, b_flat) over every output element.
template <typename F>
void for_broadcast(const BcastPlan& plan, F&& fn) {
    std::size_t rank = plan.out.size();
    std::size_t total = shape_numel(plan.out);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < total; ++i) {
        fn(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ia += plan.stride_a[d];
            ib += plan.stride_b[d];
            if (idx[d] < plan.out[d]) break;
            idx[d] = 0;
            ia -= plan.stride_a[d] * plan.out[d];
            ib -= plan.stride_b[d] * plan.out[d];
        }
    }
}

// Slices of a rank-1/2 tensor along `axis`.
struct AxisView {
    std::size_t n_slices, len, slice_stride, inner_stride;
    std::size_t start(std::size_t s) const { return s * slice_stride; }
    std::size_t at(std::size_t s, std::size_t j) const { return s * slice_stride + j * inner_stride; }
};

AxisView axis_view(const char* op, const Shape& shape, std::size_t axis) {
    if (shape.size() == 1) {
        if (axis != 0) shape_fail(op, "axis " + std::to_string(axis) + " out of range for vector");
        return {1, shape[0], 0, 1};
    }
    if (shape.size() == 2) {
        if (axis == 1) return {shape[0], shape[1], shape[1], 1};
        if (axis == 0) return {shape[1], shape[0], 1, shape[1]};
        shape_fail(op, "axis " + std::to_string(axis) + " out of range for matrix");
    }
    shape_fail(op, "expected rank 1 or 2, got " + shape_str(shape));
}

struct MatView {
    std::size_t r, c;
    bool was_vector_row;   // 1-D promoted to 1 x k
    bool was_vector_col;   // 1-D promoted to k x 1
};

Value binary_broadcast(const char* op, Value a, Value b, bool is_mul, double sign_b) {
    Tape& t = a.tape();
    const Tensor& ta = a.node->value;
    const Tensor& tb = b.node->value;
    BcastPlan plan = broadcast_plan(op, ta.shape, tb.shape);
    Tensor out = Tensor::zeros(plan.out);
    if (is_mul) {
        for_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            out.data[i] = ta.data[ia] * tb.data[ib];
        });
    } else {
        for_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            out.data[i] = ta.data[ia] + sign_b * tb.data[ib];
        });
    }
    Node* na = a.node;
    Node* nb = b.node;
    return t.make(std::move(out), op, {na, nb}, [plan, is_mul, sign_b, na, nb](Node& self) {
        const auto& g = self.grad;
        if (na->requires_grad) {
            auto& da = na->grad_buf();
            if (is_mul) {
                const auto& vb = nb->value.data;
                for_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    da[ia] += g[i] * vb[ib];
                });
            } else {
                for_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { da[ia] += g[i]; });
            }
        }
        if (nb->requires_grad) {
            auto& db = nb->grad_buf();
            if (is_mul) {
                const auto& va = na->value.data;
                for_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    db[ib] += g[i] * va[ia];
                });
            } else {
                for_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t ib) {
                    db[ib] += sign_b * g[i];
                });
            }
        }
    });
}

template <typename Fwd, typename Dfn>
Value unary_elementwise(const char* op, Value a, Fwd fwd, Dfn dfn) {
    Tape& t = a.tape();
    Node* na = a.node;
    Tensor out = na->value;
    for (double& v : out.data) v = fwd(v);
    return t.make(std::move(out), op, {na}, [na, dfn](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        const auto& x = na->value.data;
        const auto& y = self.value.data;
        for (std::size_t i = 0; i < x.size(); ++i) da[i] += self.grad[i] * dfn(x[i], y[i]);
    });
}

}  // namespace

double Value::scalar() const {
    if (node->value.rank() != 0)
        throw std::invalid_argument("Value::scalar: shape " + shape_str(node->value.shape) + " is not scalar");
    return node->value.data[0];
}

Value Tape::leaf(Tensor v, bool requires_grad, std::string name) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(v);
    n.requires_grad = grad_enabled_ && requires_grad;
    n.id = static_cast<int>(nodes_.size()) - 1;
    n.op = "leaf";
    n.name = std::move(name);
    n.tape = this;
    return Value{&n};
}

Value Tape::param(const ParameterStore& store, ParamId id) {
    for (std::size_t i = 0; i < param_keys_.size(); ++i)
        if (param_keys_[i].first == &store && param_keys_[i].second == id)
            return Value{param_nodes_[i]};
    const Param& p = store.at(id);
    Value v = leaf(p.value, p.trainable, p.name);
    param_keys_.emplace_back(&store, id);
    param_nodes_.push_back(v.node);
    return v;
}

Value Tape::make(Tensor v, const char* op, std::vector<Node*> parents,
                 std::function<void(Node&)> bwd) {
    for (double x : v.data)
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("tape: non-finite output of node '") + op + "'");
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(v);
    n.id = static_cast<int>(nodes_.size()) - 1;
    n.op = op;
    n.tape = this;
    bool rg = false;
    for (Node* p : parents) rg = rg || p->requires_grad;
    n.requires_grad = grad_enabled_ && rg;
    if (n.requires_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(bwd);
    }
    return Value{&n};
}

void Tape::backward(Value loss) {
    if (loss.node->value.rank() != 0)
        throw std::invalid_argument("backward: loss has shape " + shape_str(loss.shape()) +
                                    ", expected a scalar");
    if (!loss.node->requires_grad) return;
    loss.node->grad_buf()[0] = 1.0;
    for (int i = loss.node->id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.grad.empty() && n.backward) n.backward(n);
    }
}

Tensor Tape::grad_of(Value v) const {
    const Node* n = v.node;
    if (n->grad.empty()) return Tensor::zeros(n->value.shape);
    return Tensor(n->value.shape, n->grad);
}

Gradients Tape::collect(const ParameterStore& store) const {
    Gradients out;
    for (std::size_t i = 0; i < param_keys_.size(); ++i) {
        if (param_keys_[i].first != &store) continue;
        const Param& p = store.at(param_keys_[i].second);
        if (!p.trainable) continue;
        out.set(p.name, grad_of(Value{param_nodes_[i]}));
    }
    return out;
}

// ---- arithmetic ------------------------------------------------------------

Value add(Value a, Value b) { return binary_broadcast("add", a, b, false, 1.0); }
Value sub(Value a, Value b) { return binary_broadcast("sub", a, b, false, -1.0); }
Value mul(Value a, Value b) { return binary_broadcast("mul", a, b, true, 1.0); }

Value scale(Value a, double c) {
    Node* na = a.node;
    Tensor out = na->value;
    for (double& v : out.data) v *= c;
    return a.tape().make(std::move(out), "scale", {na}, [na, c](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += c * self.grad[i];
    });
}

Value matmul(Value a, Value b) {
    const Tensor& ta = a.node->value;
    const Tensor& tb = b.node->value;
    MatView va{}, vb{};
    if (ta.rank() == 2) va = {ta.dim(0), ta.dim(1), false, false};
    else if (ta.rank() == 1) va = {1, ta.dim(0), true, false};
    else shape_fail("matmul", "lhs rank " + std::to_string(ta.rank()));
    if (tb.rank() == 2) vb = {tb.dim(0), tb.dim(1), false, false};
    else if (tb.rank() == 1) vb = {tb.dim(0), 1, false, true};
    else shape_fail("matmul", "rhs rank " + std::to_string(tb.rank()));
    if (va.c != vb.r)
        shape_fail("matmul", "inner extents differ: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));

    std::size_t m = va.r, k = va.c, n = vb.c;
    Shape out_shape;
    if (!va.was_vector_row && !vb.was_vector_col) out_shape = {m, n};
    else if (va.was_vector_row && !vb.was_vector_col) out_shape = {n};
    else if (!va.was_vector_row && vb.was_vector_col) out_shape = {m};
    // vector x vector would be scalar; use dot() for that
    else shape_fail("matmul", "use dot() for vector-vector products");

    Tensor out = Tensor::zeros(out_shape);
    matmul_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);

    Node* na = a.node;
    Node* nb = b.node;
    return a.tape().make(std::move(out), "matmul", {na, nb}, [na, nb, m, k, n](Node& self) {
        const double* g = self.grad.data();
        if (na->requires_grad)
            matmul_bt_acc(g, nb->value.data.data(), na->grad_buf().data(), m, n, k);
        if (nb->requires_grad)
            matmul_at_acc(na->value.data.data(), g, nb->grad_buf().data(), m, k, n);
    });
}

Value dot(Value a, Value b) {
    const Tensor& ta = a.node->value;
    const Tensor& tb = b.node->value;
    if (ta.rank() != 1 || tb.rank() != 1 || ta.size() != tb.size())
        shape_fail("dot", "needs equal-length vectors, got " + shape_str(ta.shape) + " and " +
                           shape_str(tb.shape));
    double s = 0.0;
    for (std::size_t i = 0; i < ta.size(); ++i) s += ta.data[i] * tb.data[i];
    Node* na = a.node;
    Node* nb = b.node;
    return a.tape().make(Tensor::scalar(s), "dot", {na, nb}, [na, nb](Node& self) {
        double g = self.grad[0];
        if (na->requires_grad) {
            auto& da = na->grad_buf();
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * nb->value.data[i];
        }
        if (nb->requires_grad) {
            auto& db = nb->grad_buf();
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += g * na->value.data[i];
        }
    });
}

Value transpose(Value a) {
    const Tensor& ta = a.node->value;
    if (ta.rank() != 2) shape_fail("transpose", "expected matrix, got " + shape_str(ta.shape));
    std::size_t r = ta.dim(0), c = ta.dim(1);
    Tensor out = Tensor::zeros({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = ta.data[i * c + j];
    Node* na = a.node;
    return a.tape().make(std::move(out), "transpose", {na}, [na, r, c](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) da[i * c + j] += self.grad[j * r + i];
    });
}

// ---- normalizations --------------------------------------------------------

Value softmax(Value a, std::size_t axis) {
    const Tensor& ta = a.node->value;
    AxisView view = axis_view("softmax", ta.shape, axis);
    Tensor out = Tensor::zeros(ta.shape);
    for (std::size_t s = 0; s < view.n_slices; ++s) {
        double mx = ta.data[view.at(s, 0)];
        for (std::size_t j = 1; j < view.len; ++j) mx = std::max(mx, ta.data[view.at(s, j)]);
        double z = 0.0;
        for (std::size_t j = 0; j < view.len; ++j) {
            double e = std::exp(ta.data[view.at(s, j)] - mx);
            out.data[view.at(s, j)] = e;
            z += e;
        }
        for (std::size_t j = 0; j < view.len; ++j) out.data[view.at(s, j)] /= z;
    }
    Node* na = a.node;
    return a.tape().make(std::move(out), "softmax", {na}, [na, view](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t s = 0; s < view.n_slices; ++s) {
            double gs = 0.0;
            for (std::size_t j = 0; j < view.len; ++j) {
                std::size_t i = view.at(s, j);
                gs += self.grad[i] * self.value.data[i];
            }
            for (std::size_t j = 0; j < view.len; ++j) {
                std::size_t i = view.at(s, j);
                da[i] += self.value.data[i] * (self.grad[i] - gs);
            }
        }
    });
}

Value log_softmax(Value a, std::size_t axis) {
    const Tensor& ta = a.node->value;
    AxisView view = axis_view("log_softmax", ta.shape, axis);
    Tensor out = Tensor::zeros(ta.shape);
    for (std::size_t s = 0; s < view.n_slices; ++s) {
        double mx = ta.data[view.at(s, 0)];
        for (std::size_t j = 1; j < view.len; ++j) mx = std::max(mx, ta.data[view.at(s, j)]);
        double z = 0.0;
        for (std::size_t j = 0; j < view.len; ++j) z += std::exp(ta.data[view.at(s, j)] - mx);
        double lz = mx + std::log(z);
        for (std::size_t j = 0; j < view.len; ++j)
            out.data[view.at(s, j)] = ta.data[view.at(s, j)] - lz;
    }
    Node* na = a.node;
    return a.tape().make(std::move(out), "log_softmax", {na}, [na, view](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t s = 0; s < view.n_slices; ++s) {
            double gs = 0.0;
            for (std::size_t j = 0; j < view.len; ++j) gs += self.grad[view.at(s, j)];
            for (std::size_t j = 0; j < view.len; ++j) {
                std::size_t i = view.at(s, j);
                da[i] += self.grad[i] - std::exp(self.value.data[i]) * gs;
            }
        }
    });
}

Value layer_norm(Value a, double eps) {
    const Tensor& ta = a.node->value;
    if (ta.rank() < 1) shape_fail("layer_norm", "expected rank >= 1");
    std::size_t len = ta.shape.back();
    std::size_t rows = ta.size() / len;
    Tensor out = Tensor::zeros(ta.shape);
    std::vector<double> inv_std(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = ta.data.data() + r * len;
        double mu = 0.0;
        for (std::size_t j = 0; j < len; ++j) mu += x[j];
        mu /= static_cast<double>(len);
        double var = 0.0;
        for (std::size_t j = 0; j < len; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(len);
        double s = std::sqrt(var + eps);
        if (s == 0.0) throw std::runtime_error("layer_norm: zero variance row with eps=0");
        inv_std[r] = 1.0 / s;
        double* y = out.data.data() + r * len;
        for (std::size_t j = 0; j < len; ++j) y[j] = (x[j] - mu) * inv_std[r];
    }
    Node* na = a.node;
    return a.tape().make(std::move(out), "layer_norm", {na},
                         [na, len, rows, inv_std](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = self.grad.data() + r * len;
            const double* y = self.value.data.data() + r * len;
            double gm = 0.0, gym = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                gm += g[j];
                gym += g[j] * y[j];
            }
            gm /= static_cast<double>(len);
            gym /= static_cast<double>(len);
            double* d = da.data() + r * len;
            for (std::size_t j = 0; j < len; ++j)
                d[j] += inv_std[r] * (g[j] - gm - y[j] * gym);
        }
    });
}

// ---- elementwise nonlinearities ---------------------------------------------

Value gelu(Value a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    return unary_elementwise(
        "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

Value relu(Value a) {
    return unary_elementwise(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value vlog(Value a) {
    for (double v : a.node->value.data)
        if (v <= 0.0) shape_fail("log", "non-positive input");
    return unary_elementwise(
        "log", a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Value vexp(Value a) {
    return unary_elementwise(
        "exp", a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Value softplus(Value a) {
    return unary_elementwise(
        "softplus", a,
        [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

// ---- reductions --------------------------------------------------------------

Value sum(Value a) {
    double s = 0.0;
    for (double v : a.node->value.data) s += v;
    Node* na = a.node;
    return a.tape().make(Tensor::scalar(s), "sum", {na}, [na](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (double& d : da) d += self.grad[0];
    });
}

Value mean(Value a) {
    std::size_t n = a.size();
    if (n == 0) shape_fail("mean", "empty tensor");
    double s = 0.0;
    for (double v : a.node->value.data) s += v;
    Node* na = a.node;
    double inv = 1.0 / static_cast<double>(n);
    return a.tape().make(Tensor::scalar(s * inv), "mean", {na}, [na, inv](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (double& d : da) d += self.grad[0] * inv;
    });
}

Value reduce_max(Value a, std::size_t axis) {
    const Tensor& ta = a.node->value;
    AxisView view = axis_view("max", ta.shape, axis);
    Tensor out = Tensor::zeros({view.n_slices});
    std::vector<std::size_t> winners(view.n_slices);
    for (std::size_t s = 0; s < view.n_slices; ++s) {
        std::size_t best = 0;
        double bv = ta.data[view.at(s, 0)];
        for (std::size_t j = 1; j < view.len; ++j) {
            double v = ta.data[view.at(s, j)];
            if (v > bv) {
                bv = v;
                best = j;
            }
        }
        out.data[s] = bv;
        winners[s] = best;
    }
    Node* na = a.node;
    return a.tape().make(std::move(out), "max", {na}, [na, view, winners](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t s = 0; s < winners.size(); ++s)
            da[view.at(s, winners[s])] += self.grad[s];
    });
}

// ---- slicing / gathering -----------------------------------------------------

Value slice_rows(Value a, std::size_t r0, std::size_t r1) {
    const Tensor& ta = a.node->value;
    if (ta.rank() != 2 || r1 > ta.dim(0) || r0 >= r1)
        shape_fail("slice_rows", "rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                                    ") of " + shape_str(ta.shape));
    std::size_t c = ta.dim(1);
    Tensor out = Tensor::zeros({r1 - r0, c});
    std::copy(ta.data.begin() + r0 * c, ta.data.begin() + r1 * c, out.data.begin());
    Node* na = a.node;
    return a.tape().make(std::move(out), "slice_rows", {na}, [na, r0, c](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t i = 0; i < self.grad.size(); ++i) da[r0 * c + i] += self.grad[i];
    });
}

Value slice_cols(Value a, std::size_t c0, std::size_t c1) {
    const Tensor& ta = a.node->value;
    if (ta.rank() != 2 || c1 > ta.dim(1) || c0 >= c1)
        shape_fail("slice_cols", "cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                                    ") of " + shape_str(ta.shape));
    std::size_t r = ta.dim(0), c = ta.dim(1), w = c1 - c0;
    Tensor out = Tensor::zeros({r, w});
    for (std::size_t i = 0; i < r; ++i)
        std::copy(ta.data.begin() + i * c + c0, ta.data.begin() + i * c + c1,
                  out.data.begin() + i * w);
    Node* na = a.node;
    return a.tape().make(std::move(out), "slice_cols", {na}, [na, r, c, c0, w](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) da[i * c + c0 + j] += self.grad[i * w + j];
    });
}

Value row(Value a, std::size_t i) {
    const Tensor& ta = a.node->value;
    if (ta.rank() != 2 || i >= ta.dim(0))
        shape_fail("row", "row " + std::to_string(i) + " of " + shape_str(ta.shape));
    std::size_t c = ta.dim(1);
    Tensor out = Tensor::zeros({c});
    std::copy(ta.data.begin() + i * c, ta.data.begin() + (i + 1) * c, out.data.begin());
    Node* na = a.node;
    return a.tape().make(std::move(out), "row", {na}, [na, i, c](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t j = 0; j < c; ++j) da[i * c + j] += self.grad[j];
    });
}

namespace {

Value concat_axis0(const char* op, const std::vector<Value>& parts) {
    if (parts.empty()) shape_fail(op, "no parts");
    std::size_t c = parts[0].rank() == 1 ? parts[0].size() : parts[0].val().dim(1);
    std::size_t rows = 0;
    for (const Value& p : parts) {
        const Tensor& tp = p.val();
        std::size_t pc = tp.rank() == 1 ? tp.size() : tp.rank() == 2 ? tp.dim(1) : 0;
        if (pc != c || tp.rank() > 2)
            shape_fail(op, "part shape " + shape_str(tp.shape) + " does not have width " +
                               std::to_string(c));
        rows += tp.rank() == 1 ? 1 : tp.dim(0);
    }
    Tensor out = Tensor::zeros({rows, c});
    std::vector<Node*> parents;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Value& p : parts) {
        const Tensor& tp = p.val();
        std::copy(tp.data.begin(), tp.data.end(), out.data.begin() + off);
        parents.push_back(p.node);
        offsets.push_back(off);
        off += tp.size();
    }
    Tape& t = parts[0].tape();
    return t.make(std::move(out), op, parents, [parents, offsets](Node& self) {
        for (std::size_t k = 0; k < parents.size(); ++k) {
            Node* p = parents[k];
            if (!p->requires_grad) continue;
            auto& dp = p->grad_buf();
            for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += self.grad[offsets[k] + i];
        }
    });
}

}  // namespace

Value concat_rows(const std::vector<Value>& parts) { return concat_axis0("concat_rows", parts); }
Value stack_rows(const std::vector<Value>& rows) { return concat_axis0("stack_rows", rows); }

Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) shape_fail("concat_cols", "no parts");
    std::size_t r = parts[0].val().dim(0);
    std::size_t total_c = 0;
    for (const Value& p : parts) {
        if (p.rank() != 2 || p.val().dim(0) != r)
            shape_fail("concat_cols", "part shape " + shape_str(p.shape()));
        total_c += p.val().dim(1);
    }
    Tensor out = Tensor::zeros({r, total_c});
    std::vector<Node*> parents;
    std::vector<std::size_t> col_off;
    std::size_t off = 0;
    for (const Value& p : parts) {
        const Tensor& tp = p.val();
        std::size_t pc = tp.dim(1);
        for (std::size_t i = 0; i < r; ++i)
            std::copy(tp.data.begin() + i * pc, tp.data.begin() + (i + 1) * pc,
                      out.data.begin() + i * total_c + off);
        parents.push_back(p.node);
        col_off.push_back(off);
        off += pc;
    }
    Tape& t = parts[0].tape();
    return t.make(std::move(out), "concat_cols", parents,
                  [parents, col_off, r, total_c](Node& self) {
        for (std::size_t k = 0; k < parents.size(); ++k) {
            Node* p = parents[k];
            if (!p->requires_grad) continue;
            std::size_t pc = p->value.dim(1);
            auto& dp = p->grad_buf();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < pc; ++j)
                    dp[i * pc + j] += self.grad[i * total_c + col_off[k] + j];
        }
    });
}

Value gather_rows(Value a, const std::vector<std::size_t>& ids) {
    const Tensor& ta = a.node->value;
    if (ta.rank() != 2) shape_fail("gather_rows", "expected matrix, got " + shape_str(ta.shape));
    std::size_t c = ta.dim(1);
    for (std::size_t id : ids)
        if (id >= ta.dim(0))
            shape_fail("gather_rows", "row id " + std::to_string(id) + " out of " +
                                          std::to_string(ta.dim(0)));
    Tensor out = Tensor::zeros({ids.size(), c});
    for (std::size_t k = 0; k < ids.size(); ++k)
        std::copy(ta.data.begin() + ids[k] * c, ta.data.begin() + (ids[k] + 1) * c,
                  out.data.begin() + k * c);
    Node* na = a.node;
    return a.tape().make(std::move(out), "gather_rows", {na}, [na, ids, c](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t k = 0; k < ids.size(); ++k)
            for (std::size_t j = 0; j < c; ++j) da[ids[k] * c + j] += self.grad[k * c + j];
    });
}

Value gather(Value a, const std::vector<std::size_t>& ids) {
    const Tensor& ta = a.node->value;
    if (ta.rank() != 1) shape_fail("gather", "expected vector, got " + shape_str(ta.shape));
    for (std::size_t id : ids)
        if (id >= ta.size()) shape_fail("gather", "index " + std::to_string(id) + " out of range");
    Tensor out = Tensor::zeros({ids.size()});
    for (std::size_t k = 0; k < ids.size(); ++k) out.data[k] = ta.data[ids[k]];
    Node* na = a.node;
    return a.tape().make(std::move(out), "gather", {na}, [na, ids](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t k = 0; k < ids.size(); ++k) da[ids[k]] += self.grad[k];
    });
}

Value take_per_row(Value a, const std::vector<std::size_t>& col_of_row) {
    const Tensor& ta = a.node->value;
    if (ta.rank() != 2 || col_of_row.size() != ta.dim(0))
        shape_fail("take_per_row", "need one column index per row of " + shape_str(ta.shape));
    std::size_t c = ta.dim(1);
    for (std::size_t j : col_of_row)
        if (j >= c) shape_fail("take_per_row", "column " + std::to_string(j) + " out of range");
    Tensor out = Tensor::zeros({col_of_row.size()});
    for (std::size_t i = 0; i < col_of_row.size(); ++i) out.data[i] = ta.data[i * c + col_of_row[i]];
    Node* na = a.node;
    return a.tape().make(std::move(out), "take_per_row", {na}, [na, col_of_row, c](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t i = 0; i < col_of_row.size(); ++i)
            da[i * c + col_of_row[i]] += self.grad[i];
    });
}

Value segment_max(Value a, const std::vector<std::size_t>& group_of_col, std::size_t n_groups,
                  double absent_fill) {
    const Tensor& ta = a.node->value;
    bool is_vec = ta.rank() == 1;
    if (!is_vec && ta.rank() != 2) shape_fail("segment_max", "expected rank 1 or 2");
    std::size_t cols = is_vec ? ta.size() : ta.dim(1);
    std::size_t rows = is_vec ? 1 : ta.dim(0);
    if (group_of_col.size() != cols)
        shape_fail("segment_max", "need one group id per column");
    for (std::size_t g : group_of_col)
        if (g >= n_groups) shape_fail("segment_max", "group id out of range");

    Shape out_shape = is_vec ? Shape{n_groups} : Shape{rows, n_groups};
    Tensor out = Tensor::full(out_shape, absent_fill);
    // winner column per (row, group); npos when the group has no columns
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> winners(rows * n_groups, npos);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = ta.data.data() + r * cols;
        double* y = out.data.data() + r * n_groups;
        std::size_t* w = winners.data() + r * n_groups;
        for (std::size_t j = 0; j < cols; ++j) {
            std::size_t g = group_of_col[j];
            if (w[g] == npos || x[j] > y[g]) {
                y[g] = x[j];
                w[g] = j;
            }
        }
    }
    Node* na = a.node;
    return a.tape().make(std::move(out), "segment_max", {na},
                         [na, winners, rows, cols, n_groups](Node& self) {
        if (!na->requires_grad) return;
        constexpr std::size_t npos = static_cast<std::size_t>(-1);
        auto& da = na->grad_buf();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t g = 0; g < n_groups; ++g) {
                std::size_t w = winners[r * n_groups + g];
                if (w != npos) da[r * cols + w] += self.grad[r * n_groups + g];
            }
    });
}

Value l2_normalize(Value a) {
    const Tensor& ta = a.node->value;
    if (ta.rank() != 1 && ta.rank() != 2)
        shape_fail("l2_normalize", "expected rank 1 or 2, got " + shape_str(ta.shape));
    std::size_t len = ta.shape.back();
    std::size_t rows = ta.size() / len;
    Tensor out = Tensor::zeros(ta.shape);
    std::vector<double> inv_norm(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = ta.data.data() + r * len;
        double n2 = 0.0;
        for (std::size_t j = 0; j < len; ++j) n2 += x[j] * x[j];
        double n = std::sqrt(n2);
        if (n < 1e-300) throw std::runtime_error("l2_normalize: zero-norm row");
        inv_norm[r] = 1.0 / n;
        double* y = out.data.data() + r * len;
        for (std::size_t j = 0; j < len; ++j) y[j] = x[j] * inv_norm[r];
    }
    Node* na = a.node;
    return a.tape().make(std::move(out), "l2_normalize", {na},
                         [na, len, rows, inv_norm](Node& self) {
        if (!na->requires_grad) return;
        auto& da = na->grad_buf();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = self.grad.data() + r * len;
            const double* y = self.value.data.data() + r * len;
            double gy = 0.0;
            for (std::size_t j = 0; j < len; ++j) gy += g[j] * y[j];
            double* d = da.data() + r * len;
            for (std::size_t j = 0; j < len; ++j) d[j] += inv_norm[r] * (g[j] - y[j] * gy);
        }
    });
}

std::size_t argmax(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

std::size_t argmax(const Tensor& t) { return argmax(t.data); }

}  // namespace eva::ag
