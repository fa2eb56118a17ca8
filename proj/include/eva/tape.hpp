#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "eva/params.hpp"
#include "eva/tensor.hpp"

namespace eva::ag {

class Tape;

// One recorded primitive. The tape owns nodes; recording order is a valid
// topological order, so backward is a single reverse sweep.
struct Node {
    Tensor value;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
    int id = -1;
    const char* op = "leaf";
    std::string name;
    std::vector<Node*> parents;
    std::function<void(Node&)> backward;
    Tape* tape = nullptr;

    std::vector<double>& grad_buf() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

// Cheap handle to a tape node.
struct Value {
    Node* node = nullptr;

    const Tensor& val() const { return node->value; }
    const Shape& shape() const { return node->value.shape; }
    std::size_t size() const { return node->value.size(); }
    std::size_t rank() const { return node->value.rank(); }
    double scalar() const;
    bool requires_grad() const { return node->requires_grad; }
    Tape& tape() const { return *node->tape; }
    explicit operator bool() const { return node != nullptr; }
};

class Tape {
  public:
    // Leaf holding a copy of `v`. Parameters come in through param().
    Value leaf(Tensor v, bool requires_grad = false, std::string name = {});

    Value constant(Tensor v) { return leaf(std::move(v), false); }

    // Leaf for a named parameter; memoized so every use of the parameter in
    // one recording shares a node (gradients then accumulate via fan-out).
    Value param(const ParameterStore& store, ParamId id);

    Value make(Tensor v, const char* op, std::vector<Node*> parents,
               std::function<void(Node&)> bwd);

    // Reverse sweep from `loss` (must be rank 0). Touches only nodes that can
    // reach a requires_grad leaf.
    void backward(Value loss);

    // Gradient of a value after backward; zeros if the loss never reached it.
    Tensor grad_of(Value v) const;

    // Gradients for every trainable parameter in `store`; parameters the loss
    // did not reach get zeros.
    Gradients collect(const ParameterStore& store) const;

    // When disabled, leaves are recorded without requires_grad and no
    // backward closures are kept (cheap inference recordings).
    void set_grad_enabled(bool on) { grad_enabled_ = on; }
    bool grad_enabled() const { return grad_enabled_; }

    std::size_t node_count() const { return nodes_.size(); }

  private:
    std::deque<Node> nodes_;
    std::vector<std::pair<const ParameterStore*, ParamId>> param_keys_;
    std::vector<Node*> param_nodes_;
    bool grad_enabled_ = true;
};

// ---- primitives -----------------------------------------------------------

Value add(Value a, Value b);      // trailing matching-or-1 broadcast
Value sub(Value a, Value b);
Value mul(Value a, Value b);      // elementwise, same broadcast rule
Value scale(Value a, double c);
Value matmul(Value a, Value b);   // 2-D x 2-D; 1-D operands promoted
Value dot(Value a, Value b);
Value transpose(Value a);
Value softmax(Value a, std::size_t axis);
Value log_softmax(Value a, std::size_t axis);
Value layer_norm(Value a, double eps = 1e-5);  // last axis, population variance
Value gelu(Value a);
Value relu(Value a);
Value vlog(Value a);
Value vexp(Value a);
Value softplus(Value a);
Value sum(Value a);
Value mean(Value a);
Value reduce_max(Value a, std::size_t axis);  // ties: first (lowest index)
Value slice_rows(Value a, std::size_t r0, std::size_t r1);
Value slice_cols(Value a, std::size_t c0, std::size_t c1);
Value row(Value a, std::size_t i);                    // matrix row as vector
Value concat_rows(const std::vector<Value>& parts);   // along axis 0
Value concat_cols(const std::vector<Value>& parts);   // along axis 1
Value stack_rows(const std::vector<Value>& rows);     // 1-D values -> matrix
Value gather_rows(Value a, const std::vector<std::size_t>& ids);  // embedding lookup
Value gather(Value a, const std::vector<std::size_t>& ids);       // 1-D pick
Value take_per_row(Value a, const std::vector<std::size_t>& col_of_row);
// Per row of `a`, max over entries sharing a group id; absent groups get
// `absent_fill`. Ties: first entry.
Value segment_max(Value a, const std::vector<std::size_t>& group_of_col,
                  std::size_t n_groups, double absent_fill);
Value l2_normalize(Value a);  // rows of a matrix, or one vector

inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }

// ---- value-only queries ----------------------------------------------------

// First index of the maximum (lowest index on ties).
std::size_t argmax(const std::vector<double>& v);
std::size_t argmax(const Tensor& t);

}  // namespace eva::ag
