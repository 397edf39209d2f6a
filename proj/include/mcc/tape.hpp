#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "mcc/tensor.hpp"

namespace mcc {

struct Parameter;
class ParameterStore;
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& val() const;
    const std::vector<std::size_t>& dims() const;
};

// Define-by-run record of differentiable operations. Nodes are appended in
// execution order, which is already topological, so one reverse sweep visits
// every node exactly once.
class Tape {
public:
    Var leaf(Tensor value);
    Var leaf(double scalar_value);
    Var param(Parameter& p);

    const Tensor& val(Var v) const { return value_of(v.id); }
    const Tensor& grad(Var v) const { return grad_of(v.id); }

    // Reverse sweep from a scalar root. Gradients accumulate into any bound
    // parameters; the overload with a store zeroes its gradients first, so
    // afterwards every store entry holds exactly d(root)/d(entry).
    void backward(Var root);
    void backward(Var root, ParameterStore& store);

    std::size_t node_count() const { return nodes_.size(); }

    // Hooks for op implementations.
    using BackFn = std::function<void(Tape&, std::size_t)>;
    std::size_t emit(Tensor value, std::vector<std::size_t> inputs, BackFn back);
    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
    const Tensor& grad_of(std::size_t id) const;
    Tensor& accum_target(std::size_t id);
    bool touched(std::size_t id) const { return nodes_[id].touched; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackFn back;
        Parameter* bound = nullptr;
        bool touched = false;
    };
    std::vector<Node> nodes_;
};

// Elementwise; operands must have identical dims, or one side may be a
// single-element tensor which broadcasts (the only broadcast rule supported).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

Var scale(Var a, double c);

// Unary activations / transforms. log throws DomainError on non-positive
// input values.
Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);

// Bias add with implicit broadcast: [m,n]+[n] over rows, or
// [N,C,H,W]+[C] / [C,H,W]+[C] over channels.
Var add_bias(Var x, Var b);

Var matmul(Var a, Var b);

// Reductions to a rank-0 scalar.
Var sum(Var x);
Var mean(Var x);
// log(mean(exp(x))) with max-shift; exact for constant input.
Var logmeanexp(Var x);

Var reshape(Var x, std::vector<std::size_t> dims);
Var concat_cols(Var a, Var b);  // [m,na] ++ [m,nb] -> [m,na+nb]

// Valid-padding cross-correlation. x: [C,H,W] or [N,C,H,W],
// kernels: [F,C,k,k], output extent floor((H-k)/stride)+1.
Var conv2d(Var x, Var kernels, std::size_t stride);

// Linear adjoint of conv2d under the same kernel tensor: maps the F-channel
// side back to the C-channel side, output extent (H-1)*stride + k.
Var conv2d_transpose(Var x, Var kernels, std::size_t stride);

// Local activity average: per-row mean for [m,n] (broadcast back over the
// row), in-bounds 3x3 box mean per channel for [N,C,H,W].
Var neighborhood_mean(Var x);

// c[b,e] = sum_{i,j,l} theta[e,i,j,l] p[b,i] d[b,j] m[b,l].
// Throws ResourceError when P*D*M exceeds kTrilinearCap.
inline constexpr std::size_t kTrilinearCap = 512;
Var trilinear(Var theta, Var p, Var d, Var m);

// Mean binary cross-entropy in the numerically stable logits form.
Var bce_with_logits(Var logits, Var targets);

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride);
std::size_t tconv_out_extent(std::size_t in, std::size_t k, std::size_t stride);

}  // namespace mcc
