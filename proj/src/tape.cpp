#include "mcc/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mcc/parallel.hpp"
#include "mcc/params.hpp"

namespace mcc {

const Tensor& Var::val() const { return tape->value_of(id); }
const std::vector<std::size_t>& Var::dims() const { return val().dims(); }

Var Tape::leaf(Tensor value) {
    const std::size_t id = emit(std::move(value), {}, nullptr);
    return Var{this, id};
}

Var Tape::leaf(double scalar_value) { return leaf(Tensor::scalar(scalar_value)); }

Var Tape::param(Parameter& p) {
    const std::size_t id = emit(p.value, {}, nullptr);
    nodes_[id].bound = &p;
    return Var{this, id};
}

std::size_t Tape::emit(Tensor value, std::vector<std::size_t> inputs, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

const Tensor& Tape::grad_of(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.grad.vec().empty()) throw ContractError("gradient not computed for node");
    return n.grad;
}

Tensor& Tape::accum_target(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.vec().empty()) n.grad = Tensor(n.value.dims());
    n.touched = true;
    return n.grad;
}

void Tape::backward(Var root) {
    if (root.tape != this) throw ContractError("backward root belongs to another tape");
    Node& r = nodes_.at(root.id);
    if (r.value.size() != 1) {
        throw ContractError("backward root must be scalar, got dims " + r.value.dims_str());
    }
    for (Node& n : nodes_) {
        n.grad = Tensor();
        n.touched = false;
    }
    r.grad = Tensor(r.value.dims());
    r.grad[0] = 1.0;
    r.touched = true;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.touched && n.back) n.back(*this, i);
    }
    for (std::size_t i = 0; i <= root.id; ++i) {
        Node& n = nodes_[i];
        if (n.bound && n.touched) {
            Tensor& g = n.bound->grad;
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
        }
    }
    // Materialize zero gradients so grad() is total over the tape.
    for (Node& n : nodes_) {
        if (n.grad.vec().empty()) n.grad = Tensor(n.value.dims());
    }
}

void Tape::backward(Var root, ParameterStore& store) {
    store.zero_grads();
    backward(root);
}

// ---------------------------------------------------------------------------
// op helpers
// ---------------------------------------------------------------------------

namespace {

bool is_broadcast_scalar(const Tensor& t) { return t.size() == 1; }

void check_binary_dims(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_dims(b) || is_broadcast_scalar(a) || is_broadcast_scalar(b)) return;
    throw ShapeError(std::string(op) + ": dims " + a.dims_str() + " vs " + b.dims_str() +
                     " (only exact match or scalar broadcast)");
}

// Adds gy into ga, reducing to a single element if ga is scalar-broadcast.
void accum_maybe_reduced(Tensor& ga, const Tensor& gy, double sign) {
    if (ga.size() == gy.size()) {
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += sign * gy[i];
    } else {
        double s = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) s += gy[i];
        ga[0] += sign * s;
    }
}

void accum_weighted(Tensor& ga, const Tensor& gy, const Tensor& w) {
    // ga += gy .* w with scalar broadcast on w, reduction if ga is scalar.
    const bool w_scalar = w.size() == 1;
    if (ga.size() == gy.size()) {
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * w[w_scalar ? 0 : i];
    } else {
        double s = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) s += gy[i] * w[w_scalar ? 0 : i];
        ga[0] += s;
    }
}

enum class BinOp { Add, Sub, Mul, Div };

Var binary(Var a, Var b, BinOp op, const char* name) {
    if (a.tape != b.tape) throw ContractError("operands from different tapes");
    Tape& t = *a.tape;
    const Tensor& av = t.value_of(a.id);
    const Tensor& bv = t.value_of(b.id);
    check_binary_dims(av, bv, name);
    const Tensor& big = is_broadcast_scalar(av) ? bv : av;
    Tensor y(big.dims());
    const bool as = is_broadcast_scalar(av);
    const bool bs = is_broadcast_scalar(bv);
    if (op == BinOp::Div) {
        for (std::size_t i = 0; i < bv.size(); ++i) {
            if (bv[i] == 0.0) throw DomainError("division by zero");
        }
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double x1 = av[as ? 0 : i];
        const double x2 = bv[bs ? 0 : i];
        switch (op) {
            case BinOp::Add: y[i] = x1 + x2; break;
            case BinOp::Sub: y[i] = x1 - x2; break;
            case BinOp::Mul: y[i] = x1 * x2; break;
            case BinOp::Div: y[i] = x1 / x2; break;
        }
    }
    const std::size_t ai = a.id, bi = b.id;
    const std::size_t id = t.emit(std::move(y), {ai, bi}, [ai, bi, op](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        const Tensor& av2 = tp.value_of(ai);
        const Tensor& bv2 = tp.value_of(bi);
        Tensor& ga = tp.accum_target(ai);
        Tensor& gb = tp.accum_target(bi);
        switch (op) {
            case BinOp::Add:
                accum_maybe_reduced(ga, gy, 1.0);
                accum_maybe_reduced(gb, gy, 1.0);
                break;
            case BinOp::Sub:
                accum_maybe_reduced(ga, gy, 1.0);
                accum_maybe_reduced(gb, gy, -1.0);
                break;
            case BinOp::Mul:
                accum_weighted(ga, gy, bv2);
                accum_weighted(gb, gy, av2);
                break;
            case BinOp::Div: {
                const bool as2 = av2.size() == 1;
                const bool bs2 = bv2.size() == 1;
                if (ga.size() == gy.size()) {
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / bv2[bs2 ? 0 : i];
                } else {
                    double s = 0.0;
                    for (std::size_t i = 0; i < gy.size(); ++i) s += gy[i] / bv2[bs2 ? 0 : i];
                    ga[0] += s;
                }
                if (gb.size() == gy.size()) {
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                        const double bb = bv2[bs2 ? 0 : i];
                        gb[i] += -gy[i] * av2[as2 ? 0 : i] / (bb * bb);
                    }
                } else {
                    double s = 0.0;
                    for (std::size_t i = 0; i < gy.size(); ++i) {
                        const double bb = bv2[i];
                        s += -gy[i] * av2[as2 ? 0 : i] / (bb * bb);
                    }
                    gb[0] += s;
                }
                break;
            }
        }
    });
    return Var{&t, id};
}

enum class UnOp { Relu, Sigmoid, Tanh, Exp, Log };

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Var unary(Var x, UnOp op) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    Tensor y(xv.dims());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        switch (op) {
            case UnOp::Relu: y[i] = v > 0.0 ? v : 0.0; break;
            case UnOp::Sigmoid: y[i] = stable_sigmoid(v); break;
            case UnOp::Tanh: y[i] = std::tanh(v); break;
            case UnOp::Exp: y[i] = std::exp(v); break;
            case UnOp::Log:
                if (v <= 0.0) throw DomainError("log of non-positive value");
                y[i] = std::log(v);
                break;
        }
    }
    const std::size_t xi = x.id;
    const std::size_t id = t.emit(std::move(y), {xi}, [xi, op](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        const Tensor& yv = tp.value_of(self);
        const Tensor& xv2 = tp.value_of(xi);
        Tensor& gx = tp.accum_target(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            double d = 0.0;
            switch (op) {
                case UnOp::Relu: d = xv2[i] > 0.0 ? 1.0 : 0.0; break;
                case UnOp::Sigmoid: d = yv[i] * (1.0 - yv[i]); break;
                case UnOp::Tanh: d = 1.0 - yv[i] * yv[i]; break;
                case UnOp::Exp: d = yv[i]; break;
                case UnOp::Log: d = 1.0 / xv2[i]; break;
            }
            gx[i] += gy[i] * d;
        }
    });
    return Var{&t, id};
}

// C(M x N) += op(A) . op(B); A stored [M,K] (or [K,M] if ta), B stored [K,N]
// (or [N,K] if tb). Parallel over rows; per-element reduction order is fixed.
void gemm_acc(bool ta, bool tb, std::size_t M, std::size_t N, std::size_t K,
              const double* A, const double* B, double* C) {
    const std::size_t row_cost = std::max<std::size_t>(1, N * K);
    const std::size_t grain = std::max<std::size_t>(1, 32768 / row_cost);
    parallel_for(M, grain, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double* crow = C + i * N;
            if (!ta && !tb) {
                const double* arow = A + i * K;
                for (std::size_t p = 0; p < K; ++p) {
                    const double a = arow[p];
                    if (a == 0.0) continue;
                    const double* brow = B + p * N;
                    for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
                }
            } else if (!ta && tb) {
                const double* arow = A + i * K;
                for (std::size_t j = 0; j < N; ++j) {
                    const double* brow = B + j * K;
                    double acc = 0.0;
                    for (std::size_t p = 0; p < K; ++p) acc += arow[p] * brow[p];
                    crow[j] += acc;
                }
            } else if (ta && !tb) {
                for (std::size_t p = 0; p < K; ++p) {
                    const double a = A[p * M + i];
                    if (a == 0.0) continue;
                    const double* brow = B + p * N;
                    for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
                }
            } else {
                for (std::size_t j = 0; j < N; ++j) {
                    double acc = 0.0;
                    for (std::size_t p = 0; p < K; ++p) acc += A[p * M + i] * B[j * K + p];
                    crow[j] += acc;
                }
            }
        }
    });
}

struct ConvGeom {
    std::size_t n, c, h, w;   // input
    std::size_t f, k, s;      // kernels
    std::size_t oh, ow;       // output
    bool batched;             // rank-4 input
};

ConvGeom conv_geometry(const Tensor& x, const Tensor& kern, std::size_t stride,
                       const char* op) {
    if (kern.rank() != 4) throw ShapeError(std::string(op) + ": kernels must be rank 4");
    if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
    ConvGeom g{};
    g.batched = x.rank() == 4;
    if (x.rank() != 3 && x.rank() != 4) {
        throw ShapeError(std::string(op) + ": input must be rank 3 or 4, got " + x.dims_str());
    }
    const std::size_t base = g.batched ? 1 : 0;
    g.n = g.batched ? x.extent(0) : 1;
    g.c = x.extent(base + 0);
    g.h = x.extent(base + 1);
    g.w = x.extent(base + 2);
    g.f = kern.extent(0);
    g.k = kern.extent(2);
    g.s = stride;
    if (kern.extent(2) != kern.extent(3)) {
        throw ShapeError(std::string(op) + ": kernels must be square");
    }
    return g;
}

void conv_fwd_acc(const ConvGeom& g, const double* x, const double* w, double* y) {
    const std::size_t per_out = g.c * g.k * g.k;
    const std::size_t grain = std::max<std::size_t>(1, 16384 / std::max<std::size_t>(1, g.oh * g.ow * per_out));
    parallel_for(g.n * g.f, grain, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t nf = lo; nf < hi; ++nf) {
            const std::size_t n = nf / g.f;
            const std::size_t f = nf % g.f;
            const double* xb = x + n * g.c * g.h * g.w;
            const double* wf = w + f * g.c * g.k * g.k;
            double* yb = y + (n * g.f + f) * g.oh * g.ow;
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < g.c; ++c) {
                        const double* xc = xb + c * g.h * g.w;
                        const double* wc = wf + c * g.k * g.k;
                        for (std::size_t ky = 0; ky < g.k; ++ky) {
                            const double* xr = xc + (oy * g.s + ky) * g.w + ox * g.s;
                            const double* wr = wc + ky * g.k;
                            for (std::size_t kx = 0; kx < g.k; ++kx) acc += xr[kx] * wr[kx];
                        }
                    }
                    yb[oy * g.ow + ox] += acc;
                }
            }
        }
    });
}

// y[n,c,oy,ox] += sum_{f,ky,kx : oy=iy*s+ky, ox=ix*s+kx} t[n,f,iy,ix] * w[f,c,ky,kx]
// Output extents (toh, tow) are passed explicitly: the exact transpose size for
// the tconv op, or the original input size when used as the conv input-grad.
void tconv_fwd_acc(std::size_t N, std::size_t F, std::size_t IH, std::size_t IW,
                   std::size_t C, std::size_t K, std::size_t S,
                   const double* t, const double* w, double* y,
                   std::size_t toh, std::size_t tow) {
    const std::size_t grain = std::max<std::size_t>(1, 16384 / std::max<std::size_t>(1, toh * tow * F * K));
    parallel_for(N * C, grain, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t nc = lo; nc < hi; ++nc) {
            const std::size_t n = nc / C;
            const std::size_t c = nc % C;
            const double* tb = t + n * F * IH * IW;
            double* yb = y + (n * C + c) * toh * tow;
            for (std::size_t oy = 0; oy < toh; ++oy) {
                for (std::size_t ox = 0; ox < tow; ++ox) {
                    double acc = 0.0;
                    for (std::size_t f = 0; f < F; ++f) {
                        const double* tf = tb + f * IH * IW;
                        const double* wf = w + (f * C + c) * K * K;
                        for (std::size_t ky = 0; ky < K; ++ky) {
                            if (oy < ky) break;
                            const std::size_t ry = oy - ky;
                            if (ry % S != 0) continue;
                            const std::size_t iy = ry / S;
                            if (iy >= IH) continue;
                            for (std::size_t kx = 0; kx < K; ++kx) {
                                if (ox < kx) break;
                                const std::size_t rx = ox - kx;
                                if (rx % S != 0) continue;
                                const std::size_t ix = rx / S;
                                if (ix >= IW) continue;
                                acc += tf[iy * IW + ix] * wf[ky * K + kx];
                            }
                        }
                    }
                    yb[oy * tow + ox] += acc;
                }
            }
        }
    });
}

// gw[a,b,ky,kx] += sum_{n,p,q} top[n,a,p,q] * bottom[n,b,p*S+ky, q*S+kx]
void kernel_grad_acc(std::size_t N, std::size_t A, std::size_t TH, std::size_t TW,
                     std::size_t B, std::size_t BH, std::size_t BW,
                     std::size_t K, std::size_t S,
                     const double* top, const double* bottom, double* gw) {
    parallel_for(A, 1, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t a = lo; a < hi; ++a) {
            for (std::size_t b = 0; b < B; ++b) {
                double* gwk = gw + (a * B + b) * K * K;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        double acc = 0.0;
                        for (std::size_t n = 0; n < N; ++n) {
                            const double* tp = top + (n * A + a) * TH * TW;
                            const double* bp = bottom + (n * B + b) * BH * BW;
                            for (std::size_t p = 0; p < TH; ++p) {
                                const double* tr = tp + p * TW;
                                const double* br = bp + (p * S + ky) * BW + kx;
                                for (std::size_t q = 0; q < TW; ++q) {
                                    acc += tr[q] * br[q * S];
                                }
                            }
                        }
                        gwk[ky * K + kx] += acc;
                    }
                }
            }
        }
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// public ops
// ---------------------------------------------------------------------------

Var add(Var a, Var b) { return binary(a, b, BinOp::Add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::Sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::Mul, "mul"); }
Var div(Var a, Var b) { return binary(a, b, BinOp::Div, "div"); }

Var scale(Var a, double c) {
    Tape& t = *a.tape;
    const Tensor& av = t.value_of(a.id);
    Tensor y(av.dims());
    for (std::size_t i = 0; i < av.size(); ++i) y[i] = c * av[i];
    const std::size_t ai = a.id;
    const std::size_t id = t.emit(std::move(y), {ai}, [ai, c](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        Tensor& ga = tp.accum_target(ai);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += c * gy[i];
    });
    return Var{&t, id};
}

Var relu(Var x) { return unary(x, UnOp::Relu); }
Var sigmoid(Var x) { return unary(x, UnOp::Sigmoid); }
Var tanh(Var x) { return unary(x, UnOp::Tanh); }
Var exp(Var x) { return unary(x, UnOp::Exp); }
Var log(Var x) { return unary(x, UnOp::Log); }

Var add_bias(Var x, Var b) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    const Tensor& bv = t.value_of(b.id);
    if (bv.rank() != 1) throw ShapeError("add_bias: bias must be rank 1");
    std::size_t channels ;
    std::size_t inner;
    if (xv.rank() == 2) {
        channels = xv.extent(1);
        inner = 1;
    } else if (xv.rank() == 3) {
        channels = xv.extent(0);
        inner = xv.extent(1) * xv.extent(2);
    } else if (xv.rank() == 4) {
        channels = xv.extent(1);
        inner = xv.extent(2) * xv.extent(3);
    } else {
        throw ShapeError("add_bias: input must be rank 2, 3, or 4");
    }
    if (bv.extent(0) != channels) {
        throw ShapeError("add_bias: bias extent " + bv.dims_str() + " does not match " +
                         xv.dims_str());
    }
    Tensor y(xv.dims());
    const std::size_t groups = xv.size() / (channels * inner);
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t c = 0; c < channels; ++c) {
            const double bc = bv[c];
            const std::size_t base = (g * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) y[base + i] = xv[base + i] + bc;
        }
    }
    const std::size_t xi = x.id, bi = b.id;
    const std::size_t id = t.emit(std::move(y), {xi, bi},
                                  [xi, bi, channels, inner](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        Tensor& gx = tp.accum_target(xi);
        Tensor& gb = tp.accum_target(bi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
        const std::size_t groups = gy.size() / (channels * inner);
        for (std::size_t g = 0; g < groups; ++g) {
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t base = (g * channels + c) * inner;
                double s = 0.0;
                for (std::size_t i = 0; i < inner; ++i) s += gy[base + i];
                gb[c] += s;
            }
        }
    });
    return Var{&t, id};
}

Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& av = t.value_of(a.id);
    const Tensor& bv = t.value_of(b.id);
    if (av.rank() != 2 || bv.rank() != 2) {
        throw ShapeError("matmul: operands must be rank 2, got " + av.dims_str() + " and " +
                         bv.dims_str());
    }
    if (av.extent(1) != bv.extent(0)) {
        throw ShapeError("matmul: inner extents differ, " + av.dims_str() + " vs " +
                         bv.dims_str());
    }
    const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    Tensor y({m, n});
    gemm_acc(false, false, m, n, k, av.data(), bv.data(), y.data());
    const std::size_t ai = a.id, bi = b.id;
    const std::size_t id = t.emit(std::move(y), {ai, bi},
                                  [ai, bi, m, n, k](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        const Tensor& av2 = tp.value_of(ai);
        const Tensor& bv2 = tp.value_of(bi);
        gemm_acc(false, true, m, k, n, gy.data(), bv2.data(), tp.accum_target(ai).data());
        gemm_acc(true, false, k, n, m, av2.data(), gy.data(), tp.accum_target(bi).data());
    });
    return Var{&t, id};
}

Var sum(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
    const std::size_t xi = x.id;
    const std::size_t id = t.emit(Tensor::scalar(s), {xi}, [xi](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        Tensor& gx = tp.accum_target(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    return Var{&t, id};
}

Var mean(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    const double inv = 1.0 / static_cast<double>(xv.size());
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
    const std::size_t xi = x.id;
    const std::size_t id = t.emit(Tensor::scalar(s * inv), {xi},
                                  [xi, inv](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0] * inv;
        Tensor& gx = tp.accum_target(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
    return Var{&t, id};
}

Var logmeanexp(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    if (xv.size() < 1) throw ShapeError("logmeanexp: empty input");
    double mx = xv[0];
    for (std::size_t i = 1; i < xv.size(); ++i) mx = std::max(mx, xv[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < xv.size(); ++i) s += std::exp(xv[i] - mx);
    const double y = mx + std::log(s / static_cast<double>(xv.size()));
    const std::size_t xi = x.id;
    const std::size_t id = t.emit(Tensor::scalar(y), {xi},
                                  [xi, mx, s](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0];
        const Tensor& xv2 = tp.value_of(xi);
        Tensor& gx = tp.accum_target(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += g * std::exp(xv2[i] - mx) / s;
        }
    });
    return Var{&t, id};
}

Var reshape(Var x, std::vector<std::size_t> dims) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    if (dims_product(dims) != xv.size()) {
        throw ShapeError("reshape: size mismatch for " + xv.dims_str());
    }
    Tensor y(dims, xv.vec());
    const std::size_t xi = x.id;
    const std::size_t id = t.emit(std::move(y), {xi}, [xi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        Tensor& gx = tp.accum_target(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
    return Var{&t, id};
}

Var concat_cols(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& av = t.value_of(a.id);
    const Tensor& bv = t.value_of(b.id);
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(0) != bv.extent(0)) {
        throw ShapeError("concat_cols: need [m,na] and [m,nb], got " + av.dims_str() + " and " +
                         bv.dims_str());
    }
    const std::size_t m = av.extent(0), na = av.extent(1), nb = bv.extent(1);
    Tensor y({m, na + nb});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < na; ++j) y[i * (na + nb) + j] = av[i * na + j];
        for (std::size_t j = 0; j < nb; ++j) y[i * (na + nb) + na + j] = bv[i * nb + j];
    }
    const std::size_t ai = a.id, bi = b.id;
    const std::size_t id = t.emit(std::move(y), {ai, bi},
                                  [ai, bi, m, na, nb](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        Tensor& ga = tp.accum_target(ai);
        Tensor& gb = tp.accum_target(bi);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < na; ++j) ga[i * na + j] += gy[i * (na + nb) + j];
            for (std::size_t j = 0; j < nb; ++j) gb[i * nb + j] += gy[i * (na + nb) + na + j];
        }
    });
    return Var{&t, id};
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
    if (stride < 1) throw ShapeError("conv stride must be >= 1");
    if (k > in) throw ShapeError("kernel extent exceeds input extent");
    return (in - k) / stride + 1;
}

std::size_t tconv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
    if (stride < 1) throw ShapeError("conv stride must be >= 1");
    return (in - 1) * stride + k;
}

Var conv2d(Var x, Var kernels, std::size_t stride) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    const Tensor& kv = t.value_of(kernels.id);
    ConvGeom g = conv_geometry(xv, kv, stride, "conv2d");
    if (kv.extent(1) != g.c) {
        throw ShapeError("conv2d: kernel channels " + kv.dims_str() + " vs input " +
                         xv.dims_str());
    }
    g.oh = conv_out_extent(g.h, g.k, g.s);
    g.ow = conv_out_extent(g.w, g.k, g.s);
    Tensor y(g.batched ? std::vector<std::size_t>{g.n, g.f, g.oh, g.ow}
                       : std::vector<std::size_t>{g.f, g.oh, g.ow});
    conv_fwd_acc(g, xv.data(), kv.data(), y.data());
    const std::size_t xi = x.id, ki = kernels.id;
    const std::size_t id = t.emit(std::move(y), {xi, ki}, [xi, ki, g](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        const Tensor& xv2 = tp.value_of(xi);
        const Tensor& kv2 = tp.value_of(ki);
        tconv_fwd_acc(g.n, g.f, g.oh, g.ow, g.c, g.k, g.s, gy.data(), kv2.data(),
                      tp.accum_target(xi).data(), g.h, g.w);
        kernel_grad_acc(g.n, g.f, g.oh, g.ow, g.c, g.h, g.w, g.k, g.s, gy.data(), xv2.data(),
                        tp.accum_target(ki).data());
    });
    return Var{&t, id};
}

Var conv2d_transpose(Var x, Var kernels, std::size_t stride) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    const Tensor& kv = t.value_of(kernels.id);
    ConvGeom g = conv_geometry(xv, kv, stride, "conv2d_transpose");
    if (kv.extent(0) != g.c) {
        throw ShapeError("conv2d_transpose: kernel leading extent " + kv.dims_str() +
                         " must match input channels " + xv.dims_str());
    }
    const std::size_t F = g.c;               // incoming channels (conv output side)
    const std::size_t C = kv.extent(1);      // produced channels (conv input side)
    const std::size_t oh = tconv_out_extent(g.h, g.k, g.s);
    const std::size_t ow = tconv_out_extent(g.w, g.k, g.s);
    Tensor y(g.batched ? std::vector<std::size_t>{g.n, C, oh, ow}
                       : std::vector<std::size_t>{C, oh, ow});
    tconv_fwd_acc(g.n, F, g.h, g.w, C, g.k, g.s, xv.data(), kv.data(), y.data(), oh, ow);
    const std::size_t xi = x.id, ki = kernels.id;
    ConvGeom back = g;
    back.c = C;
    back.f = F;
    back.oh = g.h;
    back.ow = g.w;
    back.h = oh;
    back.w = ow;
    const std::size_t id = t.emit(std::move(y), {xi, ki},
                                  [xi, ki, back](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        const Tensor& xv2 = tp.value_of(xi);
        const Tensor& kv2 = tp.value_of(ki);
        // grad wrt input: a plain valid conv of gy with the same kernels.
        ConvGeom fg = back;
        conv_fwd_acc(fg, gy.data(), kv2.data(), tp.accum_target(xi).data());
        // grad wrt kernels: same bilinear pattern with input in the "top" role.
        kernel_grad_acc(back.n, back.f, back.oh, back.ow, back.c, back.h, back.w, back.k,
                        back.s, xv2.data(), gy.data(), tp.accum_target(ki).data());
    });
    return Var{&t, id};
}

Var neighborhood_mean(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value_of(x.id);
    if (xv.rank() == 2) {
        const std::size_t m = xv.extent(0), n = xv.extent(1);
        Tensor y({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += xv[i * n + j];
            const double v = s / static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) y[i * n + j] = v;
        }
        const std::size_t xi = x.id;
        const std::size_t id = t.emit(std::move(y), {xi}, [xi, m, n](Tape& tp, std::size_t self) {
            const Tensor& gy = tp.grad_of(self);
            Tensor& gx = tp.accum_target(xi);
            for (std::size_t i = 0; i < m; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += gy[i * n + j];
                const double v = s / static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += v;
            }
        });
        return Var{&t, id};
    }
    if (xv.rank() != 4) throw ShapeError("neighborhood_mean: input must be rank 2 or 4");
    const std::size_t N = xv.extent(0), C = xv.extent(1), H = xv.extent(2), W = xv.extent(3);
    Tensor y({N, C, H, W});
    const auto window_mean = [H, W](const double* plane, std::size_t p, std::size_t q) {
        const std::size_t y0 = p == 0 ? 0 : p - 1, y1 = std::min(H - 1, p + 1);
        const std::size_t x0 = q == 0 ? 0 : q - 1, x1 = std::min(W - 1, q + 1);
        double s = 0.0;
        std::size_t cnt = 0;
        for (std::size_t a = y0; a <= y1; ++a) {
            for (std::size_t b = x0; b <= x1; ++b) {
                s += plane[a * W + b];
                ++cnt;
            }
        }
        return s / static_cast<double>(cnt);
    };
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* plane = xv.data() + nc * H * W;
        double* yp = y.data() + nc * H * W;
        for (std::size_t p = 0; p < H; ++p) {
            for (std::size_t q = 0; q < W; ++q) yp[p * W + q] = window_mean(plane, p, q);
        }
    }
    const std::size_t xi = x.id;
    const std::size_t id = t.emit(std::move(y), {xi},
                                  [xi, N, C, H, W](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        Tensor& gx = tp.accum_target(xi);
        for (std::size_t nc = 0; nc < N * C; ++nc) {
            const double* gp = gy.data() + nc * H * W;
            double* gxp = gx.data() + nc * H * W;
            for (std::size_t p = 0; p < H; ++p) {
                for (std::size_t q = 0; q < W; ++q) {
                    const std::size_t y0 = p == 0 ? 0 : p - 1, y1 = std::min(H - 1, p + 1);
                    const std::size_t x0 = q == 0 ? 0 : q - 1, x1 = std::min(W - 1, q + 1);
                    const std::size_t cnt = (y1 - y0 + 1) * (x1 - x0 + 1);
                    const double v = gp[p * W + q] / static_cast<double>(cnt);
                    for (std::size_t a = y0; a <= y1; ++a) {
                        for (std::size_t b = x0; b <= x1; ++b) gxp[a * W + b] += v;
                    }
                }
            }
        }
    });
    return Var{&t, id};
}

Var trilinear(Var theta, Var p, Var d, Var m) {
    Tape& t = *theta.tape;
    const Tensor& th = t.value_of(theta.id);
    const Tensor& pv = t.value_of(p.id);
    const Tensor& dv = t.value_of(d.id);
    const Tensor& mv = t.value_of(m.id);
    if (th.rank() != 4 || pv.rank() != 2 || dv.rank() != 2 || mv.rank() != 2) {
        throw ShapeError("trilinear: theta rank 4 and rank-2 operands required");
    }
    const std::size_t E = th.extent(0), P = th.extent(1), D = th.extent(2), M = th.extent(3);
    const std::size_t B = pv.extent(0);
    if (pv.extent(1) != P || dv.extent(1) != D || mv.extent(1) != M ||
        dv.extent(0) != B || mv.extent(0) != B) {
        throw ShapeError("trilinear: operand extents inconsistent with theta");
    }
    if (P * D * M > kTrilinearCap) {
        throw ResourceError("trilinear: extent product " + std::to_string(P * D * M) +
                            " exceeds cap " + std::to_string(kTrilinearCap));
    }
    Tensor y({B, E});
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t e = 0; e < E; ++e) {
            double acc = 0.0;
            for (std::size_t i = 0; i < P; ++i) {
                const double pi = pv[b * P + i];
                for (std::size_t j = 0; j < D; ++j) {
                    const double pd = pi * dv[b * D + j];
                    const double* tr = th.data() + ((e * P + i) * D + j) * M;
                    for (std::size_t l = 0; l < M; ++l) acc += tr[l] * pd * mv[b * M + l];
                }
            }
            y[b * E + e] = acc;
        }
    }
    const std::size_t ti = theta.id, pi2 = p.id, di = d.id, mi = m.id;
    const std::size_t id = t.emit(std::move(y), {ti, pi2, di, mi},
                                  [ti, pi2, di, mi, E, P, D, M, B](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.grad_of(self);
        const Tensor& th2 = tp.value_of(ti);
        const Tensor& pv2 = tp.value_of(pi2);
        const Tensor& dv2 = tp.value_of(di);
        const Tensor& mv2 = tp.value_of(mi);
        Tensor& gth = tp.accum_target(ti);
        Tensor& gp = tp.accum_target(pi2);
        Tensor& gd = tp.accum_target(di);
        Tensor& gm = tp.accum_target(mi);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t e = 0; e < E; ++e) {
                const double g = gy[b * E + e];
                if (g == 0.0) continue;
                for (std::size_t i = 0; i < P; ++i) {
                    const double pi3 = pv2[b * P + i];
                    for (std::size_t j = 0; j < D; ++j) {
                        const double dj = dv2[b * D + j];
                        const double* tr = th2.data() + ((e * P + i) * D + j) * M;
                        double* gtr = gth.data() + ((e * P + i) * D + j) * M;
                        for (std::size_t l = 0; l < M; ++l) {
                            const double ml = mv2[b * M + l];
                            gtr[l] += g * pi3 * dj * ml;
                            gp[b * P + i] += g * tr[l] * dj * ml;
                            gd[b * D + j] += g * tr[l] * pi3 * ml;
                            gm[b * M + l] += g * tr[l] * pi3 * dj;
                        }
                    }
                }
            }
        }
    });
    return Var{&t, id};
}

Var bce_with_logits(Var logits, Var targets) {
    Tape& t = *logits.tape;
    const Tensor& zv = t.value_of(logits.id);
    const Tensor& yv = t.value_of(targets.id);
    if (!zv.same_dims(yv)) {
        throw ShapeError("bce_with_logits: dims " + zv.dims_str() + " vs " + yv.dims_str());
    }
    const double inv = 1.0 / static_cast<double>(zv.size());
    double s = 0.0;
    for (std::size_t i = 0; i < zv.size(); ++i) {
        const double z = zv[i];
        s += std::max(z, 0.0) - z * yv[i] + std::log1p(std::exp(-std::fabs(z)));
    }
    const std::size_t zi = logits.id, yi = targets.id;
    const std::size_t id = t.emit(Tensor::scalar(s * inv), {zi, yi},
                                  [zi, yi, inv](Tape& tp, std::size_t self) {
        const double g = tp.grad_of(self)[0] * inv;
        const Tensor& zv2 = tp.value_of(zi);
        const Tensor& yv2 = tp.value_of(yi);
        Tensor& gz = tp.accum_target(zi);
        Tensor& gt = tp.accum_target(yi);
        for (std::size_t i = 0; i < zv2.size(); ++i) {
            gz[i] += g * (stable_sigmoid(zv2[i]) - yv2[i]);
            gt[i] += g * (-zv2[i]);
        }
    });
    return Var{&t, id};
}

}  // namespace mcc
