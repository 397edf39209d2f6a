#pragma once

#include <string>

#include "mcc/params.hpp"
#include "mcc/tape.hpp"

namespace mcc {

enum class Activation { Relu, Sigmoid, Tanh, Identity };
Var apply_activation(Var x, Activation a);

enum class IntegrationMode { Additive, Trilinear };
enum class FuseMode { Concat, Add, Mul };

// x[batch,in] * W[in,out] + b[out]
Var affine(Var x, Var w, Var b);

// Universal-context reservoir value carried between layers. Starts as zeros;
// inside a forward pass memory travels as tape nodes.
struct MemoryState {
    Tensor m;
    static MemoryState zeros(std::vector<std::size_t> dims) { return {Tensor(std::move(dims))}; }
};

// ---------------------------------------------------------------------------
// Dense context-sensitive layer.
//
// Per layer l (streams write the other stream's quantities with a bar):
//   r = W_rf A_prev + b_rf                      receptive field
//   p = W_p r + b_p                             proximal context
//   d = W_d rbar_prev + b_d                     distal context
//   m = W_rec m_prev + W_self A_prev + W_cross Abar_prev + b_m
//   c = zeta_c(W_cp p + W_cd d + W_cm m + b_c)  (additive integration)
//     | theta[e,i,j,l] p_i d_j m_l              (trilinear, small extents)
//   a = r . c        (optionally  r . c . s(c)  with s the normalized
//                     neighborhood activity)
//   A = zeta(a)
// ---------------------------------------------------------------------------
struct TwoPointDenseConfig {
    std::size_t in_dim = 0;        // width of A_prev
    std::size_t cross_dim = 0;     // width of Abar_prev and rbar_prev
    std::size_t units = 0;
    std::size_t mem_dim = 0;       // 0 => units
    std::size_t mem_prev_dim = 0;  // 0 => mem_dim (stack start: zeros of own shape)
    IntegrationMode integration = IntegrationMode::Additive;
    Activation act = Activation::Relu;
    Activation ctx_act = Activation::Sigmoid;
    bool neighborhood = false;
    bool with_memory = true;       // false when a pair shares one memory update
};

class TwoPointDenseLayer {
public:
    TwoPointDenseLayer(ParameterStore& store, std::string name, TwoPointDenseConfig cfg,
                       Rng& rng);

    Var rf_transform(Tape& t, Var a_prev) const;
    Var proximal_context(Tape& t, Var r) const;
    Var distal_context(Tape& t, Var rbar_prev) const;
    Var universal_context_update(Tape& t, Var m_prev, Var a_prev, Var abar_prev) const;
    Var integrate_context(Tape& t, Var p, Var d, Var m) const;
    static Var modulate(Var r, Var c);
    static Var modulate_neighborhood(Var r, Var c);

    struct Output {
        Var activation;
        Var rf;
        Var memory;
        Var context;
    };
    Output forward(Tape& t, Var a_prev, Var abar_prev, Var rbar_prev, Var m_prev) const;
    // Shared-memory path: integration consumes an externally updated m.
    Output forward_with_memory(Tape& t, Var a_prev, Var rbar_prev, Var m) const;

    const TwoPointDenseConfig& config() const { return cfg_; }
    std::size_t mem_dim() const { return cfg_.mem_dim; }
    std::size_t parameter_count() const;
    static std::size_t expected_parameter_count(const TwoPointDenseConfig& cfg);

private:
    ParameterStore* store_ = nullptr;
    std::string name_;
    TwoPointDenseConfig cfg_;
    Parameter* rf_w_;
    Parameter* rf_b_;
    Parameter* p_w_;
    Parameter* p_b_;
    Parameter* d_w_;
    Parameter* d_b_;
    Parameter* m_rec_ = nullptr;
    Parameter* m_self_ = nullptr;
    Parameter* m_cross_ = nullptr;
    Parameter* m_b_ = nullptr;
    Parameter* iw_p_ = nullptr;
    Parameter* iw_d_ = nullptr;
    Parameter* iw_m_ = nullptr;
    Parameter* i_b_ = nullptr;
    Parameter* i_theta_ = nullptr;
};

// Two streams of one layer index. With shared memory (the default, the
// context is "universal") stream 0's maps update one m consumed by both
// streams; otherwise each stream keeps its own reservoir.
class TwoPointDensePair {
public:
    TwoPointDensePair(ParameterStore& store, const std::string& name,
                      TwoPointDenseConfig cfg0, TwoPointDenseConfig cfg1,
                      bool shared_memory, Rng& rng);

    struct Output {
        Var a0, a1;
        Var r0, r1;
        Var m0, m1;  // identical Var in shared mode
    };
    Output forward(Tape& t, Var a0_prev, Var a1_prev, Var r0_prev, Var r1_prev,
                   Var m0_prev, Var m1_prev) const;

    const TwoPointDenseLayer& stream0() const { return l0_; }
    const TwoPointDenseLayer& stream1() const { return l1_; }
    bool shared_memory() const { return shared_; }

private:
    TwoPointDenseLayer l0_;
    TwoPointDenseLayer l1_;
    bool shared_;
};

// Point-neuron baseline: A = zeta(W fuse(A_prev, Abar_prev) + b).
struct PointDenseConfig {
    std::size_t in_dim = 0;
    std::size_t cross_dim = 0;
    std::size_t units = 0;
    FuseMode fuse = FuseMode::Concat;
    Activation act = Activation::Relu;
};

class PointDenseLayer {
public:
    PointDenseLayer(ParameterStore& store, std::string name, PointDenseConfig cfg, Rng& rng);
    Var forward(Tape& t, Var a_prev, Var abar_prev) const;
    const PointDenseConfig& config() const { return cfg_; }

private:
    ParameterStore* store_ = nullptr;
    std::string name_;
    PointDenseConfig cfg_;
    Parameter* w_ = nullptr;       // concat mode
    Parameter* w_self_ = nullptr;  // add/mul modes
    Parameter* w_cross_ = nullptr;
    Parameter* b_ = nullptr;
};

// ---------------------------------------------------------------------------
// Convolutional form: every linear map is a valid-padding conv with its own
// kernel bank; contexts are per-filter and all five streams share geometry at
// the modulation point. Cross/memory geometries are explicit because the two
// streams may enter with different spatial extents.
// ---------------------------------------------------------------------------
struct TwoPointConvConfig {
    std::size_t in_channels = 0;
    std::size_t cross_channels = 0;   // channels of Abar_prev / rbar_prev
    std::size_t filters = 0;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t cross_kernel = 3;    // maps the other stream's prev geometry here
    std::size_t cross_stride = 2;
    std::size_t mem_prev_channels = 0;  // 0 => filters
    std::size_t mem_rec_kernel = 1;     // maps m_prev geometry here
    std::size_t mem_rec_stride = 1;
    Activation act = Activation::Relu;
    Activation ctx_act = Activation::Sigmoid;
    bool neighborhood = false;
    bool with_memory = true;
};

class TwoPointConvLayer {
public:
    TwoPointConvLayer(ParameterStore& store, std::string name, TwoPointConvConfig cfg,
                      Rng& rng);

    Var rf_transform(Tape& t, Var a_prev) const;
    Var proximal_context(Tape& t, Var r) const;
    Var distal_context(Tape& t, Var rbar_prev) const;
    Var universal_context_update(Tape& t, Var m_prev, Var a_prev, Var abar_prev) const;
    Var integrate_context(Tape& t, Var p, Var d, Var m) const;

    struct Output {
        Var activation;
        Var rf;
        Var memory;
        Var context;
    };
    Output forward(Tape& t, Var a_prev, Var abar_prev, Var rbar_prev, Var m_prev) const;
    Output forward_with_memory(Tape& t, Var a_prev, Var rbar_prev, Var m) const;

    const TwoPointConvConfig& config() const { return cfg_; }

private:
    ParameterStore* store_ = nullptr;
    std::string name_;
    TwoPointConvConfig cfg_;
    Parameter* rf_k_;
    Parameter* rf_b_;
    Parameter* p_k_;
    Parameter* p_b_;
    Parameter* d_k_;
    Parameter* d_b_;
    Parameter* m_rec_ = nullptr;
    Parameter* m_self_ = nullptr;
    Parameter* m_cross_ = nullptr;
    Parameter* m_b_ = nullptr;
    Parameter* iw_p_ = nullptr;
    Parameter* iw_d_ = nullptr;
    Parameter* iw_m_ = nullptr;
    Parameter* i_b_ = nullptr;
};

class TwoPointConvPair {
public:
    TwoPointConvPair(ParameterStore& store, const std::string& name, TwoPointConvConfig cfg0,
                     TwoPointConvConfig cfg1, bool shared_memory, Rng& rng);

    struct Output {
        Var a0, a1;
        Var r0, r1;
        Var m0, m1;
    };
    Output forward(Tape& t, Var a0_prev, Var a1_prev, Var r0_prev, Var r1_prev,
                   Var m0_prev, Var m1_prev) const;

    const TwoPointConvLayer& stream0() const { return l0_; }
    const TwoPointConvLayer& stream1() const { return l1_; }

private:
    TwoPointConvLayer l0_;
    TwoPointConvLayer l1_;
    bool shared_;
};

// Point-neuron conv baseline with addition fusion of the two streams:
// A = zeta(conv(A_prev) + conv(Abar_prev) + b).
struct PointConvConfig {
    std::size_t in_channels = 0;
    std::size_t cross_channels = 0;
    std::size_t filters = 0;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t cross_kernel = 3;
    std::size_t cross_stride = 2;
    Activation act = Activation::Relu;
};

class PointConvLayer {
public:
    PointConvLayer(ParameterStore& store, std::string name, PointConvConfig cfg, Rng& rng);
    Var forward(Tape& t, Var a_prev, Var abar_prev) const;
    const PointConvConfig& config() const { return cfg_; }

private:
    ParameterStore* store_ = nullptr;
    std::string name_;
    PointConvConfig cfg_;
    Parameter* k_self_ = nullptr;
    Parameter* k_cross_ = nullptr;
    Parameter* b_ = nullptr;
};

// Picks (kernel, stride) for a valid conv mapping extent `in` to exactly
// `out`, preferring the largest stride. Throws ShapeError when impossible.
std::pair<std::size_t, std::size_t> fit_conv_geometry(std::size_t in, std::size_t out);

}  // namespace mcc
