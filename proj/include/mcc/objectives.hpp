#pragma once

#include <vector>

#include "mcc/rng.hpp"
#include "mcc/tape.hpp"
#include "mcc/two_point.hpp"

namespace mcc {

// Loss coefficients. gamma multiplies the firing-energy term and is meant to
// stay far below the task signal; train() measures the gradient magnitudes at
// initialization and scales gamma down if it dominates.
struct LossConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.0;
    double tau_f = 0.1;    // energy temperature
    double theta_f = 0.0;  // firing threshold for the hard count
};

// Donsker-Varadhan lower bound: mean(joint) - log mean exp(marginal).
Var dv_bound(Var joint_scores, Var marginal_scores);
double dv_bound_value(const Tensor& joint_scores, const Tensor& marginal_scores);

// In-batch marginal resampling: rows of y permuted by a seeded Fisher-Yates
// pass, breaking the pairing with the x batch.
Tensor shuffle_marginals(const Tensor& y_batch, Rng& rng);

// Differentiable firing count surrogate: mean over units of tanh(a / tau_f).
// Inputs must be post-ReLU; a negative activation signals mis-wiring.
Var energy_term(const std::vector<Var>& activations, double tau_f);
double energy_value(const std::vector<const Tensor*>& activations, double tau_f);

// L1 = -alpha * I_f + gamma * E  (minimizing maximizes the MI bound).
Var loss_mi(Var mi_estimate, Var energy, const LossConfig& cfg);

// L2 = beta * mean squared error + gamma * E.
Var loss_reconstruction(Var target, Var prediction, Var energy, const LossConfig& cfg);

Var mse(Var target, Var prediction);
double mse_value(const Tensor& target, const Tensor& prediction);

// 1 where 20 log10(clean/noise) exceeds threshold_db, else 0; zero-noise
// cells count as clean-dominated.
Tensor ideal_binary_mask(const Tensor& clean, const Tensor& noise, double threshold_db = 0.0);

// Mean binary cross-entropy with logits (stable form).
Var mask_loss(Var predicted_mask_logits, Var ibm);

// Per-unit fraction of samples whose activation exceeds theta_f.
// records: [samples x units].
Tensor firing_probability(const Tensor& activation_records, double theta_f = 0.0);

// Flat firing fraction over a set of activation tensors (hard count).
double firing_fraction(const std::vector<const Tensor*>& activations, double theta_f = 0.0);

// I = -1/2 sum_k ln(1 - rho_k^2), in nats.
double analytic_gaussian_mi(const std::vector<double>& correlations);

// Parametric score function f(x, y) -> R for the DV bound: a two-point (or
// point baseline) encoder pair with a joint embedding head.
struct StatisticsNetworkConfig {
    std::size_t x_dim = 0;
    std::size_t y_dim = 0;
    std::vector<std::size_t> widths = {32, 32};  // per-stream stack
    std::size_t global_dim = 64;
    bool baseline = false;  // point-neuron streams instead of two-point
    Activation ctx_act = Activation::Sigmoid;
};

class StatisticsNetwork {
public:
    StatisticsNetwork(ParameterStore& store, const std::string& name,
                      StatisticsNetworkConfig cfg, Rng& rng);

    struct Out {
        Var scores;                     // [batch]
        std::vector<Var> activations;   // hidden post-ReLU stages
    };
    Out score(Tape& t, Var x, Var y) const;

    const StatisticsNetworkConfig& config() const { return cfg_; }

private:
    ParameterStore* store_ = nullptr;
    std::string name_;
    StatisticsNetworkConfig cfg_;
    std::vector<TwoPointDensePair> pairs_;
    std::vector<PointDenseLayer> point_layers_;
    Parameter* head_w_ = nullptr;
    Parameter* head_b_ = nullptr;
    Parameter* out_w_ = nullptr;
    Parameter* out_b_ = nullptr;
};

}  // namespace mcc
