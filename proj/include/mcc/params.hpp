#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "mcc/rng.hpp"
#include "mcc/tensor.hpp"

namespace mcc {

// One learnable entry: value, gradient, Adam moments, per-entry step count.
// All four tensors share dims for the entry's lifetime.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m1;
    Tensor m2;
    std::size_t step = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named parameter collection; iteration order is the lexicographic name
// order, which keeps every sweep over entries deterministic.
class ParameterStore {
public:
    Parameter& create(const std::string& name, Tensor init);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    void zero_grads();
    void adam_step(const AdamConfig& cfg);

    std::size_t entry_count() const { return entries_.size(); }
    std::size_t scalar_count(const std::string& prefix = "") const;
    double grad_norm() const;

    void for_each(const std::function<void(Parameter&)>& fn);
    void for_each(const std::function<void(const Parameter&)>& fn) const;

    // Checkpoint directory: index.txt lists "name<TAB>file" pairs, one MCCT
    // file per entry.
    void save(const std::string& dir) const;
    void load(const std::string& dir);

private:
    std::map<std::string, std::unique_ptr<Parameter>> entries_;
};

// i.i.d. U(-L, L) with L = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                      std::vector<std::size_t> dims);

}  // namespace mcc
