#include "mcc/params.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mcc/errors.hpp"

namespace mcc {

Parameter& ParameterStore::create(const std::string& name, Tensor init) {
    if (entries_.count(name)) throw ContractError("duplicate parameter: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->grad = Tensor(init.dims());
    p->m1 = Tensor(init.dims());
    p->m2 = Tensor(init.dims());
    p->value = std::move(init);
    auto [it, ok] = entries_.emplace(name, std::move(p));
    (void)ok;
    return *it->second;
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return *it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return *it->second;
}

bool ParameterStore::contains(const std::string& name) const {
    return entries_.count(name) != 0;
}

void ParameterStore::zero_grads() {
    for (auto& [name, p] : entries_) p->grad.fill(0.0);
}

void ParameterStore::adam_step(const AdamConfig& cfg) {
    for (auto& [name, p] : entries_) {
        p->step += 1;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            p->m1[i] = cfg.beta1 * p->m1[i] + (1.0 - cfg.beta1) * g;
            p->m2[i] = cfg.beta2 * p->m2[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = p->m1[i] / c1;
            const double vhat = p->m2[i] / c2;
            p->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

std::size_t ParameterStore::scalar_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, p] : entries_) {
        if (name.rfind(prefix, 0) == 0) n += p->value.size();
    }
    return n;
}

double ParameterStore::grad_norm() const {
    double s = 0.0;
    for (const auto& [name, p] : entries_) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) s += p->grad[i] * p->grad[i];
    }
    return std::sqrt(s);
}

void ParameterStore::for_each(const std::function<void(Parameter&)>& fn) {
    for (auto& [name, p] : entries_) fn(*p);
}

void ParameterStore::for_each(const std::function<void(const Parameter&)>& fn) const {
    for (const auto& [name, p] : entries_) fn(*p);
}

void ParameterStore::save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir + "/index.txt");
    if (!index) throw IoError("cannot write checkpoint index in " + dir);
    std::size_t ordinal = 0;
    for (const auto& [name, p] : entries_) {
        // Names may contain '/'; files are numbered, the index maps them back.
        const std::string file = "p" + std::to_string(ordinal++) + ".mcct";
        save_mcct(dir + "/" + file, p->value);
        index << name << "\t" << file << "\n";
    }
}

void ParameterStore::load(const std::string& dir) {
    std::ifstream index(dir + "/index.txt");
    if (!index) throw IoError("cannot read checkpoint index in " + dir);
    std::string line;
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw IoError("malformed checkpoint index line: " + line);
        const std::string name = line.substr(0, tab);
        const std::string file = line.substr(tab + 1);
        Tensor v = load_mcct(dir + "/" + file);
        if (contains(name)) {
            Parameter& p = get(name);
            if (!p.value.same_dims(v)) {
                throw ConfigError("checkpoint dims mismatch for " + name + ": expected " +
                                  p.value.dims_str() + ", file has " + v.dims_str());
            }
            p.value = std::move(v);
        } else {
            create(name, std::move(v));
        }
    }
}

Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                      std::vector<std::size_t> dims) {
    if (fan_in < 1 || fan_out < 1) throw DomainError("glorot fans must be >= 1");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(dims));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

}  // namespace mcc
