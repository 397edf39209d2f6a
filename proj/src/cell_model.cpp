#include "mcc/cell_model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace mcc {

AmtfVariant amtf_variant_from_name(const std::string& name) {
    if (name == "rf-dominant") return AmtfVariant::RfDominant;
    if (name == "kay-modulatory") return AmtfVariant::KayModulatory;
    if (name == "xnor") return AmtfVariant::Xnor;
    if (name == "weak-amplify") return AmtfVariant::WeakAmplify;
    if (name == "proposed-hgf") return AmtfVariant::ProposedHgf;
    if (name == "relu-threshold") return AmtfVariant::ReluThreshold;
    throw ConfigError("unknown transfer function variant: " + name);
}

std::string amtf_variant_name(AmtfVariant v) {
    switch (v) {
        case AmtfVariant::RfDominant: return "rf-dominant";
        case AmtfVariant::KayModulatory: return "kay-modulatory";
        case AmtfVariant::Xnor: return "xnor";
        case AmtfVariant::WeakAmplify: return "weak-amplify";
        case AmtfVariant::ProposedHgf: return "proposed-hgf";
        case AmtfVariant::ReluThreshold: return "relu-threshold";
    }
    throw ConfigError("unknown transfer function variant");
}

namespace {

void validate(const TransferFunctionSpec& spec) {
    if (!(spec.sigma > 0.0)) throw DomainError("amtf: sigma must be > 0");
    if (!std::isfinite(spec.sigma) || !std::isfinite(spec.gain) ||
        !std::isfinite(spec.threshold)) {
        throw DomainError("amtf: parameters must be finite");
    }
}

double logistic(double gain, double x) { return 1.0 / (1.0 + std::exp(-gain * (x - 0.5))); }

// Context pushes T along the half-Gaussian toward its saturation point at 1.
double modulatory_drive(double r, double c) { return c * (1.0 + r) / 2.0; }

double half_gaussian(double t, double sigma) {
    if (t >= 1.0) return 1.0;
    const double d = t - 1.0;
    return std::exp(-(d * d) / (2.0 * sigma * sigma));
}

}  // namespace

double amtf_eval(double r, double c, const TransferFunctionSpec& spec) {
    validate(spec);
    if (r < 0.0 || r > 1.0 || c < 0.0 || c > 1.0) {
        throw DomainError("amtf_eval: r and c must lie in [0,1]");
    }
    switch (spec.variant) {
        case AmtfVariant::RfDominant:
            return logistic(spec.gain, r);
        case AmtfVariant::KayModulatory:
            return logistic(spec.gain, r * (1.0 + std::exp(2.0 * r * c)) / 2.0);
        case AmtfVariant::Xnor:
            return r * c + (1.0 - r) * (1.0 - c);
        case AmtfVariant::WeakAmplify:
            return std::min(0.49, logistic(spec.gain, r * (1.0 + c)));
        case AmtfVariant::ProposedHgf:
            return half_gaussian(modulatory_drive(r, c), spec.sigma);
        case AmtfVariant::ReluThreshold: {
            const double t = modulatory_drive(r, c);
            return std::min(spec.threshold, std::max(0.0, t));
        }
    }
    throw ConfigError("unknown transfer function variant");
}

SurfaceGrid surface_grid(const TransferFunctionSpec& spec, std::size_t n) {
    if (n < 2) throw DomainError("surface_grid: n must be >= 2");
    SurfaceGrid g;
    g.r_axis.resize(n);
    g.c_axis.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        g.r_axis[i] = static_cast<double>(i) / static_cast<double>(n - 1);
        g.c_axis[i] = static_cast<double>(i) / static_cast<double>(n - 1);
    }
    g.y = Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            g.y[i * n + j] = amtf_eval(g.r_axis[i], g.c_axis[j], spec);
        }
    }
    return g;
}

void write_surface_csv(const SurfaceGrid& grid, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write surface csv: " + path);
    f << "r,c,Y\n";
    char buf[128];
    const std::size_t n = grid.r_axis.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6g", grid.r_axis[i], grid.c_axis[j],
                          grid.y[i * n + j]);
            f << buf << "\n";
        }
    }
}

OrderingReport ordering_check(const TransferFunctionSpec& spec, std::size_t grid_n) {
    validate(spec);
    OrderingReport rep;
    const SurfaceGrid g = surface_grid(spec, grid_n);
    const std::size_t n = grid_n;
    rep.y01 = amtf_eval(0.0, 1.0, spec);
    rep.y10 = amtf_eval(1.0, 0.0, spec);
    rep.y11 = amtf_eval(1.0, 1.0, spec);
    rep.grid_max = g.y[0];
    for (std::size_t i = 0; i < g.y.size(); ++i) rep.grid_max = std::max(rep.grid_max, g.y[i]);

    auto fail = [&rep](const std::string& msg) {
        rep.pass = false;
        rep.violations.push_back(msg);
    };

    const bool proposed = spec.variant == AmtfVariant::ProposedHgf ||
                          spec.variant == AmtfVariant::ReluThreshold;
    if (proposed) {
        if (!(rep.y01 > rep.y10)) fail("context dominance Y(0,1) > Y(1,0) violated");
        if (rep.y11 < rep.grid_max - 1e-12) fail("Y(1,1) is not the grid maximum");
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j + 1 < n; ++j) {
                if (g.y[i * n + j + 1] < g.y[i * n + j] - 1e-12) {
                    fail("dY/dc < 0 at r=" + std::to_string(g.r_axis[i]) +
                         ", c=" + std::to_string(g.c_axis[j]));
                    j = n;
                    i = n - 1;
                }
            }
        }
    } else if (spec.variant == AmtfVariant::RfDominant) {
        if (std::fabs(rep.y10 - rep.y11) > 0.0) fail("context independence violated");
    } else if (spec.variant == AmtfVariant::WeakAmplify) {
        if (!(rep.grid_max < 0.5)) fail("weak amplification crosses the 0.5 threshold");
    } else if (spec.variant == AmtfVariant::Xnor) {
        if (std::fabs(amtf_eval(0, 0, spec) - 1.0) > 0.0) fail("xnor corner (0,0) != 1");
        if (std::fabs(amtf_eval(1, 1, spec) - 1.0) > 0.0) fail("xnor corner (1,1) != 1");
        if (std::fabs(amtf_eval(1, 0, spec)) > 0.0) fail("xnor corner (1,0) != 0");
        if (std::fabs(amtf_eval(0, 1, spec)) > 0.0) fail("xnor corner (0,1) != 0");
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double a = g.y[i * n + j];
                const double b = g.y[(n - 1 - i) * n + (n - 1 - j)];
                if (std::fabs(a - b) > 1e-12) {
                    fail("xnor symmetry under (r,c) -> (1-r,1-c) violated");
                    j = n;
                    i = n - 1;
                }
            }
        }
    } else if (spec.variant == AmtfVariant::KayModulatory) {
        for (std::size_t j = 0; j < n; ++j) {
            if (g.y[(n - 1) * n + j] < g.y[j] - 1e-12) {
                fail("r-dominance violated for kay-modulatory");
                break;
            }
        }
    }
    // Range check applies to every variant.
    for (std::size_t i = 0; i < g.y.size(); ++i) {
        if (g.y[i] < 0.0 || g.y[i] > 1.0) {
            fail("surface leaves [0,1]");
            break;
        }
    }
    return rep;
}

}  // namespace mcc
