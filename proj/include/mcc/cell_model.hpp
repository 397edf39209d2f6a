#pragma once

#include <string>
#include <vector>

#include "mcc/tensor.hpp"

namespace mcc {

// Catalogue of single-cell modulatory transfer functions mapping a driving
// input r and a context c (both in [0,1]) to a firing probability.
enum class AmtfVariant {
    RfDominant,     // Y = logistic_k(r), context ignored
    KayModulatory,  // Y = logistic_k( r (1 + exp(2 r c)) / 2 )
    Xnor,           // Y = r c + (1-r)(1-c)
    WeakAmplify,    // Y = min(0.49, logistic_k(r (1+c)))
    ProposedHgf,    // Y = p(T), T = c (1+r)/2, p = half-Gaussian saturating at 1
    ReluThreshold,  // Y = clip(T, 0, threshold)
};

struct TransferFunctionSpec {
    AmtfVariant variant = AmtfVariant::ProposedHgf;
    double sigma = 0.35;     // half-Gaussian width
    double gain = 8.0;       // logistic gain k
    double threshold = 1.0;  // clip point for ReluThreshold
};

AmtfVariant amtf_variant_from_name(const std::string& name);
std::string amtf_variant_name(AmtfVariant v);

// Firing probability at (r, c); both inputs must lie in [0,1].
double amtf_eval(double r, double c, const TransferFunctionSpec& spec);

// Uniform n x n sampling of the response surface, axes include 0 and 1.
struct SurfaceGrid {
    std::vector<double> r_axis;
    std::vector<double> c_axis;
    Tensor y;  // [n x n], y[i*n+j] = Y(r_axis[i], c_axis[j])
};

SurfaceGrid surface_grid(const TransferFunctionSpec& spec, std::size_t n);

// CSV export: header "r,c,Y", one row per grid point, 6 significant digits.
void write_surface_csv(const SurfaceGrid& grid, const std::string& path);

// Variant-appropriate qualitative assertions over the surface. For the
// proposed family: context dominance Y(0,1) > Y(1,0), global max at (1,1),
// monotone in c. RfDominant asserts context independence, WeakAmplify the
// sub-0.5 bound, Xnor its corners and symmetry, KayModulatory r-dominance.
struct OrderingReport {
    bool pass = true;
    std::vector<std::string> violations;
    double y01 = 0.0;  // Y(0,1)
    double y10 = 0.0;  // Y(1,0)
    double y11 = 0.0;  // Y(1,1)
    double grid_max = 0.0;
};

OrderingReport ordering_check(const TransferFunctionSpec& spec, std::size_t grid_n = 101);

}  // namespace mcc
