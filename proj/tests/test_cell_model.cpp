#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mcc/cell_model.hpp"
#include "mcc/csv.hpp"

using namespace mcc;

TEST_SUITE("cell_model") {

TEST_CASE("proposed half-gaussian closed forms") {
    TransferFunctionSpec spec;  // proposed-hgf, sigma 0.35
    CHECK(amtf_eval(1.0, 1.0, spec) == 1.0);  // T = 1 saturates
    const double y10 = amtf_eval(1.0, 0.0, spec);
    CHECK(y10 == doctest::Approx(std::exp(-1.0 / (2.0 * 0.35 * 0.35))).epsilon(1e-12));
    CHECK(y10 == doctest::Approx(0.0169).epsilon(1e-2));
    const double y01 = amtf_eval(0.0, 1.0, spec);
    CHECK(y01 == doctest::Approx(0.3604).epsilon(1e-3));
    CHECK(y01 > y10);
}

TEST_CASE("xnor corners and symmetry") {
    TransferFunctionSpec spec;
    spec.variant = AmtfVariant::Xnor;
    CHECK(amtf_eval(0, 0, spec) == 1.0);
    CHECK(amtf_eval(1, 1, spec) == 1.0);
    CHECK(amtf_eval(1, 0, spec) == 0.0);
    CHECK(amtf_eval(0, 1, spec) == 0.0);
    for (double r : {0.1, 0.4, 0.8}) {
        for (double c : {0.2, 0.5, 0.9}) {
            CHECK(amtf_eval(r, c, spec) ==
                  doctest::Approx(amtf_eval(1 - r, 1 - c, spec)).epsilon(1e-12));
        }
    }
}

TEST_CASE("domain and spec validation") {
    TransferFunctionSpec spec;
    CHECK_THROWS_AS(amtf_eval(-0.1, 0.5, spec), DomainError);
    CHECK_THROWS_AS(amtf_eval(0.5, 1.2, spec), DomainError);
    spec.sigma = 0.0;
    CHECK_THROWS_AS(amtf_eval(0.5, 0.5, spec), DomainError);
    CHECK_THROWS_AS(amtf_variant_from_name("nope"), ConfigError);
}

TEST_CASE("surface grid corners match point evaluations and stay in range") {
    TransferFunctionSpec spec;
    SurfaceGrid g = surface_grid(spec, 11);
    CHECK(g.r_axis.front() == 0.0);
    CHECK(g.r_axis.back() == 1.0);
    for (std::size_t i = 0; i < 11; ++i) {
        for (std::size_t j = 0; j < 11; ++j) {
            const double y = g.y[i * 11 + j];
            CHECK(y >= 0.0);
            CHECK(y <= 1.0);
            CHECK(y == amtf_eval(g.r_axis[i], g.c_axis[j], spec));
        }
    }
    CHECK_THROWS_AS(surface_grid(spec, 1), DomainError);
}

TEST_CASE("constant variant gives a constant surface") {
    TransferFunctionSpec spec;
    spec.variant = AmtfVariant::RfDominant;
    spec.gain = 0.0;  // logistic with zero gain is flat
    SurfaceGrid g = surface_grid(spec, 9);
    for (std::size_t i = 0; i < g.y.size(); ++i) CHECK(g.y[i] == 0.5);
}

TEST_CASE("proposed surface is monotone in context along every row") {
    TransferFunctionSpec spec;
    SurfaceGrid g = surface_grid(spec, 41);
    for (std::size_t i = 0; i < 41; ++i) {
        for (std::size_t j = 0; j + 1 < 41; ++j) {
            CHECK(g.y[i * 41 + j + 1] >= g.y[i * 41 + j] - 1e-12);
        }
    }
}

TEST_CASE("ordering checks per variant") {
    TransferFunctionSpec spec;
    OrderingReport rep = ordering_check(spec);
    CHECK(rep.pass);
    CHECK(rep.y01 > rep.y10);
    CHECK(rep.y11 == rep.grid_max);

    spec.variant = AmtfVariant::ReluThreshold;
    CHECK(ordering_check(spec).pass);

    spec.variant = AmtfVariant::RfDominant;
    rep = ordering_check(spec);
    CHECK(rep.pass);
    CHECK(std::fabs(rep.y10 - rep.y11) == 0.0);

    spec.variant = AmtfVariant::WeakAmplify;
    rep = ordering_check(spec);
    CHECK(rep.pass);
    CHECK(rep.grid_max < 0.5);

    spec.variant = AmtfVariant::Xnor;
    CHECK(ordering_check(spec).pass);
    spec.variant = AmtfVariant::KayModulatory;
    CHECK(ordering_check(spec).pass);
}

TEST_CASE("surface csv export format") {
    TransferFunctionSpec spec;
    SurfaceGrid g = surface_grid(spec, 3);
    const std::string dir = std::string(MCC_TEST_TMP);
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/surface.csv";
    write_surface_csv(g, path);
    std::ifstream f(path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "r,c,Y");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) ++rows;
        const auto cells = split_csv(line);
        CHECK(cells.size() == 3);
    }
    CHECK(rows == 9);
}

}  // TEST_SUITE
