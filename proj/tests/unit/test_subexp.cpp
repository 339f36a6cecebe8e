#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sketchtrack/rng.hpp"
#include "sketchtrack/subexp.hpp"

using namespace sketchtrack;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("tail_bound reference values") {
    // Gaussian-only regime: exponent delta^2 / (2 sigma^2).
    REQUIRE_THAT(tail_bound(SubExpParams(1.0, 0.0), 2.0), WithinRel(std::exp(-2.0), 1e-15));
    // Linear-only regime: exponent delta / (2 omega).
    REQUIRE_THAT(tail_bound(SubExpParams(0.0, 1.0), 4.0), WithinRel(std::exp(-2.0), 1e-15));
    // Mixed: the smaller exponent wins.
    REQUIRE_THAT(tail_bound(SubExpParams(1.0, 1.0), 1.0), WithinRel(std::exp(-0.5), 1e-15));
    REQUIRE_THAT(tail_bound(SubExpParams(1.0, 1.0), 4.0), WithinRel(std::exp(-2.0), 1e-15));
    // Degenerate cases.
    REQUIRE(tail_bound(SubExpParams(1.0, 1.0), 0.0) == 1.0);
    REQUIRE(tail_bound(SubExpParams(0.0, 0.0), 0.5) == 0.0);
    REQUIRE_THROWS_AS(tail_bound(SubExpParams(1.0, 0.0), -1.0), std::invalid_argument);
}

TEST_CASE("tail_bound is non-increasing in delta") {
    SubExpParams p(0.7, 0.3);
    double prev = 1.0;
    for (double d = 0.0; d <= 10.0; d += 0.1) {
        double b = tail_bound(p, d);
        REQUIRE(b <= prev + 1e-15);
        prev = b;
    }
}

TEST_CASE("scale multiplies both parameters by c2") {
    SubExpParams p(0.5, 0.25);
    SubExpParams q = scale(p, -2.0, 3.0);
    REQUIRE_THAT(q.sigma, WithinRel(1.5, 1e-15));
    REQUIRE_THAT(q.omega, WithinRel(0.75, 1e-15));
    REQUIRE_THROWS_AS(scale(p, 0.0, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(scale(p, 2.0, 1.0), std::invalid_argument);
    // scaling dilates deviations: bound of q at c2*delta equals bound of p at delta
    for (double d : {0.1, 0.9, 2.5}) {
        REQUIRE_THAT(tail_bound(q, 3.0 * d), WithinRel(tail_bound(p, d), 1e-12));
    }
}

TEST_CASE("from_bounded halves the support width") {
    SubExpParams a = from_bounded(-1.0, 1.0);
    REQUIRE(a.sigma == 1.0);
    REQUIRE(a.omega == 0.0);
    SubExpParams b = from_bounded(0.0, 0.0);
    REQUIRE(b.sigma == 0.0);
    // relative row-subset error support [-1, (m-p)/p] at m=512, p=25
    SubExpParams c = from_bounded(-1.0, (512.0 - 25.0) / 25.0);
    REQUIRE_THAT(c.sigma, WithinRel(10.24, 1e-15));
    REQUIRE_THROWS_AS(from_bounded(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("jl_constants table") {
    auto g = jl_constants(SketchMethodId::Gaussian);
    REQUIRE(g.first == 0.23467);
    REQUIRE(g.second == 0.1127);
    auto a = jl_constants(SketchMethodId::Achlioptas);
    REQUIRE(a.first == 0.23467);
    REQUIRE(a.second == 0.1127);
    auto f = jl_constants(SketchMethodId::FJLT);
    REQUIRE(f.first == 0.03125);
    REQUIRE(f.second == 0.0625);
    REQUIRE_THROWS_AS(jl_constants(SketchMethodId::RowSubset), std::invalid_argument);
}

TEST_CASE("se_from_jl computes sigma = sqrt(1/(C p))") {
    SubExpParams g25 = se_from_jl(SketchMethodId::Gaussian, 25);
    REQUIRE(g25.sigma == std::sqrt(1.0 / (0.23467 * 25.0)));
    REQUIRE_THAT(g25.sigma, WithinRel(0.41285847969927736, 1e-13));
    REQUIRE(g25.omega == 0.1127);

    SubExpParams f32 = se_from_jl(SketchMethodId::FJLT, 32);
    REQUIRE_THAT(f32.sigma, WithinRel(1.0, 1e-13));  // 1/(0.03125*32) = 1
    REQUIRE(f32.omega == 0.0625);

    SubExpParams g1 = se_from_jl(SketchMethodId::Gaussian, 1);
    REQUIRE_THAT(g1.sigma, WithinRel(2.0642923984963866, 1e-13));

    REQUIRE_THROWS_AS(se_from_jl(SketchMethodId::Gaussian, 0), std::invalid_argument);
}

TEST_CASE("row_subset_params") {
    SubExpParams p = row_subset_params(100, 10);
    REQUIRE(p.sigma == 5.0);
    REQUIRE(p.omega == 0.0);
    SubExpParams full = row_subset_params(16, 16);
    REQUIRE(full.sigma == 0.5);
    REQUIRE_THROWS_AS(row_subset_params(10, 0), std::invalid_argument);
    REQUIRE_THROWS_AS(row_subset_params(10, 11), std::invalid_argument);
}

TEST_CASE("collocation_params") {
    auto [d1, p1] = collocation_params(36, 18.0);
    REQUIRE(d1 == 18.0);  // 9*36/18
    REQUIRE(p1.sigma == 9.0);
    REQUIRE(p1.omega == 0.0);

    auto [d2, p2] = collocation_params(1, 0.5);
    REQUIRE(d2 == 18.0);

    auto [d3, p3] = collocation_params(125, 0.0009);
    REQUIRE_THAT(d3, WithinRel(1.25e6, 1e-12));

    REQUIRE_THROWS_AS(collocation_params(0, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(collocation_params(10, 0.0), std::invalid_argument);
}

TEST_CASE("tail_check_slack shrinks with the sample count") {
    REQUIRE_THAT(tail_check_slack(0.25, 100),
                 WithinRel(3.0 * std::sqrt(0.25 * 0.75 / 100.0) + 0.01, 1e-14));
    REQUIRE(tail_check_slack(0.1, 10000) < tail_check_slack(0.1, 100));
    // degenerate bounds keep only the 1/n term
    REQUIRE_THAT(tail_check_slack(0.0, 50), WithinRel(0.02, 1e-14));
    REQUIRE_THAT(tail_check_slack(2.0, 50), WithinRel(0.02, 1e-14));
}

TEST_CASE("empirical_tail_check flags only genuine violations") {
    // Constant-zero samples never violate any positive-delta bound.
    std::vector<double> zeros(1000, 0.0);
    auto rep = empirical_tail_check(zeros, SubExpParams(1.0, 0.0), {0.5, 1.0, 2.0});
    REQUIRE_FALSE(rep.any_violated);
    REQUIRE(rep.rows.size() == 3);
    for (const auto& row : rep.rows) {
        REQUIRE(row.freq_upper == 0.0);
        REQUIRE(row.freq_lower == 0.0);
    }

    // Samples far outside a tiny tail bound must violate it.
    std::vector<double> big(1000, 5.0);
    auto bad = empirical_tail_check(big, SubExpParams(0.1, 0.0), {1.0}, 0.0);
    REQUIRE(bad.any_violated);
    REQUIRE(bad.rows[0].freq_upper == 1.0);
    REQUIRE(bad.rows[0].violated);

    // Lower tail is checked symmetrically.
    std::vector<double> neg(1000, -5.0);
    auto badneg = empirical_tail_check(neg, SubExpParams(0.1, 0.0), {1.0}, 0.0);
    REQUIRE(badneg.any_violated);
    REQUIRE(badneg.rows[0].freq_lower == 1.0);

    REQUIRE_THROWS_AS(empirical_tail_check({}, SubExpParams(1.0, 0.0), {1.0}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(empirical_tail_check(zeros, SubExpParams(1.0, 0.0), {0.0}),
                      std::invalid_argument);
}

TEST_CASE("empirical_tail_check accepts genuine Gaussian samples") {
    RngHandle rng(555, 0);
    std::vector<double> samples(20000);
    for (auto& s : samples) s = rng.normal();
    auto rep = empirical_tail_check(samples, SubExpParams(1.0, 0.0), {0.5, 1.0, 2.0, 3.0});
    REQUIRE_FALSE(rep.any_violated);
}

TEST_CASE("method names round-trip through to_string") {
    REQUIRE(std::string(to_string(SketchMethodId::Gaussian)) == "gaussian");
    REQUIRE(std::string(to_string(SketchMethodId::Achlioptas)) == "achlioptas");
    REQUIRE(std::string(to_string(SketchMethodId::FJLT)) == "fjlt");
    REQUIRE(std::string(to_string(SketchMethodId::RowSubset)) == "rowsubset");
}
