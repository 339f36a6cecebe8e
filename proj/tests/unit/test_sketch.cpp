#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <stdexcept>

#include "sketchtrack/sketch.hpp"

using namespace sketchtrack;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Matrix random_matrix(long rows, long cols, RngHandle& rng) {
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

// A consistent system b = A x* with uniform solution entries.
struct ConsistentSystem {
    Matrix a;
    Vector x_star;
    Vector b;
};

ConsistentSystem make_system(long m, long n, RngHandle& rng) {
    ConsistentSystem s;
    s.a = random_matrix(m, n, rng);
    s.x_star = Vector(n);
    for (long i = 0; i < n; ++i) s.x_star[i] = rng.uniform01();
    s.b = s.a * s.x_star;
    return s;
}

}  // namespace

TEST_CASE("fwht_unnormalized doubles back to a multiple of the identity") {
    RngHandle rng(811, 0);
    for (long n : {1L, 2L, 8L, 64L}) {
        Vector v(n);
        for (long i = 0; i < n; ++i) v[i] = rng.normal();
        Vector w = v;
        fwht_unnormalized(w);
        // Parseval for the unnormalized transform: ||H v||^2 = n ||v||^2.
        REQUIRE_THAT(w.squaredNorm(), WithinRel(static_cast<double>(n) * v.squaredNorm(), 1e-12));
        fwht_unnormalized(w);
        w /= static_cast<double>(n);
        REQUIRE_THAT((w - v).norm(), WithinAbs(0.0, 1e-12 * (1.0 + v.norm())));
    }
    Matrix m = random_matrix(16, 3, rng);
    Matrix h = m;
    fwht_unnormalized(h);
    fwht_unnormalized(h);
    REQUIRE_THAT((h / 16.0 - m).norm(), WithinAbs(0.0, 1e-12));

    Vector bad(3);
    bad.setZero();
    REQUIRE_THROWS_AS(fwht_unnormalized(bad), std::invalid_argument);
}

TEST_CASE("fwht_unnormalized of a coordinate vector is the all-ones row") {
    Vector e1 = Vector::Zero(4);
    e1[0] = 1.0;
    fwht_unnormalized(e1);
    for (long i = 0; i < 4; ++i) REQUIRE(e1[i] == 1.0);
}

TEST_CASE("fjlt_padded_dim rounds up to powers of two") {
    REQUIRE(fjlt_padded_dim(1) == 1);
    REQUIRE(fjlt_padded_dim(4) == 4);
    REQUIRE(fjlt_padded_dim(5) == 8);
    REQUIRE(fjlt_padded_dim(100) == 128);
    REQUIRE(fjlt_padded_dim(128) == 128);
}

TEST_CASE("draw is deterministic given the rng state") {
    for (auto method : {SketchMethodId::Gaussian, SketchMethodId::Achlioptas,
                        SketchMethodId::FJLT, SketchMethodId::RowSubset}) {
        RngHandle a(17, 3), b(17, 3);
        SketchOperator op1 = draw(method, 24, 6, a);
        SketchOperator op2 = draw(method, 24, 6, b);
        REQUIRE(op1.st.size() == op2.st.size());
        if (op1.st.size() > 0) REQUIRE(op1.st == op2.st);
        REQUIRE(op1.signs == op2.signs);
        REQUIRE(op1.idx == op2.idx);
    }
}

TEST_CASE("all sketch methods preserve consistency of the streamed system") {
    RngHandle rng(812, 0);
    ConsistentSystem sys = make_system(40, 12, rng);
    for (auto method : {SketchMethodId::Gaussian, SketchMethodId::Achlioptas,
                        SketchMethodId::FJLT, SketchMethodId::RowSubset}) {
        for (int rep = 0; rep < 10; ++rep) {
            SketchOperator op = draw(method, 40, 8, rng);
            Observation obs = apply(op, sys.a, sys.b);
            REQUIRE(obs.a_tilde.rows() == 8);
            REQUIRE(obs.a_tilde.cols() == 12);
            REQUIRE(obs.b_tilde.size() == 8);
            double resid = (obs.a_tilde * sys.x_star - obs.b_tilde).norm();
            REQUIRE_THAT(resid, WithinAbs(0.0, 1e-12 * (1.0 + obs.b_tilde.norm())));
        }
    }
}

TEST_CASE("apply agrees with apply_vector on matrix-vector products") {
    RngHandle rng(813, 0);
    Matrix a = random_matrix(20, 7, rng);
    Vector x = random_matrix(7, 1, rng);
    Vector b = a * x;
    for (auto method : {SketchMethodId::Gaussian, SketchMethodId::Achlioptas,
                        SketchMethodId::FJLT, SketchMethodId::RowSubset}) {
        SketchOperator op = draw(method, 20, 5, rng);
        Observation obs = apply(op, a, b);
        Vector direct = apply_vector(op, b);
        REQUIRE_THAT((obs.b_tilde - direct).norm(), WithinAbs(0.0, 1e-11 * (1.0 + direct.norm())));
        REQUIRE_THAT((obs.a_tilde * x - direct).norm(),
                     WithinAbs(0.0, 1e-10 * (1.0 + direct.norm())));
    }
}

TEST_CASE("gaussian sketch entries have variance 1/p") {
    RngHandle rng(814, 0);
    SketchOperator op = draw(SketchMethodId::Gaussian, 120, 120, rng);
    double mean = op.st.mean();
    double var = (op.st.array() - mean).square().sum() / (120.0 * 120.0 - 1.0);
    REQUIRE_THAT(mean, WithinAbs(0.0, 3.0 / 120.0));  // 14400 entries, sd/sqrt(n) ~ 1/1440
    REQUIRE_THAT(var, WithinRel(1.0 / 120.0, 0.05));
}

TEST_CASE("gaussian sketch preserves squared norms on average") {
    RngHandle rng(815, 0);
    const long m = 256, p = 25;
    Vector x(m);
    for (long i = 0; i < m; ++i) x[i] = rng.normal();
    x /= x.norm();
    const int n_draws = 50000;
    double acc = 0.0;
    for (int d = 0; d < n_draws; ++d) {
        SketchOperator op = draw(SketchMethodId::Gaussian, m, p, rng);
        acc += apply_vector(op, x).squaredNorm();
    }
    REQUIRE_THAT(acc / n_draws, WithinAbs(1.0, 0.02));
}

TEST_CASE("achlioptas entries take the three scaled values with the right mass") {
    RngHandle rng(816, 0);
    const long p = 1000, m = 1000;
    SketchOperator op = draw(SketchMethodId::Achlioptas, m, p, rng);
    const double s = std::sqrt(3.0 / static_cast<double>(p));
    long zeros = 0, plus = 0, minus = 0;
    for (long i = 0; i < p; ++i)
        for (long j = 0; j < m; ++j) {
            double v = op.st(i, j);
            if (v == 0.0)
                ++zeros;
            else if (v == s)
                ++plus;
            else if (v == -s)
                ++minus;
            else
                FAIL("unexpected entry value");
        }
    double total = static_cast<double>(p * m);
    REQUIRE_THAT(zeros / total, WithinAbs(2.0 / 3.0, 0.005));
    REQUIRE_THAT(plus / total, WithinAbs(1.0 / 6.0, 0.005));
    REQUIRE_THAT(minus / total, WithinAbs(1.0 / 6.0, 0.005));
}

TEST_CASE("row subset with p = m permutes the rows") {
    RngHandle rng(817, 0);
    Matrix a = random_matrix(9, 4, rng);
    Vector b = random_matrix(9, 1, rng);
    SketchOperator op = draw(SketchMethodId::RowSubset, 9, 9, rng);
    std::set<std::size_t> seen(op.idx.begin(), op.idx.end());
    REQUIRE(seen.size() == 9);
    Observation obs = apply(op, a, b);
    REQUIRE(obs.a_tilde.rows() == 9);
    for (long i = 0; i < 9; ++i) {
        auto r = static_cast<Eigen::Index>(op.idx[static_cast<std::size_t>(i)]);
        REQUIRE(obs.a_tilde.row(i) == a.row(r));
        REQUIRE(obs.b_tilde[i] == b[r]);
    }
}

TEST_CASE("draw validates dimensions") {
    RngHandle rng(818, 0);
    REQUIRE_THROWS_AS(draw(SketchMethodId::Gaussian, 0, 1, rng), std::invalid_argument);
    REQUIRE_THROWS_AS(draw(SketchMethodId::RowSubset, 4, 5, rng), std::invalid_argument);
    SketchOperator op = draw(SketchMethodId::Gaussian, 8, 2, rng);
    Vector wrong(7);
    wrong.setZero();
    REQUIRE_THROWS_AS(apply_vector(op, wrong), std::invalid_argument);
}
