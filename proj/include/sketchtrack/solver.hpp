#pragma once

#include <stdexcept>
#include <utility>

#include "linalg.hpp"
#include "sketch.hpp"

namespace sketchtrack {

// Inverse inner-product matrix B^{-1}; an empty matrix stands for the
// identity and skips all multiplications.
struct BInv {
    Matrix m;

    BInv() = default;
    explicit BInv(Matrix b_inv) : m(std::move(b_inv)) {
        if (m.size() != 0) {
            detail::require_symmetric(m, "BInv");
            require_finite(m, "BInv");
        }
    }

    bool identity() const { return m.size() == 0; }
};

// sqrt(x^T B x) where B is the inverse of the held B^{-1}.
inline double error_b_norm(const Vector& x, const BInv& b_inv) {
    if (b_inv.identity()) return x.norm();
    double q = x.dot(b_inv.m.ldlt().solve(x));
    return std::sqrt(q > 0.0 ? q : 0.0);
}

struct SolverState {
    Vector x;
    BInv b_inv;
    long k = 0;

    SolverState(Vector x0, BInv binv = BInv())
        : x(std::move(x0)), b_inv(std::move(binv)) {
        require_finite(x, "SolverState x0");
        if (!b_inv.identity() && b_inv.m.rows() != x.size())
            throw std::invalid_argument("SolverState: B^{-1} dimension mismatch");
    }
};

struct StepResult {
    Vector r_tilde;      // A~ x_k - b~, at the pre-update iterate
    double r_norm_sq;    // ||r~||^2, the tracker's input
};

// One sketch-and-project update:
//   r~ = A~ x - b~,  u = (A~ B^{-1} A~^T)^+ r~,  x <- x - B^{-1} A~^T u.
// The returned residual is evaluated at the incoming iterate, which is the
// quantity the tracking statistics consume.
inline StepResult step(SolverState& s, const Observation& obs) {
    if (obs.a_tilde.cols() != s.x.size() || obs.a_tilde.rows() != obs.b_tilde.size())
        throw std::invalid_argument("step: dimension mismatch");

    StepResult res;
    res.r_tilde = obs.a_tilde * s.x - obs.b_tilde;
    res.r_norm_sq = res.r_tilde.squaredNorm();

    Matrix w = s.b_inv.identity() ? obs.a_tilde.transpose()
                                  : Matrix(s.b_inv.m * obs.a_tilde.transpose());
    Matrix gram = obs.a_tilde * w;
    Vector u = pinv_apply(gram, res.r_tilde);
    s.x.noalias() -= w * u;
    s.k += 1;
    return res;
}

}  // namespace sketchtrack
