#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sketchtrack {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& a) { return a.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline void require_finite(const Matrix& a, const char* what) {
    if (!a.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}
inline void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

namespace detail {

// Numerical-rank cutoff: values below dim * eps * largest are treated as zero.
inline double rank_cutoff(Eigen::Index dim, double largest) {
    return static_cast<double>(dim) * std::numeric_limits<double>::epsilon() * largest;
}

inline void require_symmetric(const Matrix& g, const char* what) {
    if (g.rows() != g.cols())
        throw std::invalid_argument(std::string(what) + ": matrix not square");
    double scale = g.cwiseAbs().maxCoeff();
    if (scale == 0.0) return;
    double asym = (g - g.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * scale)
        throw std::invalid_argument(std::string(what) + ": matrix not symmetric");
}

}  // namespace detail

// u = G^+ r for symmetric positive-semidefinite G, via eigendecomposition.
// Eigenvalues below the numerical-rank cutoff are treated as zero, so the
// result is the minimum-norm solution restricted to range(G).
inline Vector pinv_apply(const Matrix& g, const Vector& r) {
    if (g.rows() != r.size())
        throw std::invalid_argument("pinv_apply: dimension mismatch");
    detail::require_symmetric(g, "pinv_apply");
    require_finite(r, "pinv_apply");

    Matrix gs = 0.5 * (g + g.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(gs);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("pinv_apply: eigendecomposition failed");

    const Vector& ev = es.eigenvalues();  // ascending
    double largest = ev.size() ? std::abs(ev[ev.size() - 1]) : 0.0;
    double cutoff = detail::rank_cutoff(g.rows(), largest);

    Vector proj = es.eigenvectors().transpose() * r;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        proj[i] = (ev[i] > cutoff) ? proj[i] / ev[i] : 0.0;
    return es.eigenvectors() * proj;
}

// ||A||_2^2 via power iteration on A^T A. Deterministic all-ones start,
// iteration cap 10,000, convergence when successive Rayleigh quotients agree
// to 1e-10 relative. If the iterate is annihilated (start vector in the null
// space), restarts from canonical basis vectors.
inline double squared_spectral_norm(const Matrix& a) {
    if (a.size() == 0)
        throw std::invalid_argument("squared_spectral_norm: empty matrix");
    require_finite(a, "squared_spectral_norm");

    const Eigen::Index n = a.cols();
    Matrix g = a.transpose() * a;
    double gscale = g.cwiseAbs().maxCoeff();
    if (gscale == 0.0) return 0.0;

    Vector v = Vector::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
    double rayleigh = 0.0;
    bool have_prev = false;
    Eigen::Index restart = 0;
    const int cap = 10000;
    for (int it = 0; it < cap; ++it) {
        Vector w = g * v;
        double wn = w.norm();
        if (wn <= 1e-300 * gscale) {
            if (restart >= n) return 0.0;  // matrix is numerically zero
            v = Vector::Zero(n);
            v[restart++] = 1.0;
            have_prev = false;
            continue;
        }
        double next = v.dot(w);
        w /= wn;
        if (have_prev && std::abs(next - rayleigh) < 1e-10 * std::abs(next)) {
            return next;
        }
        rayleigh = next;
        have_prev = true;
        v = w;
    }
    throw std::runtime_error(
        "squared_spectral_norm: no convergence within 10000 iterations; best estimate " +
        std::to_string(rayleigh));
}

// Symmetric positive-definite square root of M.
inline Matrix symmetric_sqrt(const Matrix& m) {
    detail::require_symmetric(m, "symmetric_sqrt");
    Matrix ms = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(ms);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("symmetric_sqrt: eigendecomposition failed");
    const Vector& ev = es.eigenvalues();
    double largest = ev.size() ? std::abs(ev[ev.size() - 1]) : 0.0;
    double cutoff = detail::rank_cutoff(m.rows(), largest);
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev[i] <= cutoff)
            throw std::invalid_argument("symmetric_sqrt: matrix not positive definite");
    return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// B^{-1/2} v where B^{-1/2} is the SPD square root of the supplied inverse
// inner-product matrix B^{-1}.
inline Vector symmetric_sqrt_inverse_apply(const Matrix& b_inv, const Vector& v) {
    if (b_inv.rows() != v.size())
        throw std::invalid_argument("symmetric_sqrt_inverse_apply: dimension mismatch");
    return symmetric_sqrt(b_inv) * v;
}

// Euclidean norm; the identity-inner-product case of b_norm.
inline double b_norm(const Vector& x) { return x.norm(); }

// sqrt(x^T B x) for SPD B. Tiny negative quadratic forms from rounding are
// clamped to zero.
inline double b_norm(const Vector& x, const Matrix& b) {
    if (b.rows() != x.size() || b.cols() != x.size())
        throw std::invalid_argument("b_norm: dimension mismatch");
    double q = x.dot(b * x);
    return std::sqrt(q > 0.0 ? q : 0.0);
}

}  // namespace sketchtrack
