#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "linalg.hpp"
#include "rng.hpp"
#include "subexp.hpp"

namespace sketchtrack {

// One streamed pair: a sketched/subsampled system (A~, b~) with matching row
// counts.
struct Observation {
    Matrix a_tilde;
    Vector b_tilde;
};

// In-place unnormalized Walsh-Hadamard transform of each column; rows() must
// be a power of two. Applying it twice and dividing by rows() is the identity.
inline void fwht_unnormalized(Matrix& x) {
    const Eigen::Index n = x.rows();
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fwht_unnormalized: row count must be a power of two");
    Eigen::RowVectorXd a, b;
    for (Eigen::Index len = 1; len < n; len <<= 1) {
        for (Eigen::Index i = 0; i < n; i += 2 * len) {
            for (Eigen::Index j = i; j < i + len; ++j) {
                a = x.row(j);
                b = x.row(j + len);
                x.row(j) = a + b;
                x.row(j + len) = a - b;
            }
        }
    }
}

inline void fwht_unnormalized(Vector& x) {
    const Eigen::Index n = x.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw std::invalid_argument("fwht_unnormalized: length must be a power of two");
    for (Eigen::Index len = 1; len < n; len <<= 1) {
        for (Eigen::Index i = 0; i < n; i += 2 * len) {
            for (Eigen::Index j = i; j < i + len; ++j) {
                double a = x[j];
                double b = x[j + len];
                x[j] = a + b;
                x[j + len] = a - b;
            }
        }
    }
}

// A drawn compression operator S (applied as A~ = S^T A). Realization layout
// depends on the method:
//   Gaussian / Achlioptas: dense S^T stored directly (p x m).
//   FJLT: sign diagonal over the padded dimension plus p coordinates sampled
//         uniformly with replacement; applied via the fast transform.
//   RowSubset: p distinct row indices sampled uniformly without replacement.
struct SketchOperator {
    SketchMethodId method = SketchMethodId::Gaussian;
    long m = 0;  // source dimension (rows of the full system)
    long p = 0;  // target dimension (rows per observation)

    Matrix st;                       // Gaussian/Achlioptas
    std::vector<std::int8_t> signs;  // FJLT, size m_pad
    std::vector<std::size_t> idx;    // FJLT coordinates or RowSubset rows
    long m_pad = 0;                  // FJLT padded dimension
};

inline long fjlt_padded_dim(long m) {
    return static_cast<long>(std::bit_ceil(static_cast<std::uint64_t>(m)));
}

inline SketchOperator draw(SketchMethodId method, long m, long p, RngHandle& rng) {
    if (m < 1 || p < 1) throw std::invalid_argument("draw: dimensions must be positive");
    SketchOperator op;
    op.method = method;
    op.m = m;
    op.p = p;
    switch (method) {
        case SketchMethodId::Gaussian: {
            // i.i.d. Normal(0, 1/p), so E||S^T x||^2 = ||x||^2.
            const double s = 1.0 / std::sqrt(static_cast<double>(p));
            op.st = Matrix(p, m);
            for (long i = 0; i < p; ++i)
                for (long j = 0; j < m; ++j) op.st(i, j) = s * rng.normal();
            break;
        }
        case SketchMethodId::Achlioptas: {
            // sqrt(3/p) * {+1, 0, -1} with probabilities (1/6, 2/3, 1/6).
            const double s = std::sqrt(3.0 / static_cast<double>(p));
            op.st = Matrix(p, m);
            for (long i = 0; i < p; ++i)
                for (long j = 0; j < m; ++j) {
                    double u = rng.uniform01();
                    op.st(i, j) = u < 1.0 / 6.0 ? s : (u < 2.0 / 6.0 ? -s : 0.0);
                }
            break;
        }
        case SketchMethodId::FJLT: {
            op.m_pad = fjlt_padded_dim(m);
            op.signs.resize(static_cast<std::size_t>(op.m_pad));
            for (auto& sgn : op.signs) sgn = rng.uniform01() < 0.5 ? 1 : -1;
            op.idx.resize(static_cast<std::size_t>(p));
            for (auto& i : op.idx)
                i = static_cast<std::size_t>(rng.uniform_index(static_cast<std::uint64_t>(op.m_pad)));
            break;
        }
        case SketchMethodId::RowSubset: {
            if (p > m) throw std::invalid_argument("draw: row subset needs p <= m");
            op.idx = rng.sample_without_replacement(static_cast<std::size_t>(m),
                                                    static_cast<std::size_t>(p));
            break;
        }
    }
    return op;
}

namespace detail {

// (1/sqrt(p)) * P * H_unnormalized * D * pad(x), equal to
// sqrt(m_pad/p) * P * H_orthonormal * D * pad(x).
inline Matrix fjlt_apply(const SketchOperator& op, const Matrix& a) {
    Matrix padded = Matrix::Zero(op.m_pad, a.cols());
    padded.topRows(op.m) = a;
    for (long i = 0; i < op.m_pad; ++i)
        if (op.signs[static_cast<std::size_t>(i)] < 0) padded.row(i) = -padded.row(i);
    fwht_unnormalized(padded);
    const double s = 1.0 / std::sqrt(static_cast<double>(op.p));
    Matrix out(op.p, a.cols());
    for (long i = 0; i < op.p; ++i)
        out.row(i) = s * padded.row(static_cast<Eigen::Index>(op.idx[static_cast<std::size_t>(i)]));
    return out;
}

}  // namespace detail

// S^T x for a vector x of length m.
inline Vector apply_vector(const SketchOperator& op, const Vector& x) {
    if (x.size() != op.m) throw std::invalid_argument("apply_vector: dimension mismatch");
    switch (op.method) {
        case SketchMethodId::Gaussian:
        case SketchMethodId::Achlioptas:
            return op.st * x;
        case SketchMethodId::FJLT: {
            Matrix m = detail::fjlt_apply(op, x);
            return m.col(0);
        }
        case SketchMethodId::RowSubset: {
            Vector out(op.p);
            for (long i = 0; i < op.p; ++i) out[i] = x[static_cast<Eigen::Index>(op.idx[static_cast<std::size_t>(i)])];
            return out;
        }
    }
    throw std::invalid_argument("apply_vector: unknown method");
}

// (A~, b~) = (S^T A, S^T b); row subsets return the selected rows verbatim.
inline Observation apply(const SketchOperator& op, const Matrix& a, const Vector& b) {
    if (a.rows() != op.m || b.size() != op.m)
        throw std::invalid_argument("apply: dimension mismatch");
    Observation obs;
    switch (op.method) {
        case SketchMethodId::Gaussian:
        case SketchMethodId::Achlioptas:
            obs.a_tilde = op.st * a;
            obs.b_tilde = op.st * b;
            return obs;
        case SketchMethodId::FJLT: {
            Matrix joined(op.m, a.cols() + 1);
            joined.leftCols(a.cols()) = a;
            joined.col(a.cols()) = b;
            Matrix out = detail::fjlt_apply(op, joined);
            obs.a_tilde = out.leftCols(a.cols());
            obs.b_tilde = out.col(a.cols());
            return obs;
        }
        case SketchMethodId::RowSubset: {
            obs.a_tilde = Matrix(op.p, a.cols());
            obs.b_tilde = Vector(op.p);
            for (long i = 0; i < op.p; ++i) {
                auto r = static_cast<Eigen::Index>(op.idx[static_cast<std::size_t>(i)]);
                obs.a_tilde.row(i) = a.row(r);
                obs.b_tilde[i] = b[r];
            }
            return obs;
        }
    }
    throw std::invalid_argument("apply: unknown method");
}

}  // namespace sketchtrack
