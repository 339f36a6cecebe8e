#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "linalg.hpp"
#include "rng.hpp"
#include "sketch.hpp"
#include "subexp.hpp"

namespace sketchtrack {

// ---------------------------------------------------------------------------
// Unit-cube sampling for the collocation rows
// ---------------------------------------------------------------------------

enum class CubeRegion { Interior, Face, Edge };

struct CubePoint {
    std::array<double, 3> t{};
    CubeRegion region = CubeRegion::Interior;
};

namespace detail {
// Uniform on the open interval (0, 1).
inline double uniform_open01(RngHandle& rng) {
    for (;;) {
        double u = rng.uniform01();
        if (u != 0.0) return u;
    }
}
}  // namespace detail

// Region probabilities (2/3 interior, 1/6 faces, 1/6 edges); within a region,
// uniform over the 6 faces / 12 edges and then uniform in the free
// coordinates.
inline CubePoint sample_cube_point(RngHandle& rng) {
    CubePoint pt;
    double u = rng.uniform01();
    if (u < 2.0 / 3.0) {
        pt.region = CubeRegion::Interior;
        for (auto& c : pt.t) c = detail::uniform_open01(rng);
    } else if (u < 5.0 / 6.0) {
        pt.region = CubeRegion::Face;
        auto face = rng.uniform_index(6);  // axis * 2 + side
        auto axis = static_cast<std::size_t>(face / 2);
        pt.t[axis] = static_cast<double>(face % 2);
        pt.t[(axis + 1) % 3] = detail::uniform_open01(rng);
        pt.t[(axis + 2) % 3] = detail::uniform_open01(rng);
    } else {
        pt.region = CubeRegion::Edge;
        auto edge = rng.uniform_index(12);  // free axis * 4 + corner of the other two
        auto axis = static_cast<std::size_t>(edge / 4);
        pt.t[axis] = detail::uniform_open01(rng);
        pt.t[(axis + 1) % 3] = static_cast<double>((edge / 2) % 2);
        pt.t[(axis + 2) % 3] = static_cast<double>(edge % 2);
    }
    return pt;
}

// ---------------------------------------------------------------------------
// Quadric radial basis function and its Laplacian
// ---------------------------------------------------------------------------

inline double quadric_rbf(const std::array<double, 3>& t, const std::array<double, 3>& chi) {
    double d0 = t[0] - chi[0], d1 = t[1] - chi[1], d2 = t[2] - chi[2];
    return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2 + 1.0);
}

// Laplacian in t of sqrt(||t - chi||^2 + 1): with r = ||t - chi||,
// (2 r^2 + 3) / (r^2 + 1)^{3/2}.
inline double quadric_rbf_laplacian(const std::array<double, 3>& t,
                                    const std::array<double, 3>& chi) {
    double d0 = t[0] - chi[0], d1 = t[1] - chi[1], d2 = t[2] - chi[2];
    double r2 = d0 * d0 + d1 * d1 + d2 * d2;
    return (2.0 * r2 + 3.0) / std::pow(r2 + 1.0, 1.5);
}

namespace detail {
inline double collocation_rhs(const std::array<double, 3>& t, bool interior) {
    using std::numbers::pi;
    double s = std::sin(pi * t[0]) * std::sin(pi * t[1] / 2.0) * std::sin(3.0 * pi * t[2] / 2.0);
    return interior ? -7.0 * pi * pi / 2.0 * s : s;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Observation sources
// ---------------------------------------------------------------------------

// A source of i.i.d. observations (A~_k, b~_k). The description is immutable;
// randomness is injected per draw, so one source may serve several workers as
// long as each uses its own RngHandle.
class StreamSource {
public:
    enum class Kind { SketchedSystem, RowSubset, Collocation };

    // Repeated JL sketches of a fixed consistent system.
    static StreamSource sketched_system(Matrix a, Vector b, SketchMethodId method, long p,
                                        std::optional<Vector> x_star = std::nullopt) {
        if (method == SketchMethodId::RowSubset)
            throw std::invalid_argument("sketched_system: use row_subset for row sampling");
        StreamSource s(Kind::SketchedSystem, std::move(a), std::move(b), p, std::move(x_star));
        s.method_ = method;
        s.se_ = se_from_jl(method, p);
        return s;
    }

    // Uniform random row subsets of a fixed consistent system.
    static StreamSource row_subset(Matrix a, Vector b, long p,
                                   std::optional<Vector> x_star = std::nullopt) {
        if (p > a.rows()) throw std::invalid_argument("row_subset: p exceeds row count");
        StreamSource s(Kind::RowSubset, std::move(a), std::move(b), p, std::move(x_star));
        s.method_ = SketchMethodId::RowSubset;
        s.se_ = row_subset_params(s.a_.rows(), p);
        return s;
    }

    // Random-coordinate collocation rows over a fixed control-point grid with
    // gap eps (1/eps must be an integer); tail parameters are filled in by
    // the caller once a Gram spectrum estimate is available.
    static StreamSource collocation(double grid_gap, long p) {
        if (p < 1) throw std::invalid_argument("collocation: p must be >= 1");
        double inv = 1.0 / grid_gap;
        auto divisions = static_cast<long>(std::llround(inv));
        if (!(grid_gap > 0.0) || divisions < 1 || std::abs(inv - static_cast<double>(divisions)) > 1e-9)
            throw std::invalid_argument("collocation: 1/eps must be a positive integer");
        StreamSource s(Kind::Collocation, Matrix(), Vector(), p, std::nullopt);
        long g = divisions + 1;
        s.control_points_.reserve(static_cast<std::size_t>(g * g * g));
        for (long i = 0; i < g; ++i)
            for (long j = 0; j < g; ++j)
                for (long k = 0; k < g; ++k)
                    s.control_points_.push_back({static_cast<double>(i) * grid_gap,
                                                 static_cast<double>(j) * grid_gap,
                                                 static_cast<double>(k) * grid_gap});
        s.n_ = g * g * g;
        return s;
    }

    Observation next(RngHandle& rng) const {
        Observation obs;
        switch (kind_) {
            case Kind::SketchedSystem: {
                SketchOperator op = draw(method_, a_.rows(), p_, rng);
                return apply(op, a_, b_);
            }
            case Kind::RowSubset: {
                SketchOperator op = draw(SketchMethodId::RowSubset, a_.rows(), p_, rng);
                return apply(op, a_, b_);
            }
            case Kind::Collocation: {
                obs.a_tilde = Matrix(p_, n_);
                obs.b_tilde = Vector(p_);
                for (long i = 0; i < p_; ++i) {
                    CubePoint pt = sample_cube_point(rng);
                    bool interior = pt.region == CubeRegion::Interior;
                    for (long j = 0; j < n_; ++j) {
                        const auto& chi = control_points_[static_cast<std::size_t>(j)];
                        obs.a_tilde(i, j) = interior ? quadric_rbf_laplacian(pt.t, chi)
                                                     : quadric_rbf(pt.t, chi);
                    }
                    obs.b_tilde[i] = detail::collocation_rhs(pt.t, interior);
                }
                return obs;
            }
        }
        throw std::logic_error("StreamSource::next: unknown kind");
    }

    Kind kind() const { return kind_; }
    SketchMethodId method() const { return method_; }
    const SubExpParams& se() const { return se_; }
    void set_se(const SubExpParams& p) { se_ = p; }
    long n() const { return n_; }
    long p() const { return p_; }

    bool has_ground_truth() const { return x_star_.has_value(); }
    const Matrix& a() const { return a_; }
    const Vector& b() const { return b_; }
    const Vector& x_star() const {
        if (!x_star_) throw std::logic_error("StreamSource: no ground truth");
        return *x_star_;
    }

    // E[||A~ x - b~||^2] as a multiple of the full residual ||A x - b||^2.
    double expectation_scale() const {
        if (kind_ == Kind::RowSubset)
            return static_cast<double>(p_) / static_cast<double>(a_.rows());
        if (kind_ == Kind::SketchedSystem) return 1.0;
        throw std::logic_error("expectation_scale: collocation streams have no full residual");
    }

    // E[||A~ x - b~||^2 | x] for ground-truth streams.
    double conditional_residual_mean(const Vector& x) const {
        if (kind_ == Kind::Collocation)
            throw std::logic_error("conditional_residual_mean: collocation streams have no full residual");
        return expectation_scale() * (a_ * x - b_).squaredNorm();
    }

private:
    StreamSource(Kind kind, Matrix a, Vector b, long p, std::optional<Vector> x_star)
        : kind_(kind), a_(std::move(a)), b_(std::move(b)), x_star_(std::move(x_star)), p_(p) {
        if (kind_ != Kind::Collocation) {
            if (a_.rows() != b_.size())
                throw std::invalid_argument("StreamSource: A and b row counts differ");
            require_finite(a_, "StreamSource A");
            require_finite(b_, "StreamSource b");
            n_ = a_.cols();
            if (x_star_) {
                if (x_star_->size() != n_)
                    throw std::invalid_argument("StreamSource: x* has wrong length");
                double resid = (a_ * *x_star_ - b_).norm();
                if (resid > 1e-10 * (1.0 + b_.norm()))
                    throw std::invalid_argument("StreamSource: supplied system is inconsistent");
            }
        }
    }

    Kind kind_;
    Matrix a_;
    Vector b_;
    std::optional<Vector> x_star_;
    SketchMethodId method_ = SketchMethodId::Gaussian;
    SubExpParams se_{};
    long n_ = 0;
    long p_ = 0;
    std::vector<std::array<double, 3>> control_points_;
};

// Smallest above-cutoff eigenvalue of E[A~^T A~], estimated by averaging
// A~^T A~ over n_samples draws.
inline double estimate_gram_sigma_min(const StreamSource& source, long n_samples, RngHandle& rng) {
    if (n_samples < 1) throw std::invalid_argument("estimate_gram_sigma_min: need n_samples >= 1");
    Matrix g = Matrix::Zero(source.n(), source.n());
    for (long s = 0; s < n_samples; ++s) {
        Observation obs = source.next(rng);
        g.noalias() += obs.a_tilde.transpose() * obs.a_tilde;
    }
    g /= static_cast<double>(n_samples);
    Eigen::SelfAdjointEigenSolver<Matrix> es(g);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("estimate_gram_sigma_min: eigendecomposition failed");
    const Vector& ev = es.eigenvalues();
    double cutoff = detail::rank_cutoff(g.rows(), std::abs(ev[ev.size() - 1]));
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev[i] > cutoff) return ev[i];
    throw std::runtime_error("estimate_gram_sigma_min: estimated Gram matrix is numerically zero");
}

// Collocation source with tail parameters filled in from a Monte-Carlo Gram
// spectrum estimate; also reports the support constant D.
inline StreamSource collocation_stream(double grid_gap, long p, RngHandle& rng,
                                       long n_sigma_samples = 200, double* d_out = nullptr) {
    StreamSource s = StreamSource::collocation(grid_gap, p);
    double sigma_min = estimate_gram_sigma_min(s, n_sigma_samples, rng);
    auto [d, params] = collocation_params(s.n(), sigma_min);
    s.set_se(params);
    if (d_out) *d_out = d;
    return s;
}

// ---------------------------------------------------------------------------
// Test-matrix generators
// ---------------------------------------------------------------------------

enum class GeneratorId { Golub, Wilkinson, Rohess, RandUniform };

inline const char* to_string(GeneratorId g) {
    switch (g) {
        case GeneratorId::Golub: return "golub";
        case GeneratorId::Wilkinson: return "wilkinson";
        case GeneratorId::Rohess: return "rohess";
        case GeneratorId::RandUniform: return "rand_uniform";
    }
    return "?";
}

inline GeneratorId generator_from_string(const std::string& name) {
    if (name == "golub") return GeneratorId::Golub;
    if (name == "wilkinson") return GeneratorId::Wilkinson;
    if (name == "rohess") return GeneratorId::Rohess;
    if (name == "rand_uniform") return GeneratorId::RandUniform;
    throw std::invalid_argument("unknown generator: " + name);
}

// Square test matrices:
//   wilkinson    symmetric tridiagonal, unit off-diagonals, diagonal
//                |i - (n+1)/2| (1-based rows);
//   rohess       random orthogonal upper Hessenberg, a product of n-1 Givens
//                rotations with uniform angles;
//   golub        L*U with unit-triangular factors whose strict entries are
//                i.i.d. integers in [-5, 5] (det = 1, badly conditioned);
//   rand_uniform i.i.d. Uniform(0,1) entries.
inline Matrix depot_matrix(GeneratorId name, long n, RngHandle& rng) {
    if (n < 2) throw std::invalid_argument("depot_matrix: n must be >= 2");
    switch (name) {
        case GeneratorId::Wilkinson: {
            Matrix a = Matrix::Zero(n, n);
            for (long i = 0; i < n; ++i) {
                a(i, i) = std::abs(static_cast<double>(i + 1) - (static_cast<double>(n) + 1.0) / 2.0);
                if (i + 1 < n) {
                    a(i, i + 1) = 1.0;
                    a(i + 1, i) = 1.0;
                }
            }
            return a;
        }
        case GeneratorId::Rohess: {
            // Ascending plane order keeps the product upper Hessenberg.
            Matrix q = Matrix::Identity(n, n);
            for (long i = 0; i < n - 1; ++i) {
                double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
                Eigen::JacobiRotation<double> rot(std::cos(theta), std::sin(theta));
                q.applyOnTheRight(i, i + 1, rot);
            }
            return q;
        }
        case GeneratorId::Golub: {
            Matrix l = Matrix::Identity(n, n);
            Matrix u = Matrix::Identity(n, n);
            for (long i = 0; i < n; ++i)
                for (long j = 0; j < i; ++j)
                    l(i, j) = static_cast<double>(rng.uniform_int(-5, 5));
            for (long i = 0; i < n; ++i)
                for (long j = i + 1; j < n; ++j)
                    u(i, j) = static_cast<double>(rng.uniform_int(-5, 5));
            return l * u;
        }
        case GeneratorId::RandUniform: {
            Matrix a(n, n);
            for (long i = 0; i < n; ++i)
                for (long j = 0; j < n; ++j) a(i, j) = rng.uniform01();
            return a;
        }
    }
    throw std::invalid_argument("depot_matrix: unknown generator");
}

// ---------------------------------------------------------------------------
// Matrix and vector file formats
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "binary matrix format assumes a little-endian host");
static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559,
              "binary matrix format assumes IEEE-754 binary64");

// Whitespace-delimited text: one row per line.
inline Matrix load_matrix_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (!ls.eof() && ls.fail())
            throw std::runtime_error(path + ": malformed numeric value");
        if (!row.empty()) rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error(path + ": no data");
    std::size_t cols = rows.front().size();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != cols) throw std::runtime_error(path + ": ragged rows");
        for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    require_finite(m, path.c_str());
    return m;
}

inline void save_matrix_text(const std::string& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    char buf[32];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
            out << buf << (j + 1 < m.cols() ? " " : "");
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Raw binary: two little-endian 64-bit row/col counts, then row-major
// little-endian 64-bit floats.
inline Matrix load_matrix_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::uint64_t dims[2];
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in) throw std::runtime_error(path + ": truncated header");
    if (dims[0] == 0 || dims[1] == 0 || dims[0] > (1ULL << 32) || dims[1] > (1ULL << 32))
        throw std::runtime_error(path + ": implausible dimensions");
    Matrix m(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
    std::vector<double> row(dims[1]);
    for (std::uint64_t i = 0; i < dims[0]; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(sizeof(double) * dims[1]));
        if (!in) throw std::runtime_error(path + ": truncated data");
        for (std::uint64_t j = 0; j < dims[1]; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
    require_finite(m, path.c_str());
    return m;
}

inline void save_matrix_binary(const std::string& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    std::vector<double> row(dims[1]);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(sizeof(double) * row.size()));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

// Vectors are stored as n x 1 matrices; a 1 x n text file is accepted and
// transposed on load.
inline Vector load_vector(const std::string& path, bool binary = false) {
    Matrix m = binary ? load_matrix_binary(path) : load_matrix_text(path);
    if (m.cols() == 1) return m.col(0);
    if (m.rows() == 1) return m.row(0).transpose();
    throw std::runtime_error(path + ": expected a vector");
}

inline void save_vector(const std::string& path, const Vector& v, bool binary = false) {
    Matrix m = v;
    if (binary)
        save_matrix_binary(path, m);
    else
        save_matrix_text(path, m);
}

}  // namespace sketchtrack
