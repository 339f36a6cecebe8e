#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sketchtrack {

// Tail parameters (sigma, omega) of the sub-Exponential class: deviations
// beyond delta occur with probability at most
//     exp(-min(delta^2 / (2 sigma^2), delta / (2 omega))),
// with the convention that a zero parameter removes its term from the min.
struct SubExpParams {
    double sigma = 0.0;
    double omega = 0.0;

    SubExpParams() = default;
    SubExpParams(double s, double w) : sigma(s), omega(w) {
        if (!(sigma >= 0.0) || !(omega >= 0.0))
            throw std::invalid_argument("SubExpParams: sigma and omega must be >= 0");
    }
};

enum class SketchMethodId { Gaussian, Achlioptas, FJLT, RowSubset };

inline const char* to_string(SketchMethodId m) {
    switch (m) {
        case SketchMethodId::Gaussian: return "gaussian";
        case SketchMethodId::Achlioptas: return "achlioptas";
        case SketchMethodId::FJLT: return "fjlt";
        case SketchMethodId::RowSubset: return "rowsubset";
    }
    return "?";
}

// Two-sided tail bound at deviation delta. Zero parameters drop their term
// (c/0 = infinity); if both are zero the variable is constant, so any
// positive deviation has probability 0.
inline double tail_bound(const SubExpParams& p, double delta) {
    if (!(delta >= 0.0)) throw std::invalid_argument("tail_bound: delta must be >= 0");
    if (delta == 0.0) return 1.0;
    double expo = std::numeric_limits<double>::infinity();
    if (p.sigma > 0.0) expo = delta * delta / (2.0 * p.sigma * p.sigma);
    if (p.omega > 0.0) expo = std::min(expo, delta / (2.0 * p.omega));
    if (std::isinf(expo)) return 0.0;
    return std::exp(-expo);
}

// c1 (Y - mu) stays sub-Exponential with parameters scaled by c2 >= |c1| > 0.
inline SubExpParams scale(const SubExpParams& p, double c1, double c2) {
    if (c1 == 0.0) throw std::invalid_argument("scale: c1 must be nonzero");
    if (!(c2 >= std::abs(c1))) throw std::invalid_argument("scale: require c2 >= |c1|");
    return SubExpParams(c2 * p.sigma, c2 * p.omega);
}

// A variable supported on [y1, y2] is SE((y2 - y1)/2, 0).
inline SubExpParams from_bounded(double y1, double y2) {
    if (!(y2 >= y1)) throw std::invalid_argument("from_bounded: require y2 >= y1");
    return SubExpParams((y2 - y1) / 2.0, 0.0);
}

// Embedding-quality constants (C, omega) per sketch family. Exact decimal
// literals; the tail bound for relative squared-norm error at embedding
// dimension p is exp(-min(C p delta^2 / 2, delta / (2 omega))).
inline std::pair<double, double> jl_constants(SketchMethodId m) {
    switch (m) {
        case SketchMethodId::Gaussian: return {0.23467, 0.1127};
        case SketchMethodId::Achlioptas: return {0.23467, 0.1127};
        case SketchMethodId::FJLT: return {0.03125, 0.0625};
        case SketchMethodId::RowSubset:
            throw std::invalid_argument("jl_constants: row subsets have no (C, omega); use row_subset_params");
    }
    throw std::invalid_argument("jl_constants: unknown method");
}

// Stream tail parameters for a JL sketch at embedding dimension p:
// sigma^2 = 1 / (C p), omega from the constants table.
inline SubExpParams se_from_jl(SketchMethodId m, long p) {
    if (p < 1) throw std::invalid_argument("se_from_jl: p must be >= 1");
    auto [c, omega] = jl_constants(m);
    return SubExpParams(std::sqrt(1.0 / (c * static_cast<double>(p))), omega);
}

// Stream tail parameters for uniform row subsets of size p out of m rows:
// the relative error is supported on [-1, (m-p)/p], giving SE(m/(2p), 0).
inline SubExpParams row_subset_params(long m, long p) {
    if (p < 1 || p > m) throw std::invalid_argument("row_subset_params: require 1 <= p <= m");
    return SubExpParams(static_cast<double>(m) / (2.0 * static_cast<double>(p)), 0.0);
}

// Stream tail parameters for the random collocation rows: D = 9N / sigma_min
// where sigma_min is the smallest nonzero singular value of E[A~^T A~] and N
// the column count; the relative error is supported on [-1, D-1].
inline std::pair<double, SubExpParams> collocation_params(long n_cols, double sigma_min_est) {
    if (n_cols < 1) throw std::invalid_argument("collocation_params: N must be >= 1");
    if (!(sigma_min_est > 0.0))
        throw std::invalid_argument("collocation_params: sigma_min estimate must be positive");
    double d = 9.0 * static_cast<double>(n_cols) / sigma_min_est;
    return {d, SubExpParams(d / 2.0, 0.0)};
}

struct TailCheckRow {
    double delta = 0.0;
    double freq_upper = 0.0;  // fraction of samples above +delta
    double freq_lower = 0.0;  // fraction of samples below -delta
    double bound = 0.0;
    bool violated = false;
};

struct TailCheckReport {
    std::vector<TailCheckRow> rows;
    double slack = 0.0;
    bool any_violated = false;
};

// Three-standard-error Monte-Carlo slack for an empirical frequency with
// expected level `bound` over n samples.
inline double tail_check_slack(double bound, std::size_t n) {
    double b = std::min(std::max(bound, 0.0), 1.0);
    return 3.0 * std::sqrt(b * (1.0 - b) / static_cast<double>(n)) + 1.0 / static_cast<double>(n);
}

// Compares empirical two-sided tail frequencies of centered samples against
// tail_bound(params, delta) + slack on a grid of deltas. A negative slack
// argument selects the per-delta three-standard-error default.
inline TailCheckReport empirical_tail_check(const std::vector<double>& samples,
                                            const SubExpParams& params,
                                            const std::vector<double>& deltas,
                                            double slack = -1.0) {
    if (samples.empty()) throw std::invalid_argument("empirical_tail_check: no samples");
    TailCheckReport rep;
    rep.slack = slack;
    for (double d : deltas) {
        if (!(d > 0.0)) throw std::invalid_argument("empirical_tail_check: deltas must be positive");
        TailCheckRow row;
        row.delta = d;
        std::size_t up = 0, down = 0;
        for (double s : samples) {
            if (s > d) ++up;
            if (s < -d) ++down;
        }
        row.freq_upper = static_cast<double>(up) / static_cast<double>(samples.size());
        row.freq_lower = static_cast<double>(down) / static_cast<double>(samples.size());
        row.bound = tail_bound(params, d);
        double eff_slack = slack >= 0.0 ? slack : tail_check_slack(row.bound, samples.size());
        row.violated = std::max(row.freq_upper, row.freq_lower) > row.bound + eff_slack;
        rep.any_violated = rep.any_violated || row.violated;
        rep.rows.push_back(row);
    }
    return rep;
}

}  // namespace sketchtrack
