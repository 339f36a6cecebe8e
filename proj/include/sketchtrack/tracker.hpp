#pragma once

#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "subexp.hpp"

namespace sketchtrack {

// User risk configuration for tracking and stopping:
//   upsilon   residual-level threshold the run should reach,
//   delta_I   margin (< 1) for "stopped later than desired" control,
//   delta_II  margin (> 1) for "stopped earlier than desired" control,
//   xi_I/II   tolerated probabilities of the two stopping errors,
//   eta       contraction (>= 1) applied to the conservative widths,
//   alpha     uncertainty-interval level (1 - alpha coverage).
struct StoppingParams {
    double upsilon = 1.0;
    double delta_i = 0.9;
    double delta_ii = 1.1;
    double xi_i = 0.01;
    double xi_ii = 0.01;
    double eta = 1.0;
    double alpha = 0.05;

    void validate() const {
        if (!(upsilon > 0.0)) throw std::invalid_argument("StoppingParams: upsilon must be > 0");
        if (!(delta_i > 0.0 && delta_i < 1.0))
            throw std::invalid_argument("StoppingParams: delta_I must lie in (0,1)");
        if (!(delta_ii > 1.0)) throw std::invalid_argument("StoppingParams: delta_II must be > 1");
        if (!(xi_i > 0.0 && xi_i < 1.0))
            throw std::invalid_argument("StoppingParams: xi_I must lie in (0,1)");
        if (!(xi_ii > 0.0 && xi_ii < 1.0))
            throw std::invalid_argument("StoppingParams: xi_II must lie in (0,1)");
        if (!(eta >= 1.0)) throw std::invalid_argument("StoppingParams: eta must be >= 1");
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("StoppingParams: alpha must lie in (0,1)");
    }
};

struct Interval {
    enum class Branch { SubGaussian, SubExponential };
    double center = 0.0;
    double half_width = 0.0;
    Branch branch = Branch::SubGaussian;

    double lo() const { return center - half_width; }
    double hi() const { return center + half_width; }
    bool contains(double v) const { return v >= lo() && v <= hi(); }
};

// Moving-average tracking state for the squared sketched residuals: the mean
// rho~ and fourth-moment mean iota~ over an adaptive window. The window grows
// to lambda1 and slides there during the initial decay phase; the first
// non-decrease of the residual flips a one-way flag, after which the window
// grows to lambda2 and slides there. Means are recomputed from the raw
// history each update; the +/- increment recurrences drift for fourth powers.
class Tracker {
public:
    Tracker(long lambda1, long lambda2) : lambda1_(lambda1), lambda2_(lambda2) {
        if (lambda1 < 1 || lambda2 < lambda1)
            throw std::invalid_argument("Tracker: require 1 <= lambda1 <= lambda2");
    }

    void update(double r_norm_sq) {
        if (!(r_norm_sq >= 0.0) || !std::isfinite(r_norm_sq))
            throw std::invalid_argument("Tracker::update: residual must be finite and >= 0");
        if (k_ == 0) {
            lambda_ = 1;
        } else {
            if (!flag_ && r_norm_sq > last_) flag_ = true;
            if (!flag_ && k_ < lambda1_)
                lambda_ = k_ + 1;
            else if (!flag_ && k_ >= lambda1_)
                lambda_ = lambda1_;
            else if (flag_ && lambda_ < lambda2_)
                lambda_ = lambda_ + 1;
            else
                lambda_ = lambda2_;
        }
        history_.push_back(r_norm_sq);
        while (static_cast<long>(history_.size()) > lambda2_) history_.pop_front();
        double sum_sq = 0.0, sum_quad = 0.0;
        auto it = history_.end();
        for (long i = 0; i < lambda_; ++i) {
            --it;
            sum_sq += *it;
            sum_quad += *it * *it;
        }
        rho_ = sum_sq / static_cast<double>(lambda_);
        iota_ = sum_quad / static_cast<double>(lambda_);
        last_ = r_norm_sq;
        k_ += 1;
    }

    long count() const { return k_; }
    long lambda() const { return lambda_; }
    bool flag() const { return flag_; }
    double rho() const { return rho_; }
    double iota() const { return iota_; }
    long lambda1() const { return lambda1_; }
    long lambda2() const { return lambda2_; }

private:
    long lambda1_;
    long lambda2_;
    long lambda_ = 0;
    bool flag_ = false;
    long k_ = 0;
    double last_ = 0.0;
    double rho_ = 0.0;
    double iota_ = 0.0;
    std::deque<double> history_;
};

namespace detail {

// Interval half-width around a residual-mean estimate whose deviation scale
// is `spread` (sqrt(iota~) for the plug-in interval, M for the oracle one).
// `cond_scale` is the omega-branch condition divisor (2 for the tracking
// interval, 1 for the oracle form); eta contracts both widths.
inline std::pair<double, Interval::Branch> interval_half_width(double spread_sq, double spread,
                                                               long lambda,
                                                               const SubExpParams& se,
                                                               double alpha, double eta,
                                                               double cond_scale) {
    double big_l = std::log(2.0 / alpha);
    double lam = static_cast<double>(lambda);
    double logs = 1.0 + std::log(lam);
    bool sub_gaussian =
        se.omega == 0.0 ||
        big_l <= lam * se.sigma * se.sigma * logs / (cond_scale * se.omega * se.omega);
    if (sub_gaussian) {
        double hw = std::sqrt(2.0 * big_l * se.sigma * se.sigma * spread_sq * logs / (eta * lam));
        return {hw, Interval::Branch::SubGaussian};
    }
    double hw = 2.0 * big_l * se.omega * spread / (std::sqrt(eta) * lam);
    return {hw, Interval::Branch::SubExponential};
}

}  // namespace detail

// (1 - alpha) uncertainty interval around a residual-mean estimate rho with
// plug-in spread sqrt(iota) at window width lambda. With omega = 0 the
// sub-Gaussian branch always applies (the branch condition's right side is
// infinite).
inline Interval interval_at(double rho, double iota, long lambda, const SubExpParams& se,
                            double alpha, double eta) {
    if (lambda < 1) throw std::invalid_argument("interval_at: lambda must be >= 1");
    if (!(iota >= 0.0)) throw std::invalid_argument("interval_at: iota must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("interval_at: alpha must lie in (0,1)");
    if (!(eta >= 1.0)) throw std::invalid_argument("interval_at: eta must be >= 1");
    Interval iv;
    iv.center = rho;
    auto [hw, branch] =
        detail::interval_half_width(iota, std::sqrt(iota), lambda, se, alpha, eta, 2.0);
    iv.half_width = hw;
    iv.branch = branch;
    return iv;
}

inline Interval interval(const Tracker& t, const SubExpParams& se, double alpha, double eta) {
    if (t.count() < 1) throw std::logic_error("interval: tracker has no updates");
    return interval_at(t.rho(), t.iota(), t.lambda(), se, alpha, eta);
}

// Reference-form interval with the exact deviation scale M in place of
// sqrt(iota~); no eta contraction, and the omega-branch condition carries
// omega^2 rather than 2 omega^2. Diagnostic only.
inline Interval oracle_interval(double m_scale, long lambda, const SubExpParams& se, double alpha) {
    if (!(m_scale >= 0.0)) throw std::invalid_argument("oracle_interval: M must be >= 0");
    if (lambda < 1) throw std::invalid_argument("oracle_interval: lambda must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("oracle_interval: alpha must lie in (0,1)");
    Interval iv;
    iv.center = 0.0;  // caller supplies the center
    auto [hw, branch] =
        detail::interval_half_width(m_scale * m_scale, m_scale, lambda, se, alpha, 1.0, 1.0);
    iv.half_width = hw;
    iv.branch = branch;
    return iv;
}

// Threshold on sqrt(iota~) below which both stopping-error probabilities are
// within the user's tolerances. Terms whose denominator vanishes (omega = 0,
// sigma = 0, or iota = 0) drop out as +infinity.
inline double stop_threshold_at(double iota, long lambda, const StoppingParams& params,
                                const SubExpParams& se) {
    if (lambda < 1) throw std::invalid_argument("stop_threshold_at: lambda must be >= 1");
    if (!(iota >= 0.0)) throw std::invalid_argument("stop_threshold_at: iota must be >= 0");
    params.validate();
    const double inf = std::numeric_limits<double>::infinity();
    double lam = static_cast<double>(lambda);
    double logs = 1.0 + std::log(lam);
    double root_iota = std::sqrt(iota);
    double u = params.upsilon;

    auto quad_term = [&](double margin, double xi) {
        double denom = 2.0 * std::log(1.0 / xi) * se.sigma * se.sigma * root_iota * logs;
        if (denom == 0.0) return inf;
        return lam * params.eta * margin * margin * u * u / denom;
    };
    auto lin_term = [&](double margin, double xi) {
        if (se.omega == 0.0) return inf;
        return lam * params.eta * u * margin / (2.0 * std::log(1.0 / xi) * se.omega);
    };

    double t1 = quad_term(1.0 - params.delta_i, params.xi_i);
    double t2 = lin_term(1.0 - params.delta_i, params.xi_i);
    double t3 = quad_term(params.delta_ii - 1.0, params.xi_ii);
    double t4 = lin_term(params.delta_ii - 1.0, params.xi_ii);
    return std::min(std::min(t1, t2), std::min(t3, t4));
}

inline double stop_threshold(const Tracker& t, const StoppingParams& params,
                             const SubExpParams& se) {
    if (t.count() < 1) throw std::logic_error("stop_threshold: tracker has no updates");
    return stop_threshold_at(t.iota(), t.lambda(), params, se);
}

// The run may stop once at least one update happened, the residual-mean
// estimate is below upsilon, and sqrt(iota~) clears the precision threshold.
inline bool should_stop(const Tracker& t, const StoppingParams& params, const SubExpParams& se) {
    if (t.count() < 1) return false;
    return t.rho() < params.upsilon && std::sqrt(t.iota()) < stop_threshold(t, params, se);
}

// Probability bound on the relative disagreement between iota~ and M^2
// exceeding 1 + delta, capped at 1. Diagnostic companion to the plug-in
// interval.
inline double iota_vs_m_bound(double delta, long lambda, double sigma) {
    if (!(delta > 0.0)) throw std::invalid_argument("iota_vs_m_bound: delta must be > 0");
    if (lambda < 1) throw std::invalid_argument("iota_vs_m_bound: lambda must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("iota_vs_m_bound: sigma must be > 0");
    double lam = static_cast<double>(lambda);
    double logs = 1.0 + std::log(lam);
    double g = 2.0 + std::pow(delta * delta * lam / logs, 0.25);
    double bound = (1.0 + lam) * std::exp(-delta * delta * lam / (2.0 * sigma * sigma * g * g * logs));
    return std::min(1.0, bound);
}

}  // namespace sketchtrack
