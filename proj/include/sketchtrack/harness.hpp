#pragma once

// Experiment drivers: tracked solve loops, replicated coverage studies,
// stopping-error audits, and the trace/report plumbing shared by the CLI and
// the test suite.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "solver.hpp"
#include "streams.hpp"
#include "tracker.hpp"

namespace sketchtrack {

// ---------------------------------------------------------------------------
// Small statistics helpers
// ---------------------------------------------------------------------------

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_of: empty input");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Unbiased (n-1) sample variance.
inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("sample_variance: need at least two values");
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

// Linear-interpolation percentile, q in [0, 100].
inline double percentile_of(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("percentile_of: empty input");
    if (!(q >= 0.0 && q <= 100.0)) throw std::invalid_argument("percentile_of: q outside [0,100]");
    std::sort(v.begin(), v.end());
    double h = q / 100.0 * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    double frac = h - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

// Runs fn(0..n-1), spread over `jobs` threads when jobs > 1. Each index must
// write only its own output slot; results are then independent of scheduling.
template <typename F>
void parallel_for(long n, long jobs, F&& fn) {
    if (n <= 0) return;
    if (jobs <= 1 || n == 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::mutex err_mutex;
    std::exception_ptr err;
    auto worker = [&]() {
        for (;;) {
            long i = next.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    long n_threads = std::min<long>(jobs, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (long t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Tracked solve loop
// ---------------------------------------------------------------------------

struct IterRecord {
    long k = 0;       // 1-based iteration index
    long lambda = 0;  // window width in effect after this update
    double r2 = 0.0;  // squared sketched residual at the pre-update iterate
    double rho = 0.0;
    double iota = 0.0;
    double lo = 0.0;  // interval bounds around rho
    double hi = 0.0;
    bool stopped = false;  // stopping condition held at this iteration
    std::optional<double> true_r2;   // conditional mean of r2 given the iterate
    std::optional<double> err_b;     // ||x_k - x*||_B at the post-update iterate
    std::optional<Vector> x_snapshot;  // post-update iterate, kept on request
};

struct RunTrace {
    std::vector<std::pair<std::string, std::string>> config;  // echo for reports
    std::vector<IterRecord> records;
    std::optional<long> stop_iteration;  // set when the run exited early
    std::optional<Vector> x0;            // kept when snapshots are requested
    Vector x_final;
};

struct RunOptions {
    long max_iters = 300;
    long lambda1 = 1;
    long lambda2 = 1;
    StoppingParams stopping{};
    bool stop_enabled = true;  // false: evaluate the condition but never exit
    bool save_x = false;
};

inline RunTrace run_tracked_solve(const StreamSource& src, const Vector& x0, const BInv& b_inv,
                                  const SubExpParams& se, const RunOptions& opt, RngHandle& rng) {
    if (opt.max_iters < 1) throw std::invalid_argument("run_tracked_solve: max_iters must be >= 1");
    opt.stopping.validate();
    RunTrace trace;
    trace.records.reserve(static_cast<std::size_t>(opt.max_iters));
    if (opt.save_x) trace.x0 = x0;
    SolverState state(x0, b_inv);
    Tracker tracker(opt.lambda1, opt.lambda2);
    for (long k = 1; k <= opt.max_iters; ++k) {
        IterRecord rec;
        if (src.has_ground_truth()) rec.true_r2 = src.conditional_residual_mean(state.x);
        Observation obs = src.next(rng);
        StepResult sr = step(state, obs);
        tracker.update(sr.r_norm_sq);
        Interval iv = interval(tracker, se, opt.stopping.alpha, opt.stopping.eta);
        rec.k = k;
        rec.lambda = tracker.lambda();
        rec.r2 = sr.r_norm_sq;
        rec.rho = tracker.rho();
        rec.iota = tracker.iota();
        rec.lo = iv.lo();
        rec.hi = iv.hi();
        rec.stopped = should_stop(tracker, opt.stopping, se);
        if (src.has_ground_truth()) rec.err_b = error_b_norm(state.x - src.x_star(), b_inv);
        if (opt.save_x) rec.x_snapshot = state.x;
        trace.records.push_back(std::move(rec));
        if (trace.records.back().stopped && opt.stop_enabled) {
            trace.stop_iteration = k;
            break;
        }
    }
    trace.x_final = state.x;
    return trace;
}

// ---------------------------------------------------------------------------
// Residual-bound scale M
// ---------------------------------------------------------------------------

// Monte-Carlo estimate of E ||A~ B^{-1/2}||_2^2 over observation draws.
inline double estimate_spectral_factor(const StreamSource& src, const BInv& b_inv, long n_samples,
                                       RngHandle& rng) {
    if (n_samples < 1) throw std::invalid_argument("estimate_spectral_factor: need n_samples >= 1");
    Matrix root;
    if (!b_inv.identity()) root = symmetric_sqrt(b_inv.m);
    double s = 0.0;
    for (long i = 0; i < n_samples; ++i) {
        Observation obs = src.next(rng);
        if (root.size() == 0)
            s += squared_spectral_norm(obs.a_tilde);
        else
            s += squared_spectral_norm(Matrix(obs.a_tilde * root));
    }
    return s / static_cast<double>(n_samples);
}

// Deterministic envelope for the sketched residual at x_ref:
// E ||A~ B^{-1/2}||_2^2 * ||x_ref - x*||_B^2.
inline double estimate_M(const StreamSource& src, const BInv& b_inv, const Vector& x_ref,
                         long n_samples, RngHandle& rng) {
    double factor = estimate_spectral_factor(src, b_inv, n_samples, rng);
    double err = error_b_norm(x_ref - src.x_star(), b_inv);
    return factor * err * err;
}

// ---------------------------------------------------------------------------
// Two-stage coverage experiment
// ---------------------------------------------------------------------------

struct CoverageConfig {
    long n_iters = 300;
    long lambda = 15;  // fixed window: lambda1 = lambda2 = lambda
    long n_replicates = 100;
    double alpha = 0.05;
    std::vector<double> etas{1.0};
};

struct CoveragePoint {
    long start = 0;  // saved iterate the replicates branch from (1-based)
    double rho_hat = 0.0;       // average of replicate window means
    bool has_stage1 = false;    // first stage reaches iteration start + lambda
    double stage1_rho = 0.0;    // first-stage stats at iteration start + lambda
    double stage1_iota = 0.0;
    std::vector<double> rep_rho;
    std::vector<double> rep_iota;
};

struct CoverageRates {
    double eta = 1.0;
    // Sets built from each replicate's own (rho, iota), checked against rho_hat.
    long n_replicate_sets = 0;
    long n_replicate_misses = 0;
    double replicate_set_miss_rate = 0.0;
    // First-stage set checked against rho_hat.
    long n_mean_checks = 0;
    long n_mean_misses = 0;
    double mean_miss_rate = 0.0;
    // First-stage set checked against each replicate's rho.
    long n_stage1_rep_checks = 0;
    long n_stage1_rep_misses = 0;
    double stage1_rep_miss_rate = 0.0;
};

struct CoverageReport {
    long lambda = 0;
    double alpha = 0.05;
    std::vector<CoveragePoint> points;
    std::vector<CoverageRates> rates;  // one entry per requested eta
};

inline CoverageReport two_stage_coverage(const StreamSource& src, const Vector& x0,
                                         const BInv& b_inv, const CoverageConfig& cfg,
                                         RngHandle& rng, long jobs = 1) {
    if (cfg.lambda < 1 || cfg.n_iters < cfg.lambda)
        throw std::invalid_argument("two_stage_coverage: need 1 <= lambda <= n_iters");
    if (cfg.n_replicates < 1)
        throw std::invalid_argument("two_stage_coverage: need n_replicates >= 1");
    if (cfg.etas.empty()) throw std::invalid_argument("two_stage_coverage: etas is empty");

    RunOptions opt;
    opt.max_iters = cfg.n_iters;
    opt.lambda1 = cfg.lambda;
    opt.lambda2 = cfg.lambda;
    opt.stopping.alpha = cfg.alpha;
    opt.stop_enabled = false;
    opt.save_x = true;
    RunTrace trace = run_tracked_solve(src, x0, b_inv, src.se(), opt, rng);

    long n_points = cfg.n_iters;  // replicates branch from every saved iterate
    CoverageReport report;
    report.lambda = cfg.lambda;
    report.alpha = cfg.alpha;
    report.points.resize(static_cast<std::size_t>(n_points));

    parallel_for(n_points, jobs, [&](long i) {
        long start = i + 1;
        CoveragePoint pt;
        pt.start = start;
        const Vector& x_start = *trace.records[static_cast<std::size_t>(start - 1)].x_snapshot;
        pt.rep_rho.resize(static_cast<std::size_t>(cfg.n_replicates));
        pt.rep_iota.resize(static_cast<std::size_t>(cfg.n_replicates));
        for (long j = 0; j < cfg.n_replicates; ++j) {
            RngHandle child = rng.split(
                static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(cfg.n_replicates) +
                static_cast<std::uint64_t>(j) + 1);
            SolverState state(x_start, b_inv);
            Tracker tk(cfg.lambda, cfg.lambda);
            for (long t = 0; t < cfg.lambda; ++t) {
                Observation obs = src.next(child);
                StepResult sr = step(state, obs);
                tk.update(sr.r_norm_sq);
            }
            pt.rep_rho[static_cast<std::size_t>(j)] = tk.rho();
            pt.rep_iota[static_cast<std::size_t>(j)] = tk.iota();
        }
        pt.rho_hat = mean_of(pt.rep_rho);
        if (start + cfg.lambda <= cfg.n_iters) {
            // First-stage statistics whose window spans the same iterations
            // the replicates resample.
            const IterRecord& s1 = trace.records[static_cast<std::size_t>(start + cfg.lambda - 1)];
            pt.has_stage1 = true;
            pt.stage1_rho = s1.rho;
            pt.stage1_iota = s1.iota;
        }
        report.points[static_cast<std::size_t>(i)] = std::move(pt);
    });

    for (double eta : cfg.etas) {
        CoverageRates r;
        r.eta = eta;
        for (const CoveragePoint& pt : report.points) {
            for (std::size_t j = 0; j < pt.rep_rho.size(); ++j) {
                Interval rep = interval_at(pt.rep_rho[j], pt.rep_iota[j], cfg.lambda, src.se(),
                                           cfg.alpha, eta);
                r.n_replicate_sets += 1;
                if (!rep.contains(pt.rho_hat)) r.n_replicate_misses += 1;
            }
            if (!pt.has_stage1) continue;
            Interval s1 =
                interval_at(pt.stage1_rho, pt.stage1_iota, cfg.lambda, src.se(), cfg.alpha, eta);
            r.n_mean_checks += 1;
            if (!s1.contains(pt.rho_hat)) r.n_mean_misses += 1;
            for (double rep_rho : pt.rep_rho) {
                r.n_stage1_rep_checks += 1;
                if (!s1.contains(rep_rho)) r.n_stage1_rep_misses += 1;
            }
        }
        auto rate = [](long miss, long total) {
            return total > 0 ? static_cast<double>(miss) / static_cast<double>(total) : 0.0;
        };
        r.replicate_set_miss_rate = rate(r.n_replicate_misses, r.n_replicate_sets);
        r.mean_miss_rate = rate(r.n_mean_misses, r.n_mean_checks);
        r.stage1_rep_miss_rate = rate(r.n_stage1_rep_misses, r.n_stage1_rep_checks);
        report.rates.push_back(r);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Estimator-consistency report
// ---------------------------------------------------------------------------

struct ConsistencyReport {
    std::vector<double> percentiles;           // requested percentile levels
    std::vector<std::vector<double>> curves;   // curves[q][k-1] over iterations
    long warmup = 20;                          // first iteration of the plateau check
    double boundedness_ratio = 0.0;            // max/median of the median curve
};

// Window mean of the recorded conditional residual means, aligned with the
// tracker's window at each iteration.
inline std::vector<double> actual_residual_means(const RunTrace& trace) {
    std::vector<double> prefix(trace.records.size() + 1, 0.0);
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        if (!trace.records[i].true_r2)
            throw std::invalid_argument("actual_residual_means: trace lacks conditional means");
        prefix[i + 1] = prefix[i] + *trace.records[i].true_r2;
    }
    std::vector<double> out(trace.records.size(), 0.0);
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        auto lambda = static_cast<std::size_t>(trace.records[i].lambda);
        out[i] = (prefix[i + 1] - prefix[i + 1 - lambda]) / static_cast<double>(lambda);
    }
    return out;
}

inline ConsistencyReport consistency_report(const std::vector<RunTrace>& traces,
                                            std::vector<double> percentiles = {5.0, 50.0, 95.0},
                                            long warmup = 20) {
    if (traces.empty()) throw std::invalid_argument("consistency_report: no traces");
    std::size_t n_iters = traces.front().records.size();
    for (const RunTrace& t : traces) n_iters = std::min(n_iters, t.records.size());
    if (n_iters == 0) throw std::invalid_argument("consistency_report: empty trace");

    std::vector<std::vector<double>> rel(traces.size());
    for (std::size_t t = 0; t < traces.size(); ++t) {
        std::vector<double> rho_hat = actual_residual_means(traces[t]);
        rel[t].resize(n_iters, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 0; i < n_iters; ++i) {
            if (rho_hat[i] > 0.0)
                rel[t][i] = std::abs(traces[t].records[i].rho - rho_hat[i]) / rho_hat[i];
        }
    }

    ConsistencyReport report;
    report.percentiles = percentiles;
    report.warmup = warmup;
    report.curves.assign(percentiles.size(), std::vector<double>(n_iters, 0.0));
    std::vector<double> median_curve(n_iters, 0.0);
    for (std::size_t i = 0; i < n_iters; ++i) {
        std::vector<double> column;
        column.reserve(traces.size());
        for (std::size_t t = 0; t < traces.size(); ++t)
            if (std::isfinite(rel[t][i])) column.push_back(rel[t][i]);
        if (column.empty())
            throw std::runtime_error("consistency_report: no finite relative errors at some iteration");
        for (std::size_t q = 0; q < percentiles.size(); ++q)
            report.curves[q][i] = percentile_of(column, percentiles[q]);
        median_curve[i] = percentile_of(column, 50.0);
    }

    std::vector<double> plateau;
    for (std::size_t i = 0; i < n_iters; ++i)
        if (static_cast<long>(i) + 1 >= warmup) plateau.push_back(median_curve[i]);
    if (plateau.empty()) plateau = median_curve;
    double med = percentile_of(plateau, 50.0);
    double mx = *std::max_element(plateau.begin(), plateau.end());
    report.boundedness_ratio = med > 0.0 ? mx / med : 1.0;
    return report;
}

// ---------------------------------------------------------------------------
// Stopping-error audit
// ---------------------------------------------------------------------------

struct StoppingErrorReport {
    long n_iters = 0;
    long n_eligible = 0;       // iterations meeting the precision condition
    long n_stop_decisions = 0; // eligible and rho~ < upsilon
    long n_late = 0;           // rho~ > upsilon while the actual mean was small
    long n_early = 0;          // rho~ <= upsilon while the actual mean was large
    double late_rate = 0.0;
    double early_rate = 0.0;

    void refresh_rates() {
        late_rate = n_eligible > 0 ? static_cast<double>(n_late) / static_cast<double>(n_eligible)
                                   : 0.0;
        early_rate = n_eligible > 0 ? static_cast<double>(n_early) / static_cast<double>(n_eligible)
                                    : 0.0;
    }
    void merge(const StoppingErrorReport& other) {
        n_iters += other.n_iters;
        n_eligible += other.n_eligible;
        n_stop_decisions += other.n_stop_decisions;
        n_late += other.n_late;
        n_early += other.n_early;
        refresh_rates();
    }
};

// Audits one no-exit trace against its recorded conditional means. An
// iteration enters the audit once sqrt(iota~) clears the stopping threshold;
// it counts as a late error when rho~ sits above upsilon although the actual
// windowed mean is already below delta_i * upsilon, and as an early error when
// rho~ is at or below upsilon although the actual mean still exceeds
// delta_ii * upsilon.
inline StoppingErrorReport stopping_error_rates(const RunTrace& trace, const StoppingParams& params,
                                                const SubExpParams& se) {
    params.validate();
    std::vector<double> rho_hat = actual_residual_means(trace);
    StoppingErrorReport rep;
    rep.n_iters = static_cast<long>(trace.records.size());
    for (std::size_t i = 0; i < trace.records.size(); ++i) {
        const IterRecord& rec = trace.records[i];
        double threshold = stop_threshold_at(rec.iota, rec.lambda, params, se);
        if (!(std::sqrt(rec.iota) < threshold)) continue;
        rep.n_eligible += 1;
        if (rec.rho < params.upsilon) rep.n_stop_decisions += 1;
        if (rec.rho > params.upsilon && rho_hat[i] <= params.delta_i * params.upsilon)
            rep.n_late += 1;
        if (rec.rho <= params.upsilon && rho_hat[i] > params.delta_ii * params.upsilon)
            rep.n_early += 1;
    }
    rep.refresh_rates();
    return rep;
}

// ---------------------------------------------------------------------------
// iota~ vs M^2 diagnostic
// ---------------------------------------------------------------------------

struct IotaMCheckRow {
    double delta = 0.0;
    long n = 0;
    long n_exceed = 0;
    double empirical_rate = 0.0;
    double mean_bound = 0.0;  // average of the per-iteration probability bounds
};

struct IotaMCheckReport {
    double spectral_factor = 0.0;
    std::vector<IotaMCheckRow> rows;
};

// Frequency with which iota~ exceeds (1 + delta) * M^2, where M is evaluated
// at the iterate that opened the current window. Requires a trace recorded
// with snapshots on a ground-truth stream.
inline IotaMCheckReport iota_m_relative_check(const RunTrace& trace, const StreamSource& src,
                                              const BInv& b_inv, const std::vector<double>& deltas,
                                              long n_spectral_samples, RngHandle& rng) {
    if (!trace.x0) throw std::invalid_argument("iota_m_relative_check: trace lacks snapshots");
    if (deltas.empty()) throw std::invalid_argument("iota_m_relative_check: no deltas");
    IotaMCheckReport report;
    report.spectral_factor = estimate_spectral_factor(src, b_inv, n_spectral_samples, rng);
    const Vector& x_star = src.x_star();
    for (double delta : deltas) {
        IotaMCheckRow row;
        row.delta = delta;
        double bound_sum = 0.0;
        for (const IterRecord& rec : trace.records) {
            long ref = rec.k - rec.lambda;
            const Vector& x_ref =
                (ref == 0) ? *trace.x0
                           : *trace.records[static_cast<std::size_t>(ref - 1)].x_snapshot;
            double err = error_b_norm(x_ref - x_star, b_inv);
            double m2 = report.spectral_factor * err * err;
            if (!(m2 > 0.0)) continue;  // window opened at the exact solution
            row.n += 1;
            if (rec.iota > (1.0 + delta) * m2) row.n_exceed += 1;
            bound_sum += iota_vs_m_bound(delta, rec.lambda, src.se().sigma);
        }
        row.empirical_rate =
            row.n > 0 ? static_cast<double>(row.n_exceed) / static_cast<double>(row.n) : 0.0;
        row.mean_bound = row.n > 0 ? bound_sum / static_cast<double>(row.n) : 0.0;
        report.rows.push_back(row);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Collocation experiment
// ---------------------------------------------------------------------------

struct CollocationConfig {
    double grid_gap = 0.25;
    long p = 20;
    long lambda1 = 1;
    long lambda2 = 500;
    long n_iters = 200;
    StoppingParams stopping{};
    long n_cond_replicates = 100;  // fresh observations per iteration for the mean
    long sigma_window = 125;       // iterations before the empirical sigma swap
    long n_sigma_samples = 200;    // draws behind the Gram spectrum estimate
    CollocationConfig() { stopping.upsilon = 200.0; }
};

struct CollocationReport {
    long dim = 0;
    double d_value = 0.0;         // support constant of the relative residual
    double sigma_initial = 0.0;   // d_value / 2
    double sigma_empirical = 0.0; // from observed relative deviations
    RunTrace trace;               // true_r2 holds the Monte-Carlo conditional mean
    std::vector<double> rho_hat;  // window mean of the conditional-mean estimates
    std::vector<double> held_out; // one extra residual draw per iteration
    long n_cover = 0;
    double coverage = 0.0;
    StoppingErrorReport stopping_errors;
};

inline CollocationReport collocation_experiment(const CollocationConfig& cfg, RngHandle& rng) {
    if (cfg.n_iters < 1) throw std::invalid_argument("collocation_experiment: n_iters must be >= 1");
    if (cfg.n_cond_replicates < 1)
        throw std::invalid_argument("collocation_experiment: need conditional replicates");
    if (cfg.sigma_window < 2 || cfg.sigma_window >= cfg.n_iters)
        throw std::invalid_argument("collocation_experiment: sigma_window must lie in [2, n_iters)");
    cfg.stopping.validate();

    RngHandle rng_sigma = rng.split(1);
    RngHandle rng_main = rng.split(2);
    RngHandle rng_cond = rng.split(3);
    RngHandle rng_held = rng.split(4);

    CollocationReport report;
    StreamSource src =
        collocation_stream(cfg.grid_gap, cfg.p, rng_sigma, cfg.n_sigma_samples, &report.d_value);
    report.dim = src.n();
    report.sigma_initial = report.d_value / 2.0;

    SubExpParams se(report.sigma_initial, 0.0);
    SolverState state(Vector::Zero(report.dim), BInv{});
    Tracker tracker(cfg.lambda1, cfg.lambda2);
    std::vector<double> e_hat;        // conditional-mean estimates per iteration
    std::vector<double> rel_dev;      // |e_hat - held_out| / e_hat over the sigma window
    std::vector<double> e_prefix{0.0};
    report.trace.x0 = state.x;

    for (long k = 1; k <= cfg.n_iters; ++k) {
        // Conditional draws at the current (pre-update) iterate.
        double mean_r2 = 0.0;
        for (long j = 0; j < cfg.n_cond_replicates; ++j) {
            Observation obs = src.next(rng_cond);
            mean_r2 += (obs.a_tilde * state.x - obs.b_tilde).squaredNorm();
        }
        mean_r2 /= static_cast<double>(cfg.n_cond_replicates);
        Observation held = src.next(rng_held);
        double held_r2 = (held.a_tilde * state.x - held.b_tilde).squaredNorm();
        e_hat.push_back(mean_r2);
        report.held_out.push_back(held_r2);
        e_prefix.push_back(e_prefix.back() + mean_r2);
        if (mean_r2 > 0.0) {
            if (static_cast<long>(rel_dev.size()) < cfg.sigma_window)
                rel_dev.push_back(std::abs(mean_r2 - held_r2) / mean_r2);
        }

        Observation obs = src.next(rng_main);
        StepResult sr = step(state, obs);
        tracker.update(sr.r_norm_sq);

        if (k == cfg.sigma_window) {
            report.sigma_empirical = std::sqrt(sample_variance(rel_dev));
            se = SubExpParams(report.sigma_empirical, 0.0);
        }

        long lambda = tracker.lambda();
        double rho_hat_k =
            (e_prefix[static_cast<std::size_t>(k)] -
             e_prefix[static_cast<std::size_t>(k - lambda)]) /
            static_cast<double>(lambda);
        report.rho_hat.push_back(rho_hat_k);

        Interval iv = interval(tracker, se, cfg.stopping.alpha, cfg.stopping.eta);
        if (iv.contains(rho_hat_k)) report.n_cover += 1;

        IterRecord rec;
        rec.k = k;
        rec.lambda = lambda;
        rec.r2 = sr.r_norm_sq;
        rec.rho = tracker.rho();
        rec.iota = tracker.iota();
        rec.lo = iv.lo();
        rec.hi = iv.hi();
        rec.stopped = should_stop(tracker, cfg.stopping, se);
        rec.true_r2 = mean_r2;
        report.trace.records.push_back(std::move(rec));

        const IterRecord& back = report.trace.records.back();
        double threshold = stop_threshold_at(back.iota, lambda, cfg.stopping, se);
        report.stopping_errors.n_iters += 1;
        if (std::sqrt(back.iota) < threshold) {
            report.stopping_errors.n_eligible += 1;
            if (back.rho < cfg.stopping.upsilon) report.stopping_errors.n_stop_decisions += 1;
            if (back.rho > cfg.stopping.upsilon &&
                rho_hat_k <= cfg.stopping.delta_i * cfg.stopping.upsilon)
                report.stopping_errors.n_late += 1;
            if (back.rho <= cfg.stopping.upsilon &&
                rho_hat_k > cfg.stopping.delta_ii * cfg.stopping.upsilon)
                report.stopping_errors.n_early += 1;
        }
    }
    report.stopping_errors.refresh_rates();
    report.trace.x_final = state.x;
    report.coverage = static_cast<double>(report.n_cover) / static_cast<double>(cfg.n_iters);
    return report;
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

inline void write_trace_csv(std::ostream& out, const RunTrace& trace) {
    out << "k,lambda,r2,rho,iota,lo,hi,stopped,true_r2\n";
    char buf[512];
    for (const IterRecord& rec : trace.records) {
        int len = std::snprintf(buf, sizeof(buf), "%ld,%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%d,",
                                rec.k, rec.lambda, rec.r2, rec.rho, rec.iota, rec.lo, rec.hi,
                                rec.stopped ? 1 : 0);
        out.write(buf, len);
        if (rec.true_r2) {
            len = std::snprintf(buf, sizeof(buf), "%.17g", *rec.true_r2);
            out.write(buf, len);
        }
        out.put('\n');
    }
    if (!out) throw std::runtime_error("write_trace_csv: stream write failed");
}

inline void write_trace_csv(const std::string& path, const RunTrace& trace) {
    std::ofstream out(path, std::ios::binary);  // binary: keep '\n' verbatim
    if (!out) throw std::runtime_error("write_trace_csv: cannot open " + path);
    write_trace_csv(out, trace);
    out.flush();
    if (!out) throw std::runtime_error("write_trace_csv: write failed for " + path);
}

}  // namespace sketchtrack
