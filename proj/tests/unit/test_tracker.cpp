#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sketchtrack/rng.hpp"
#include "sketchtrack/tracker.hpp"

#include "../oracle_values.inc"

using namespace sketchtrack;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Straight-line reimplementation of the window semantics against full
// history, used to cross-check the deque bookkeeping.
struct ReferenceTracker {
    long lambda1, lambda2;
    std::vector<double> history;
    long lambda = 0;
    bool flag = false;

    ReferenceTracker(long l1, long l2) : lambda1(l1), lambda2(l2) {}

    void update(double r2) {
        long k = static_cast<long>(history.size());
        if (k == 0) {
            lambda = 1;
        } else {
            if (!flag && r2 > history.back()) flag = true;
            if (!flag)
                lambda = k < lambda1 ? k + 1 : lambda1;
            else
                lambda = std::min(lambda + 1, lambda2);
        }
        history.push_back(r2);
    }
    double rho() const {
        double s = 0.0;
        for (long i = 0; i < lambda; ++i) s += history[history.size() - 1 - i];
        return s / static_cast<double>(lambda);
    }
    double iota() const {
        double s = 0.0;
        for (long i = 0; i < lambda; ++i) {
            double v = history[history.size() - 1 - i];
            s += v * v;
        }
        return s / static_cast<double>(lambda);
    }
};

}  // namespace

TEST_CASE("tracker first update") {
    Tracker t(3, 5);
    REQUIRE(t.count() == 0);
    t.update(4.0);
    REQUIRE(t.count() == 1);
    REQUIRE(t.lambda() == 1);
    REQUIRE(t.rho() == 4.0);
    REQUIRE(t.iota() == 16.0);
    REQUIRE_FALSE(t.flag());
}

TEST_CASE("tracker hand trace with growth, flag, and cap") {
    Tracker t(2, 4);
    t.update(9.0);
    REQUIRE(t.lambda() == 1);
    REQUIRE(t.rho() == 9.0);
    REQUIRE(t.iota() == 81.0);

    t.update(4.0);  // still decreasing; window grows toward lambda1
    REQUIRE_FALSE(t.flag());
    REQUIRE(t.lambda() == 2);
    REQUIRE(t.rho() == 6.5);
    REQUIRE(t.iota() == 48.5);

    t.update(5.0);  // first increase flips the flag and the window keeps growing
    REQUIRE(t.flag());
    REQUIRE(t.lambda() == 3);
    REQUIRE_THAT(t.rho(), WithinRel(6.0, 1e-15));
    REQUIRE_THAT(t.iota(), WithinRel(122.0 / 3.0, 1e-15));

    t.update(1.0);
    REQUIRE(t.lambda() == 4);
    REQUIRE(t.rho() == 4.75);
    REQUIRE(t.iota() == 30.75);

    t.update(2.0);  // capped at lambda2: window is the last four values
    REQUIRE(t.lambda() == 4);
    REQUIRE(t.rho() == 3.0);
    REQUIRE(t.iota() == 11.5);
}

TEST_CASE("tracker slides at lambda1 before the flag") {
    Tracker t(1, 3);
    t.update(9.0);
    t.update(4.0);
    REQUIRE_FALSE(t.flag());
    REQUIRE(t.lambda() == 1);
    REQUIRE(t.rho() == 4.0);
    t.update(1.0);
    REQUIRE(t.lambda() == 1);
    REQUIRE(t.rho() == 1.0);
    t.update(7.0);  // increase: flag flips, window starts growing
    REQUIRE(t.flag());
    REQUIRE(t.lambda() == 2);
    REQUIRE(t.rho() == 4.0);
    REQUIRE(t.iota() == 25.0);
}

TEST_CASE("tracker matches a full-history reference on random inputs") {
    RngHandle rng(1101, 0);
    for (auto [l1, l2] : {std::pair<long, long>{1, 1}, {1, 7}, {4, 4}, {3, 10}, {15, 15}}) {
        Tracker t(l1, l2);
        ReferenceTracker ref(l1, l2);
        double level = 100.0;
        for (int k = 0; k < 200; ++k) {
            level *= 0.9;
            double r2 = level * (0.2 + rng.uniform01());  // occasional increases
            t.update(r2);
            ref.update(r2);
            REQUIRE(t.lambda() == ref.lambda);
            REQUIRE(t.flag() == ref.flag);
            REQUIRE_THAT(t.rho(), WithinRel(ref.rho(), 1e-12));
            REQUIRE_THAT(t.iota(), WithinRel(ref.iota(), 1e-12));
            REQUIRE(t.lambda() <= l2);
            if (!t.flag()) REQUIRE(t.lambda() <= l1);
        }
        REQUIRE(t.count() == 200);
    }
}

TEST_CASE("the flag never resets") {
    Tracker t(1, 5);
    t.update(1.0);
    t.update(2.0);
    REQUIRE(t.flag());
    for (double v : {1.0, 0.5, 0.25, 0.125}) t.update(v);
    REQUIRE(t.flag());
}

TEST_CASE("tracker validation") {
    REQUIRE_THROWS_AS(Tracker(0, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(Tracker(3, 2), std::invalid_argument);
    Tracker t(1, 1);
    REQUIRE_THROWS_AS(t.update(-1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(t.update(std::numeric_limits<double>::quiet_NaN()), std::invalid_argument);
    REQUIRE_THROWS_AS(interval(t, SubExpParams(1.0, 0.0), 0.05, 1.0), std::logic_error);
    StoppingParams params;
    REQUIRE_THROWS_AS(stop_threshold(t, params, SubExpParams(1.0, 0.0)), std::logic_error);
}

TEST_CASE("interval_at matches the independent reference table") {
    for (const auto& c : oracle::kIntervalCases) {
        Interval iv = interval_at(c.rho, c.iota, c.lambda_, SubExpParams(c.sigma, c.omega),
                                  c.alpha, c.eta);
        REQUIRE(iv.center == c.rho);
        REQUIRE_THAT(iv.half_width, WithinRel(c.half_width, 1e-12));
        REQUIRE((iv.branch == Interval::Branch::SubGaussian) == c.sub_gaussian);
        REQUIRE(iv.lo() == iv.center - iv.half_width);
        REQUIRE(iv.hi() == iv.center + iv.half_width);
        REQUIRE(iv.contains(c.rho));
        REQUIRE(iv.contains(iv.lo()));
        REQUIRE_FALSE(iv.contains(iv.hi() + 1e-6 * (1.0 + iv.half_width)));
    }
}

TEST_CASE("interval of a tracker equals interval_at of its statistics") {
    Tracker t(2, 6);
    for (double v : {9.0, 4.0, 5.0, 2.0}) t.update(v);
    SubExpParams se(0.5, 0.1);
    Interval from_tracker = interval(t, se, 0.05, 2.0);
    Interval direct = interval_at(t.rho(), t.iota(), t.lambda(), se, 0.05, 2.0);
    REQUIRE(from_tracker.center == direct.center);
    REQUIRE(from_tracker.half_width == direct.half_width);
    REQUIRE(from_tracker.branch == direct.branch);
}

TEST_CASE("interval degenerates gracefully at iota = 0") {
    Interval sg = interval_at(0.0, 0.0, 5, SubExpParams(1.0, 0.0), 0.05, 1.0);
    REQUIRE(sg.half_width == 0.0);
    Interval se = interval_at(0.0, 0.0, 5, SubExpParams(0.0, 1.0), 0.05, 1.0);
    REQUIRE(se.half_width == 0.0);
    REQUIRE(se.contains(0.0));
}

TEST_CASE("interval branch selection at the parameter extremes") {
    // omega = 0 forces the sub-Gaussian branch.
    Interval sg = interval_at(1.0, 4.0, 3, SubExpParams(2.0, 0.0), 0.05, 1.0);
    REQUIRE(sg.branch == Interval::Branch::SubGaussian);
    // sigma = 0 with omega > 0 forces the sub-exponential branch.
    Interval se = interval_at(1.0, 4.0, 3, SubExpParams(0.0, 2.0), 0.05, 1.0);
    REQUIRE(se.branch == Interval::Branch::SubExponential);
}

TEST_CASE("doubling eta shrinks the half-width by exactly sqrt(2)") {
    for (const SubExpParams& se : {SubExpParams(1.0, 0.0), SubExpParams(0.0, 1.0)}) {
        Interval narrow = interval_at(2.0, 6.25, 4, se, 0.05, 2.0);
        Interval wide = interval_at(2.0, 6.25, 4, se, 0.05, 1.0);
        REQUIRE_THAT(narrow.half_width * std::sqrt(2.0), WithinRel(wide.half_width, 1e-12));
    }
}

TEST_CASE("smaller alpha widens the interval") {
    Interval tight = interval_at(1.0, 2.0, 5, SubExpParams(0.5, 0.2), 0.1, 1.0);
    Interval loose = interval_at(1.0, 2.0, 5, SubExpParams(0.5, 0.2), 0.01, 1.0);
    REQUIRE(loose.half_width > tight.half_width);
}

TEST_CASE("interval_at validates its arguments") {
    SubExpParams se(1.0, 0.0);
    REQUIRE_THROWS_AS(interval_at(1.0, 1.0, 0, se, 0.05, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(interval_at(1.0, -1.0, 1, se, 0.05, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(interval_at(1.0, 1.0, 1, se, 0.0, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(interval_at(1.0, 1.0, 1, se, 1.0, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(interval_at(1.0, 1.0, 1, se, 0.05, 0.5), std::invalid_argument);
}

TEST_CASE("oracle_interval matches the independent reference table") {
    for (const auto& c : oracle::kOracleIntervalCases) {
        Interval iv = oracle_interval(c.m_scale, c.lambda_, SubExpParams(c.sigma, c.omega),
                                      c.alpha);
        REQUIRE(iv.center == 0.0);
        REQUIRE_THAT(iv.half_width, WithinRel(c.half_width, 1e-12));
        REQUIRE((iv.branch == Interval::Branch::SubGaussian) == c.sub_gaussian);
    }
    REQUIRE_THROWS_AS(oracle_interval(-1.0, 1, SubExpParams(1.0, 0.0), 0.05),
                      std::invalid_argument);
}

TEST_CASE("stop_threshold_at matches the independent reference table") {
    for (const auto& c : oracle::kStopThresholdCases) {
        StoppingParams params;
        params.upsilon = c.upsilon;
        params.delta_i = c.delta_i;
        params.delta_ii = c.delta_ii;
        params.xi_i = c.xi_i;
        params.xi_ii = c.xi_ii;
        params.eta = c.eta;
        double thr = stop_threshold_at(c.iota, c.lambda_, params, SubExpParams(c.sigma, c.omega));
        if (std::isinf(c.threshold))
            REQUIRE(std::isinf(thr));
        else
            REQUIRE_THAT(thr, WithinRel(c.threshold, 1e-12));
    }
}

TEST_CASE("stop_threshold_at is infinite when every term drops out") {
    StoppingParams params;
    params.upsilon = 100.0;
    double thr = stop_threshold_at(0.0, 4, params, SubExpParams(1.0, 0.0));
    REQUIRE(std::isinf(thr));  // sigma term needs iota > 0, omega term needs omega > 0
}

TEST_CASE("sub-Gaussian-only precision condition reduces to iota below a constant") {
    // With omega = 0 the threshold is C / sqrt(iota), so sqrt(iota) < threshold
    // is equivalent to iota < C.
    StoppingParams params;
    params.upsilon = 50.0;
    params.delta_i = 0.85;
    params.delta_ii = 1.2;
    params.xi_i = 0.02;
    params.xi_ii = 0.03;
    params.eta = 3.0;
    SubExpParams se(0.7, 0.0);
    const long lambda = 9;
    double logs = 1.0 + std::log(static_cast<double>(lambda));
    auto c_for = [&](double frac, double xi) {
        return lambda * params.eta * frac * frac * params.upsilon * params.upsilon /
               (2.0 * std::log(1.0 / xi) * se.sigma * se.sigma * logs);
    };
    double c_min = std::min(c_for(0.15, params.xi_i), c_for(0.2, params.xi_ii));
    for (double iota : {0.5 * c_min, 0.99 * c_min, 1.01 * c_min, 10.0 * c_min}) {
        bool direct = std::sqrt(iota) < stop_threshold_at(iota, lambda, params, se);
        REQUIRE(direct == (iota < c_min));
    }
}

TEST_CASE("should_stop requires an update, a small mean, and a precise window") {
    SubExpParams se(0.1, 0.0);
    StoppingParams params;
    params.upsilon = 1.0;
    Tracker fresh(1, 4);
    REQUIRE_FALSE(should_stop(fresh, params, se));

    Tracker high(1, 4);
    high.update(2.0);  // rho = 2 >= upsilon
    REQUIRE_FALSE(should_stop(high, params, se));

    Tracker ready(1, 4);
    ready.update(0.01);  // tiny mean, tiny iota, loose threshold
    REQUIRE(should_stop(ready, params, se));
    REQUIRE(ready.rho() < params.upsilon);
    REQUIRE(std::sqrt(ready.iota()) < stop_threshold(ready, params, se));

    // Same statistics but an imprecise window: inflate sigma so the
    // threshold collapses below sqrt(iota).
    SubExpParams vague(2000.0, 0.0);
    REQUIRE_FALSE(should_stop(ready, params, vague));
}

TEST_CASE("iota_vs_m_bound matches the independent reference table") {
    for (const auto& c : oracle::kIotaBoundCases) {
        double b = iota_vs_m_bound(c.delta, c.lambda_, c.sigma);
        REQUIRE_THAT(b, WithinRel(c.bound, 1e-12));
        REQUIRE(b <= 1.0);
        REQUIRE(b > 0.0);
    }
    // More observations can only tighten the bound once it is active.
    double b300 = iota_vs_m_bound(1.0, 300, 0.41285847969927736);
    double b600 = iota_vs_m_bound(1.0, 600, 0.41285847969927736);
    REQUIRE(b600 < b300);
    REQUIRE_THROWS_AS(iota_vs_m_bound(0.0, 5, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(iota_vs_m_bound(1.0, 0, 1.0), std::invalid_argument);
    REQUIRE_THROWS_AS(iota_vs_m_bound(1.0, 5, 0.0), std::invalid_argument);
}

TEST_CASE("StoppingParams validation") {
    auto ok = [] {
        StoppingParams p;
        p.upsilon = 2.0;
        return p;
    };
    REQUIRE_NOTHROW(ok().validate());
    StoppingParams p;

    p = ok();
    p.upsilon = 0.0;
    REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
    p = ok();
    p.delta_i = 1.0;
    REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
    p = ok();
    p.delta_ii = 1.0;
    REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
    p = ok();
    p.xi_i = 0.0;
    REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
    p = ok();
    p.xi_ii = 1.0;
    REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
    p = ok();
    p.eta = 0.5;
    REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
    p = ok();
    p.alpha = 1.0;
    REQUIRE_THROWS_AS(p.validate(), std::invalid_argument);
}
