#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "radeval/core_model.hpp"

// Statistics that compare automated scores with an expert panel.
namespace radeval::agreement {

/// Values aligned to report ids.
struct ScoreVector {
    std::vector<std::string> ids;
    std::vector<double> values;

    static ScoreVector from_values(std::vector<double> values) {
        ScoreVector s;
        s.ids.reserve(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) s.ids.push_back(std::to_string(i));
        s.values = std::move(values);
        return s;
    }

    std::size_t size() const { return values.size(); }
};

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw Error(ErrorCode::Validation, std::string(what) + " contains a non-finite value");
}

}  // namespace detail

struct PairCounts {
    std::int64_t concordant = 0;
    std::int64_t discordant = 0;
    std::int64_t tied_x_only = 0;
    std::int64_t tied_y_only = 0;
};

inline PairCounts count_pairs(std::span<const double> x, std::span<const double> y) {
    PairCounts c;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0 && dy == 0) continue;
            if (dx == 0) ++c.tied_x_only;
            else if (dy == 0) ++c.tied_y_only;
            else if ((dx > 0) == (dy > 0)) ++c.concordant;
            else ++c.discordant;
        }
    }
    return c;
}

/// Tie-adjusted Kendall rank correlation, by direct pair classification.
/// Throws DegenerateInput when every pair is tied in x or in y.
inline double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "tau-b needs equal-length vectors");
    if (x.size() < 2) throw Error(ErrorCode::InvalidArgument, "tau-b needs at least two observations");
    detail::require_finite(x, "x");
    detail::require_finite(y, "y");
    const auto c = count_pairs(x, y);
    const double cd = static_cast<double>(c.concordant + c.discordant);
    const double nx = cd + static_cast<double>(c.tied_y_only);  // pairs not tied in x
    const double ny = cd + static_cast<double>(c.tied_x_only);  // pairs not tied in y
    if (nx == 0 || ny == 0) throw Error(ErrorCode::DegenerateInput, "tau-b is undefined when a vector is constant");
    return static_cast<double>(c.concordant - c.discordant) / std::sqrt(nx * ny);
}

inline double kendall_tau_b(const ScoreVector& x, const ScoreVector& y) {
    if (x.ids != y.ids) throw Error(ErrorCode::Misalignment, "score vectors are aligned to different report ids");
    return kendall_tau_b(std::span<const double>(x.values), std::span<const double>(y.values));
}

// ---------------------------------------------------------------------------
// Leave-one-rater-out mean absolute difference

enum class Statistic { Total, SignificantTotal };

inline double statistic_of(const ErrorReport& e, Statistic s) {
    return s == Statistic::Total ? e.total() : e.significant_total();
}

struct LooResult {
    std::string rater_id;
    double mad_rater = 0.0;
    double mad_judge = 0.0;
    /// Per-report |rater - left-in mean| and |judge - left-in mean|, aligned to the panel's report ids.
    std::vector<double> rater_abs_diff;
    std::vector<double> judge_abs_diff;
};

/// Per-report mean of the panel statistic with rater `left_out` excluded
/// (pass rater_count() to include everyone).
inline std::vector<double> left_in_mean(const RaterPanel& panel, std::size_t left_out, Statistic statistic) {
    std::vector<double> m(panel.report_count(), 0.0);
    const double n = static_cast<double>(panel.rater_count() - (left_out < panel.rater_count() ? 1 : 0));
    for (std::size_t i = 0; i < panel.report_count(); ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < panel.rater_count(); ++k)
            if (k != left_out) sum += statistic_of(panel.at(i, k), statistic);
        m[i] = sum / n;
    }
    return m;
}

inline std::vector<LooResult> loo_mad(const RaterPanel& panel, const ScoreVector& judge, Statistic statistic) {
    if (panel.rater_count() < 2) throw Error(ErrorCode::InvalidArgument, "leave-one-rater-out needs at least 2 raters");
    if (judge.ids != panel.report_ids() || judge.values.size() != judge.ids.size()) {
        throw Error(ErrorCode::Misalignment, "judge scores are not aligned to the panel's report ids");
    }
    detail::require_finite(judge.values, "judge scores");
    const double n = static_cast<double>(panel.report_count());
    std::vector<LooResult> out;
    for (std::size_t r = 0; r < panel.rater_count(); ++r) {
        const auto m = left_in_mean(panel, r, statistic);
        LooResult res;
        res.rater_id = panel.rater_ids()[r];
        for (std::size_t i = 0; i < panel.report_count(); ++i) {
            res.rater_abs_diff.push_back(std::abs(statistic_of(panel.at(i, r), statistic) - m[i]));
            res.judge_abs_diff.push_back(std::abs(judge.values[i] - m[i]));
        }
        res.mad_rater = std::accumulate(res.rater_abs_diff.begin(), res.rater_abs_diff.end(), 0.0) / n;
        res.mad_judge = std::accumulate(res.judge_abs_diff.begin(), res.judge_abs_diff.end(), 0.0) / n;
        out.push_back(std::move(res));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Paired t-test

struct TTestResult {
    double t = 0.0;
    double p_two_sided = 1.0;
    std::size_t df = 0;
};

/// Two-sided p for a Student t statistic: I_{df/(df+t^2)}(df/2, 1/2).
inline double t_two_sided_p(double t, double df) {
    if (std::isinf(t)) return 0.0;
    const double x = df / (df + t * t);
    return boost::math::ibeta(df / 2.0, 0.5, x);
}

/// t on d = a - b with an n-1 sample sd. Zero-variance differences give
/// (t = 0, p = 1) when the mean is 0, else (t = +/-inf, p = 0).
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "paired t-test needs equal-length samples");
    if (a.size() < 2) throw Error(ErrorCode::InvalidArgument, "paired t-test needs at least two pairs");
    detail::require_finite(a, "a");
    detail::require_finite(b, "b");
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    TTestResult r;
    r.df = n - 1;
    if (sd == 0.0) {
        if (mean == 0.0) {
            r.t = 0.0;
            r.p_two_sided = 1.0;
        } else {
            r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
            r.p_two_sided = 0.0;
        }
        return r;
    }
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p_two_sided = t_two_sided_p(r.t, static_cast<double>(r.df));
    return r;
}

}  // namespace radeval::agreement
