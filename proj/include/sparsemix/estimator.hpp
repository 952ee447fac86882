#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sparsemix/empirical.hpp"
#include "sparsemix/mixture.hpp"
#include "sparsemix/normal.hpp"
#include "sparsemix/root_finding.hpp"
#include "sparsemix/sample.hpp"

namespace sparsemix {

// ---------------------------------------------------------------------------
// The ratio D and its inversion

/// D(mu; tau, tau') = [Phi(tau) - Phi(tau - mu)] / [Phi(tau') - Phi(tau' - mu)].
/// Strictly decreasing in mu > 0, from phi(tau)/phi(tau') down to Phi(tau)/Phi(tau').
inline double d_ratio(double mu, double tau, double tau_prime)
{
    if (!(mu > 0.0))
        throw std::invalid_argument("d_ratio: mu must be positive");
    if (!(tau < tau_prime))
        throw std::invalid_argument("d_ratio: requires tau < tau_prime");
    return std_normal_interval(tau - mu, tau) / std_normal_interval(tau_prime - mu, tau_prime);
}

/// lim_{mu -> 0+} D = phi(tau) / phi(tau').
inline double d_ratio_sup(double tau, double tau_prime)
{
    return std::exp(0.5 * (tau_prime * tau_prime - tau * tau));
}

/// lim_{mu -> inf} D = Phi(tau) / Phi(tau').
inline double d_ratio_inf(double tau, double tau_prime)
{
    return std_normal_cdf(tau) / std_normal_cdf(tau_prime);
}

inline constexpr double solve_mu_lower = 1e-8;

/// The unique mu > 0 with D(mu; tau, tau') == target, or nothing when target
/// lies outside the open range of D.
inline std::optional<double> solve_mu(double target, double tau, double tau_prime)
{
    if (!(tau < tau_prime))
        throw std::invalid_argument("solve_mu: requires tau < tau_prime");
    if (!(target > d_ratio_inf(tau, tau_prime) && target < d_ratio_sup(tau, tau_prime)))
        return std::nullopt;

    auto D = [&](double mu) { return d_ratio(mu, tau, tau_prime); };
    double lo = solve_mu_lower;
    if (D(lo) <= target)
        return lo;
    double hi = 1.0;
    for (int k = 0; k < 64 && D(hi) >= target; ++k) {
        lo = hi;
        hi *= 2.0;
    }
    if (D(hi) >= target)
        return std::nullopt; // indistinguishable from the mu -> inf limit
    return bisect_decreasing(D, target, lo, hi).root;
}

struct TwoPoint {
    double epsilon;
    double mu;
};

/// The two-point mixture through (tau, Phi(tau) - gap_tau) and
/// (tau', Phi(tau') - gap_tau_prime). Gaps Phi(t) - F(t) are taken directly
/// so sparse mixtures keep full relative precision.
inline std::optional<TwoPoint> two_point_through_gaps(double tau, double gap_tau,
                                                      double tau_prime, double gap_tau_prime)
{
    if (!(tau < tau_prime))
        throw std::invalid_argument("two_point_through: requires tau < tau_prime");
    if (!(gap_tau > 0.0 && gap_tau_prime > 0.0))
        return std::nullopt;
    const auto mu = solve_mu(gap_tau / gap_tau_prime, tau, tau_prime);
    if (!mu)
        return std::nullopt;
    return TwoPoint{gap_tau / std_normal_interval(tau - *mu, tau), *mu};
}

/// The sparsest one-sided mixture through (tau, a) and (tau', b): a two-point
/// mixture (eps*, mu*). For any one-sided mixture through the same points,
/// eps* <= eps.
inline std::optional<TwoPoint> two_point_through(double tau, double a, double tau_prime, double b)
{
    if (!(tau < tau_prime))
        throw std::invalid_argument("two_point_through: requires tau < tau_prime");
    const double pa = std_normal_cdf(tau);
    const double pb = std_normal_cdf(tau_prime);
    if (!(a > 0.0 && a < pa) || !(b > 0.0 && b < pb))
        throw std::invalid_argument("two_point_through: requires 0 < a < Phi(tau) and 0 < b < Phi(tau')");
    return two_point_through_gaps(tau, pa - a, tau_prime, pb - b);
}

// ---------------------------------------------------------------------------
// Grid and the CJL estimator

struct Grid {
    double n;
    double spacing;
    std::vector<double> points;
};

/// t_j = (j - 1) / sqrt(2 ln n), j = 1..floor(2 ln n) + 1.
inline Grid build_grid(double n)
{
    if (!(n >= 2.0) || !std::isfinite(n))
        throw std::invalid_argument("build_grid: n must be at least 2");
    const double two_log_n = 2.0 * std::log(n);
    // 2 ln n is integral for n = e^k; don't lose the last point to rounding.
    const auto count = static_cast<std::size_t>(std::floor(two_log_n + 1e-9)) + 1;
    Grid g{n, 1.0 / std::sqrt(two_log_n), {}};
    g.points.reserve(count);
    for (std::size_t j = 0; j < count; ++j)
        g.points.push_back(static_cast<double>(j) * g.spacing);
    return g;
}

struct PairEstimate {
    std::size_t j;                 ///< 0-based index of the left grid point
    std::optional<double> mu_hat;  ///< +inf below the range of D; empty when unsolved
    double eps_hat;
};

struct EstimateResult {
    double eps_hat = 0.0;
    std::optional<std::size_t> winner;
    std::vector<PairEstimate> pairs;
    bool clamped = false;
};

/// Treatment of a pair whose ratio lies at or below inf D = Phi(t_j)/Phi(t_{j+1}).
/// Extend takes mu_hat = +inf, so eps_j = (Phi(t_j) - F+(t_j)) / Phi(t_j);
/// Zero sets eps_j = 0. A ratio at or above sup D always gives 0.
enum class BelowRange { Extend, Zero };

/// Lower bound max_j eps_j over adjacent grid pairs. Each pair inverts D with
/// the envelope pushed towards Phi: F+ at t_j and F- at t_{j+1}.
inline EstimateResult cjl_estimate(const SortedSample& sample, double a_n, BelowRange rule = BelowRange::Extend)
{
    if (!(a_n >= 0.0) || !std::isfinite(a_n))
        throw std::invalid_argument("cjl_estimate: a_n must be nonnegative and finite");
    const double n = static_cast<double>(sample.size());
    if (n < 2.0)
        throw std::invalid_argument("cjl_estimate: at least two observations are required");
    const Grid grid = build_grid(n);

    EstimateResult result;
    result.pairs.reserve(grid.points.size() - 1);
    for (std::size_t j = 0; j + 1 < grid.points.size(); ++j) {
        const double t = grid.points[j];
        const double tp = grid.points[j + 1];
        const double num = std_normal_cdf(t) - envelope(ecdf_at(sample, t), a_n, n).upper;
        const double den = std_normal_cdf(tp) - envelope(ecdf_at(sample, tp), a_n, n).lower;

        PairEstimate pe{j, std::nullopt, 0.0};
        if (num > 0.0 && den > 0.0) {
            const double target = num / den;
            pe.mu_hat = solve_mu(target, t, tp);
            if (pe.mu_hat) {
                pe.eps_hat = num / std_normal_interval(t - *pe.mu_hat, t);
            } else if (rule == BelowRange::Extend && target < d_ratio_sup(t, tp)) {
                pe.mu_hat = std::numeric_limits<double>::infinity();
                pe.eps_hat = num / std_normal_cdf(t);
            }
        }
        if (pe.eps_hat > result.eps_hat) {
            result.eps_hat = pe.eps_hat;
            result.winner = j;
        }
        result.pairs.push_back(pe);
    }
    if (result.eps_hat > 1.0) {
        result.eps_hat = 1.0;
        result.clamped = true;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Meinshausen-Rice lower bounds

/// One-sided p-values 1 - Phi(X_i) in increasing order, together with their
/// complements Phi(X_i) so neither end of (0, 1) loses precision.
struct PValues {
    std::vector<double> p;
    std::vector<double> q;
};

inline PValues p_values(const SortedSample& sample)
{
    const auto x = sample.values();
    PValues out;
    out.p.reserve(x.size());
    out.q.reserve(x.size());
    for (auto it = x.rbegin(); it != x.rend(); ++it) {
        out.p.push_back(std_normal_sf(*it));
        out.q.push_back(std_normal_cdf(*it));
    }
    return out;
}

namespace detail {

// sup over t of g(F_n(t), t), checked at both one-sided limits of every jump.
// On each flat piece the MR ratio is decreasing and the plus form is convex,
// so these candidates (plus t -> 0+, where both forms are 0) cover the sup.
template <class Term>
double mr_sup(std::span<const double> p, std::span<const double> q, Term&& term)
{
    const double n = static_cast<double>(p.size());
    double best = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] > 0.0 && q[i] > 0.0))
            continue;
        best = std::max(best, term(static_cast<double>(i + 1) / n, p[i], q[i]));
        best = std::max(best, term(static_cast<double>(i) / n, p[i], q[i]));
    }
    return std::clamp(best, 0.0, 1.0);
}

inline double mr_bound(std::span<const double> p, std::span<const double> q, double a_star, bool plus)
{
    if (!(a_star >= 0.0) || !std::isfinite(a_star))
        throw std::invalid_argument("mr_lower_bound: a_star must be nonnegative and finite");
    const double k = a_star / std::sqrt(static_cast<double>(p.size()));
    if (plus)
        return mr_sup(p, q, [k](double c, double t, double s) { return c - t - k * std::sqrt(t * s); });
    return mr_sup(p, q, [k](double c, double t, double s) {
        // (c - t - k sqrt(t s)) / s with s = 1 - t; c - t == (c - 1) + s.
        return (c - 1.0 + s - k * std::sqrt(t * s)) / s;
    });
}

inline std::vector<double> complements(std::span<const double> u)
{
    std::vector<double> q(u.size());
    std::transform(u.begin(), u.end(), q.begin(), [](double v) { return 1.0 - v; });
    return q;
}

inline void require_sorted_uniforms(std::span<const double> u)
{
    if (u.empty())
        throw std::invalid_argument("mr_lower_bound: no observations");
    if (!std::is_sorted(u.begin(), u.end()) || u.front() < 0.0 || u.back() > 1.0)
        throw std::invalid_argument("mr_lower_bound: p-values must be sorted and lie in [0, 1]");
}

} // namespace detail

/// sup_{0<t<1} [F_n(t) - t - (a*/sqrt n) sqrt(t(1-t))] / (1 - t) over sorted p-values.
inline double mr_lower_bound_uniform(std::span<const double> sorted_p, double a_star)
{
    detail::require_sorted_uniforms(sorted_p);
    const auto q = detail::complements(sorted_p);
    return detail::mr_bound(sorted_p, q, a_star, false);
}

/// The same sup without the 1 / (1 - t) factor; thin-tailed and never larger.
inline double mr_plus_lower_bound_uniform(std::span<const double> sorted_p, double a_star)
{
    detail::require_sorted_uniforms(sorted_p);
    const auto q = detail::complements(sorted_p);
    return detail::mr_bound(sorted_p, q, a_star, true);
}

inline double mr_lower_bound(const PValues& pv, double a_star)
{
    return detail::mr_bound(pv.p, pv.q, a_star, false);
}

inline double mr_plus_lower_bound(const PValues& pv, double a_star)
{
    return detail::mr_bound(pv.p, pv.q, a_star, true);
}

/// z-score versions: p-values are the upper tails 1 - Phi(X_i).
inline double mr_lower_bound(const SortedSample& sample, double a_star)
{
    return mr_lower_bound(p_values(sample), a_star);
}

inline double mr_plus_lower_bound(const SortedSample& sample, double a_star)
{
    return mr_plus_lower_bound(p_values(sample), a_star);
}

// ---------------------------------------------------------------------------
// Deterministic approximations (F_n replaced by F)

/// [Phi(t) - F(t) - (a_n / sqrt n) sqrt(F(1 - F))] / [Phi(t) - Phi(t - mu)].
inline double oracle_cjl_approx(double t, const std::function<double(double)>& true_cdf, double mu,
                                double a_n, double n)
{
    const double den = std_normal_interval(t - mu, t);
    if (!(den > 0.0))
        throw std::invalid_argument("oracle_cjl_approx: nonpositive denominator");
    const double f = true_cdf(t);
    return (std_normal_cdf(t) - f - a_n / std::sqrt(n) * std::sqrt(f * (1.0 - f))) / den;
}

/// Same approximation with the gap and tail taken from a known mixture.
inline double oracle_cjl_approx(double t, const Mixture& truth, double mu, double a_n, double n)
{
    const double den = std_normal_interval(t - mu, t);
    if (!(den > 0.0))
        throw std::invalid_argument("oracle_cjl_approx: nonpositive denominator");
    const double f = mixture_cdf(truth, t);
    const double s = mixture_sf(truth, t);
    return (null_gap(truth, t) - a_n / std::sqrt(n) * std::sqrt(f * s)) / den;
}

/// [Phi(t) - F(t) - (a* / sqrt n) sqrt(Phi(1 - Phi))] / Phi(t): the MR bound at
/// the p-value threshold 1 - Phi(t) with F_n replaced by F.
inline double oracle_mr_approx(double t, const std::function<double(double)>& true_cdf,
                               double a_star, double n)
{
    const double pt = std_normal_cdf(t);
    if (!(pt > 0.0))
        throw std::invalid_argument("oracle_mr_approx: nonpositive denominator");
    return (pt - true_cdf(t) - a_star / std::sqrt(n) * std::sqrt(pt * std_normal_sf(t))) / pt;
}

inline double oracle_mr_approx(double t, const Mixture& truth, double a_star, double n)
{
    const double pt = std_normal_cdf(t);
    if (!(pt > 0.0))
        throw std::invalid_argument("oracle_mr_approx: nonpositive denominator");
    return (null_gap(truth, t) - a_star / std::sqrt(n) * std::sqrt(pt * std_normal_sf(t))) / pt;
}

} // namespace sparsemix
