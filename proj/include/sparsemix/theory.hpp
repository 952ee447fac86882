#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "sparsemix/mixture.hpp"
#include "sparsemix/normal.hpp"

namespace sparsemix {

/// Which of the three (beta, r) regimes a rate comes from.
enum class Regime { BetaGe3r, Middle, BetaLeR };

inline std::string to_string(Regime r)
{
    switch (r) {
    case Regime::BetaGe3r:
        return "beta_ge_3r";
    case Regime::Middle:
        return "middle";
    case Regime::BetaLeR:
        return "beta_le_r";
    }
    return "unknown";
}

/// A rate n^exponent (ln n)^log_power (ln ln n)^loglog_power, constants omitted.
struct RateRegime {
    Regime regime;
    double exponent;
    double log_power;
    double loglog_power = 0.0;

    double value(double n) const
    {
        const double ln = std::log(n);
        return std::pow(n, exponent) * std::pow(ln, log_power) *
               (loglog_power != 0.0 ? std::pow(std::log(ln), loglog_power) : 1.0);
    }
};

/// Ties go to the outer branches: beta == 3r to BetaGe3r, beta == r to BetaLeR.
inline Regime regime_of(double beta, double r)
{
    if (beta >= 3.0 * r - boundary_tolerance)
        return Regime::BetaGe3r;
    if (beta > r + boundary_tolerance)
        return Regime::Middle;
    return Regime::BetaLeR;
}

namespace detail {

inline void require_detectable(const SparseCalibration& cal, const char* who)
{
    if (!is_detectable(cal))
        throw std::invalid_argument(std::string(who) + ": calibration is not detectable");
}

inline double mse_exponent(Regime g, double beta, double r)
{
    switch (g) {
    case Regime::BetaGe3r:
        return -1.0 - 2.0 * r + 2.0 * beta;
    case Regime::Middle:
        return -1.0 + (beta + r) * (beta + r) / (4.0 * r);
    case Regime::BetaLeR:
        return -1.0 + beta;
    }
    return 0.0;
}

inline RateRegime pick(Regime g, double exponent, const double (&log_powers)[3], double loglog = 0.0)
{
    return {g, exponent, log_powers[static_cast<int>(g)], loglog};
}

} // namespace detail

/// Upper bound on E(eps_hat / eps - 1)^2 for a_n = 4 sqrt(2 pi) (ln n)^{3/2}.
inline RateRegime mse_upper_rate(const SparseCalibration& cal)
{
    detail::require_detectable(cal, "mse_upper_rate");
    const Regime g = regime_of(cal.beta, cal.r);
    return detail::pick(g, detail::mse_exponent(g, cal.beta, cal.r), {5.5, 5.5, 4.0});
}

/// Minimax lower bound on the same risk.
inline RateRegime mse_lower_rate(const SparseCalibration& cal)
{
    detail::require_detectable(cal, "mse_lower_rate");
    const Regime g = regime_of(cal.beta, cal.r);
    return detail::pick(g, detail::mse_exponent(g, cal.beta, cal.r), {1.0, 2.5, 0.0});
}

struct CiDeficitRates {
    RateRegime lower;
    RateRegime upper;
};

/// Rates for the plus-risk E(1 - eps_hat / eps)_+ of a level lower confidence
/// limit: the minimax lower bound, and the bound attained by the grid estimator.
inline CiDeficitRates ci_deficit_rates(const SparseCalibration& cal)
{
    detail::require_detectable(cal, "ci_deficit_rates");
    const Regime g = regime_of(cal.beta, cal.r);
    const double e = 0.5 * detail::mse_exponent(g, cal.beta, cal.r);
    return {detail::pick(g, e, {0.5, 1.25, 0.0}), detail::pick(g, e, {1.25, 1.25, 0.0}, 0.5)};
}

/// Leading term of F(t*)(1 - F(t*)) / (Phi(t*) - F(t*))^2 at the most
/// informative threshold t* = sqrt(2 q ln n).
///
/// The middle form covers r < beta <= 3r, with constant
/// beta (beta - r) / (beta + r) sqrt(4 pi ln n / r).
inline double tail_ratio_leading(const SparseCalibration& cal)
{
    detail::require_detectable(cal, "tail_ratio_leading");
    const double b = cal.beta;
    const double r = cal.r;
    const double ln = cal.log_n();
    if (b > 3.0 * r)
        return std::sqrt(std::numbers::pi * r * ln) * std::pow(cal.n, 2.0 * b - 2.0 * r);
    if (b > r)
        return b * (b - r) / (b + r) * std::sqrt(4.0 * std::numbers::pi * ln / r) *
               std::pow(cal.n, (b + r) * (b + r) / (4.0 * r));
    return 2.0 * std::pow(cal.n, b);
}

/// The same ratio evaluated exactly for a known mixture at threshold t.
inline double ratio_numeric(const Mixture& truth, double t)
{
    const double gap = null_gap(truth, t);
    if (!(gap > 0.0))
        throw std::invalid_argument("ratio_numeric: requires Phi(t) > F(t)");
    const double f = mixture_cdf(truth, t);
    const double s = mixture_sf(truth, t);
    if (!(f > 0.0 && s > 0.0))
        throw std::invalid_argument("ratio_numeric: requires 0 < F(t) < 1");
    return f * s / (gap * gap);
}

} // namespace sparsemix
