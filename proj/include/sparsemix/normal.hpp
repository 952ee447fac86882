#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace sparsemix {

namespace detail {

inline void require_finite(double x, const char* what)
{
    if (!std::isfinite(x))
        throw std::invalid_argument(std::string(what) + ": argument must be finite");
}

} // namespace detail

inline constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934381868;

/// Standard normal density.
inline double std_normal_pdf(double x)
{
    detail::require_finite(x, "std_normal_pdf");
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

/// Standard normal CDF.
///
/// Both tails go through erfc so neither Phi(x) nor 1 - Phi(x) is ever formed
/// by subtraction from one.
inline double std_normal_cdf(double x)
{
    detail::require_finite(x, "std_normal_cdf");
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// Upper tail 1 - Phi(x), evaluated directly.
inline double std_normal_sf(double x)
{
    detail::require_finite(x, "std_normal_sf");
    return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

/// Phi(b) - Phi(a) for a <= b without cancellation in either tail.
inline double std_normal_interval(double a, double b)
{
    if (a >= 0.0)
        return std_normal_sf(a) - std_normal_sf(b);
    if (b <= 0.0)
        return std_normal_cdf(b) - std_normal_cdf(a);
    return 1.0 - std_normal_cdf(a) - std_normal_sf(b);
}

namespace detail {

// Acklam's rational approximation, relative error about 1.15e-9.
inline double quantile_initial(double p)
{
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

} // namespace detail

/// Inverse of std_normal_cdf on (0, 1).
///
/// Rational starting point, then Newton steps on whichever tail is smaller,
/// guarded by a bracket that shrinks with every iterate.
inline double std_normal_quantile(double p)
{
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("std_normal_quantile: p must lie in the open interval (0, 1)");
    if (p == 0.5)
        return 0.0;

    // Work on the lower tail; mirror at the end.
    const bool upper = p > 0.5;
    const double tail = upper ? 1.0 - p : p;
    double x = detail::quantile_initial(tail);
    double lo = -40.0;
    double hi = 0.0;
    for (int it = 0; it < 50; ++it) {
        const double f = std_normal_cdf(x) - tail;
        if (f == 0.0)
            break;
        if (f > 0.0)
            hi = std::min(hi, x);
        else
            lo = std::max(lo, x);
        const double dens = std_normal_pdf(x);
        double next = x - f / dens;
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x))) {
            x = next;
            break;
        }
        x = next;
    }
    return upper ? -x : x;
}

} // namespace sparsemix
