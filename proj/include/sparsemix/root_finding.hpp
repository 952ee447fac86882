#pragma once

#include <cmath>
#include <optional>

namespace sparsemix {

struct BisectionResult {
    double root;
    double residual;
    int iterations;
};

/// Solves f(x) == target for f strictly decreasing on [lo, hi], given
/// f(lo) > target > f(hi). Halves the bracket until it stops shrinking in
/// floating point, the residual vanishes, or max_iter is reached.
template <class Fn>
BisectionResult bisect_decreasing(Fn&& f, double target, double lo, double hi, int max_iter = 200)
{
    double mid = 0.5 * (lo + hi);
    double fm = f(mid);
    int it = 0;
    for (; it < max_iter; ++it) {
        mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi)
            break;
        fm = f(mid);
        if (fm == target)
            break;
        if (fm > target)
            lo = mid;
        else
            hi = mid;
    }
    return {mid, fm - target, it};
}

} // namespace sparsemix
