#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsemix/normal.hpp"
#include "sparsemix/parallel.hpp"
#include "sparsemix/rng.hpp"
#include "sparsemix/sample.hpp"

namespace sparsemix {

/// Right-continuous empirical CDF, #{X_i <= t} / n.
inline double ecdf_at(const SortedSample& sample, double t)
{
    return static_cast<double>(sample.count_le(t)) / static_cast<double>(sample.size());
}

// ---------------------------------------------------------------------------
// Confidence envelope

struct EnvelopeBound {
    double lower;
    double upper;
};

namespace detail {

// Roots of n (fn - F)^2 = a^2 F (1 - F) for fn <= 1/2. The larger root has no
// cancellation; the smaller one comes from the product of roots fn^2 / (1 + a^2/n).
inline EnvelopeBound envelope_lower_half(double fn, double a2n)
{
    const double scale = 1.0 + a2n;
    const double disc = std::sqrt(a2n * (a2n + 4.0 * fn * (1.0 - fn)));
    const double upper = (2.0 * fn + a2n + disc) / (2.0 * scale);
    const double lower = upper > 0.0 ? fn * fn / (scale * upper) : 0.0;
    return {std::min(lower, fn), std::max(upper, fn)};
}

} // namespace detail

/// Pointwise envelope [F-, F+] of all F with sqrt(n)|fn - F| <= a_n sqrt(F(1 - F)).
inline EnvelopeBound envelope(double fn_t, double a_n, double n)
{
    if (!(fn_t >= 0.0 && fn_t <= 1.0))
        throw std::invalid_argument("envelope: fn_t must lie in [0, 1]");
    if (!(a_n >= 0.0) || !std::isfinite(a_n))
        throw std::invalid_argument("envelope: a_n must be nonnegative and finite");
    if (!(n > 0.0))
        throw std::invalid_argument("envelope: n must be positive");
    const double a2n = a_n * a_n / n;
    if (fn_t <= 0.5)
        return detail::envelope_lower_half(fn_t, a2n);
    const auto mirrored = detail::envelope_lower_half(1.0 - fn_t, a2n);
    return {1.0 - mirrored.upper, 1.0 - mirrored.lower};
}

// ---------------------------------------------------------------------------
// Weighted sup statistics

enum class StatisticKind { WPlus, WPlusPlus, WStar };

inline std::string to_string(StatisticKind k)
{
    switch (k) {
    case StatisticKind::WPlus:
        return "wn_plus";
    case StatisticKind::WPlusPlus:
        return "wn_plus_plus";
    case StatisticKind::WStar:
        return "wn_star";
    }
    return "unknown";
}

inline StatisticKind parse_statistic(const std::string& s)
{
    if (s == "wn_plus")
        return StatisticKind::WPlus;
    if (s == "wn_plus_plus")
        return StatisticKind::WPlusPlus;
    if (s == "wn_star")
        return StatisticKind::WStar;
    throw std::invalid_argument("unknown statistic '" + s +
                                "' (expected wn_plus, wn_plus_plus or wn_star)");
}

inline constexpr double default_c0 = 3.0;

namespace detail {

inline double weighted_gap(double count, double t, double n, bool upper_only)
{
    const double d = count / n - t;
    return (upper_only ? std::max(d, 0.0) : std::abs(d)) / std::sqrt(t * (1.0 - t));
}

} // namespace detail

/// sqrt(n) sup_{t in window} |V_n(t) - t| / sqrt(t (1 - t)) for sorted
/// uniforms `u`; with `upper_only` the numerator is (V_n(t) - t)_+.
///
/// Exact: on each flat piece of V_n the weighted gap is decreasing then
/// increasing, so the sup is attained at a window endpoint or at one of the
/// one-sided limits at a jump. A bound lo <= 0 (hi >= 1) means the window is
/// open at 0 (1); there the boundary piece is monotone towards the nearest
/// jump and no endpoint is evaluated.
inline double normalized_process_sup(std::span<const double> u, double lo, double hi,
                                     bool upper_only = false)
{
    const double n = static_cast<double>(u.size());
    const bool open_lo = lo <= 0.0;
    const bool open_hi = hi >= 1.0;
    if (!open_lo && !open_hi && lo > hi)
        throw std::invalid_argument("normalized_process_sup: empty window");

    auto count_le = [&](double t) {
        return static_cast<double>(std::upper_bound(u.begin(), u.end(), t) - u.begin());
    };

    double best = 0.0;
    if (!open_lo)
        best = std::max(best, detail::weighted_gap(count_le(lo), lo, n, upper_only));
    if (!open_hi)
        best = std::max(best, detail::weighted_gap(count_le(hi), hi, n, upper_only));

    // First index with u > lo (or u > 0 when open).
    std::size_t i = open_lo ? 0
                            : static_cast<std::size_t>(
                                  std::upper_bound(u.begin(), u.end(), lo) - u.begin());
    for (; i < u.size(); ++i) {
        const double t = u[i];
        if (!open_hi && t > hi)
            break;
        if (!(t > 0.0 && t < 1.0))
            continue;
        const double right = static_cast<double>(i + 1);
        const double left = static_cast<double>(i);
        best = std::max(best, detail::weighted_gap(right, t, n, upper_only));
        best = std::max(best, detail::weighted_gap(left, t, n, upper_only));
    }
    return std::sqrt(n) * best;
}

/// n sorted U(0,1) draws via normalized exponential spacings, O(n).
inline void sorted_uniforms(Engine& rng, std::size_t n, std::vector<double>& out)
{
    out.resize(n);
    std::exponential_distribution<double> e(1.0);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += e(rng);
        out[i] = s;
    }
    s += e(rng);
    const double below_one = std::nextafter(1.0, 0.0);
    for (auto& v : out)
        v = std::min(v / s, below_one);
}

/// Upper end of every statistic's window, Phi(sqrt(2 ln n)).
inline double window_upper(std::size_t n)
{
    return std_normal_cdf(std::sqrt(2.0 * std::log(static_cast<double>(n))));
}

/// Window of W++ for one uniform sample:
/// [V_n(1/2) - sqrt(c0 ln n / n), Phi(sqrt(2 ln n))], lower end clipped to 1/(2n).
inline std::pair<double, double> wpp_window(std::span<const double> u, double c0)
{
    const double n = static_cast<double>(u.size());
    const double below_half =
        static_cast<double>(std::upper_bound(u.begin(), u.end(), 0.5) - u.begin()) / n;
    double lo = below_half - std::sqrt(c0 * std::log(n) / n);
    if (lo <= 0.0)
        lo = 0.5 / n;
    return {lo, window_upper(u.size())};
}

/// One realization of the chosen statistic from sorted uniforms.
inline double sup_statistic(StatisticKind kind, std::span<const double> u, double c0 = default_c0)
{
    switch (kind) {
    case StatisticKind::WPlus:
        return normalized_process_sup(u, 0.5, window_upper(u.size()));
    case StatisticKind::WPlusPlus: {
        const auto [lo, hi] = wpp_window(u, c0);
        if (lo > hi)
            throw std::runtime_error("sup_statistic: W++ window is empty for this sample");
        return normalized_process_sup(u, lo, hi);
    }
    case StatisticKind::WStar:
        // Upper deviations only, over the open unit interval.
        return normalized_process_sup(u, 0.0, 1.0, true);
    }
    throw std::invalid_argument("sup_statistic: unknown kind");
}

/// `reps` independent realizations; replicate i uses stream (seed, i), so the
/// output is identical for any worker count.
inline std::vector<double> simulate_sup_statistic(StatisticKind kind, std::size_t n, double c0,
                                                  std::size_t reps, std::uint64_t seed,
                                                  unsigned workers = 0)
{
    if (n == 0)
        throw std::invalid_argument("simulate_sup_statistic: n must be positive");
    if (reps == 0)
        throw std::invalid_argument("simulate_sup_statistic: reps must be positive");
    if (kind == StatisticKind::WPlusPlus && !(c0 > 0.0))
        throw std::invalid_argument("simulate_sup_statistic: c0 must be positive");

    std::vector<double> out(reps);
    parallel_for(reps, workers, [&](std::size_t i) {
        Engine rng = make_engine(seed, i);
        thread_local std::vector<double> u;
        sorted_uniforms(rng, n, u);
        out[i] = sup_statistic(kind, u, c0);
    });
    return out;
}

/// Y_n = sqrt(n) max_{0 <= t <= sqrt(2 ln n)} |F_n(t) - F(t)| / sqrt(F(t)(1 - F(t))),
/// evaluated at both window ends and both one-sided limits at every sample
/// point inside the window.
inline double y_n_statistic(const SortedSample& sample, const std::function<double(double)>& true_cdf)
{
    const auto x = sample.values();
    const double n = static_cast<double>(x.size());
    const double top = std::sqrt(2.0 * std::log(n));

    auto term = [&](double count, double t) {
        const double f = true_cdf(t);
        if (!(f > 0.0 && f < 1.0))
            throw std::invalid_argument("y_n_statistic: true CDF must lie strictly inside (0, 1) on the window");
        return std::abs(count / n - f) / std::sqrt(f * (1.0 - f));
    };

    double best = std::max(term(static_cast<double>(sample.count_le(0.0)), 0.0),
                           term(static_cast<double>(sample.count_le(top)), top));
    std::size_t i = sample.count_le(0.0);
    for (; i < x.size() && x[i] <= top; ++i) {
        best = std::max(best, term(static_cast<double>(i + 1), x[i]));
        best = std::max(best, term(static_cast<double>(i), x[i]));
    }
    return std::sqrt(n) * best;
}

// ---------------------------------------------------------------------------
// Critical values

/// The ceil((1 - alpha) R)-th order statistic of R simulated values.
inline double critical_value(std::vector<double> values, double alpha)
{
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("critical_value: alpha must lie in (0, 1)");
    if (values.empty())
        throw std::invalid_argument("critical_value: no simulated values");
    const double R = static_cast<double>(values.size());
    // Guard against (1 - alpha) R landing a hair above an integer.
    auto k = static_cast<std::size_t>(std::ceil((1.0 - alpha) * R - 1e-9));
    k = std::clamp<std::size_t>(k, 1, values.size());
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1), values.end());
    return values[k - 1];
}

struct QuantileEntry {
    double alpha;
    double a;
};

/// Persisted Monte Carlo quantiles of one sup statistic at one n.
struct CriticalValueTable {
    StatisticKind statistic = StatisticKind::WPlus;
    std::uint64_t n = 0;
    std::optional<double> c0;
    std::uint64_t reps = 0;
    std::uint64_t seed = 0;
    std::vector<QuantileEntry> quantiles;

    /// Critical value for an alpha present in the table.
    double at(double alpha) const
    {
        for (const auto& q : quantiles)
            if (std::abs(q.alpha - alpha) <= 1e-12)
                return q.a;
        throw std::out_of_range("critical value table (" + to_string(statistic) + ", n=" +
                                std::to_string(n) + ") has no entry for alpha=" +
                                std::to_string(alpha));
    }
};

inline double critical_value(const CriticalValueTable& table, double alpha)
{
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("critical_value: alpha must lie in (0, 1)");
    return table.at(alpha);
}

inline CriticalValueTable make_table(StatisticKind kind, std::uint64_t n, double c0,
                                     std::uint64_t seed, const std::vector<double>& values,
                                     std::vector<double> alphas)
{
    std::sort(alphas.begin(), alphas.end());
    CriticalValueTable t;
    t.statistic = kind;
    t.n = n;
    if (kind == StatisticKind::WPlusPlus)
        t.c0 = c0;
    t.reps = values.size();
    t.seed = seed;
    for (double a : alphas)
        t.quantiles.push_back({a, critical_value(values, a)});
    return t;
}

inline nlohmann::json to_json(const CriticalValueTable& t)
{
    nlohmann::json j;
    j["statistic"] = to_string(t.statistic);
    j["n"] = t.n;
    j["c0"] = t.c0 ? nlohmann::json(*t.c0) : nlohmann::json(nullptr);
    j["reps"] = t.reps;
    j["seed"] = t.seed;
    auto& q = j["quantiles"] = nlohmann::json::array();
    for (const auto& e : t.quantiles)
        q.push_back({{"alpha", e.alpha}, {"a", e.a}});
    return j;
}

inline CriticalValueTable table_from_json(const nlohmann::json& j)
{
    CriticalValueTable t;
    try {
        t.statistic = parse_statistic(j.at("statistic").get<std::string>());
        t.n = j.at("n").get<std::uint64_t>();
        if (j.contains("c0") && !j.at("c0").is_null())
            t.c0 = j.at("c0").get<double>();
        t.reps = j.at("reps").get<std::uint64_t>();
        t.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& e : j.at("quantiles"))
            t.quantiles.push_back({e.at("alpha").get<double>(), e.at("a").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed critical value table: ") + e.what());
    }
    if (t.n == 0 || t.reps == 0)
        throw std::runtime_error("malformed critical value table: n and reps must be positive");
    if (t.statistic == StatisticKind::WPlusPlus && !t.c0)
        t.c0 = default_c0;
    std::sort(t.quantiles.begin(), t.quantiles.end(),
              [](const auto& a, const auto& b) { return a.alpha < b.alpha; });
    for (std::size_t i = 1; i < t.quantiles.size(); ++i)
        if (t.quantiles[i].a > t.quantiles[i - 1].a)
            throw std::runtime_error("malformed critical value table: quantiles must be nonincreasing in alpha");
    return t;
}

inline void write_table(const CriticalValueTable& t, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << to_json(t).dump(2) << '\n';
    if (!out)
        throw std::runtime_error("failed writing '" + path + "'");
}

inline CriticalValueTable read_table(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open critical value table '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("'" + path + "' is not valid JSON: " + e.what());
    }
    return table_from_json(j);
}

/// Reads a table and rejects it unless it was computed for exactly n.
inline CriticalValueTable read_table(const std::string& path, std::uint64_t expected_n)
{
    auto t = read_table(path);
    if (t.n != expected_n)
        throw std::runtime_error("critical value table '" + path + "' was computed for n=" +
                                 std::to_string(t.n) + ", requested n=" +
                                 std::to_string(expected_n));
    return t;
}

} // namespace sparsemix
