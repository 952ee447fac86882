#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sparsemix/normal.hpp"
#include "sparsemix/rng.hpp"
#include "sparsemix/sample.hpp"

namespace sparsemix {

/// (1 - epsilon) N(0, 1) + epsilon N(mu, 1).
struct TwoPointMixture {
    double epsilon;
    double mu;

    TwoPointMixture(double epsilon_, double mu_) : epsilon(epsilon_), mu(mu_)
    {
        if (!(epsilon >= 0.0 && epsilon <= 1.0))
            throw std::invalid_argument("TwoPointMixture: epsilon must lie in [0, 1]");
        if (!(mu > 0.0) || !std::isfinite(mu))
            throw std::invalid_argument("TwoPointMixture: mu must be positive and finite");
    }
};

struct Atom {
    double mu;
    double weight;
};

/// (1 - epsilon) N(0, 1) + epsilon * sum_k weight_k N(mu_k, 1) with every mu_k > 0.
struct DiscreteOneSidedMixture {
    double epsilon;
    std::vector<Atom> atoms;

    DiscreteOneSidedMixture(double epsilon_, std::vector<Atom> atoms_)
        : epsilon(epsilon_), atoms(std::move(atoms_))
    {
        if (!(epsilon >= 0.0 && epsilon <= 1.0))
            throw std::invalid_argument("DiscreteOneSidedMixture: epsilon must lie in [0, 1]");
        if (atoms.empty())
            throw std::invalid_argument("DiscreteOneSidedMixture: at least one atom is required");
        double total = 0.0;
        for (const auto& a : atoms) {
            if (!(a.mu > 0.0) || !std::isfinite(a.mu))
                throw std::invalid_argument("DiscreteOneSidedMixture: atom means must be positive");
            if (!(a.weight > 0.0))
                throw std::invalid_argument("DiscreteOneSidedMixture: atom weights must be positive");
            total += a.weight;
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw std::invalid_argument("DiscreteOneSidedMixture: atom weights must sum to 1");
    }
};

using Mixture = std::variant<TwoPointMixture, DiscreteOneSidedMixture>;

/// The sparse calibration eps = n^-beta, mu = sqrt(2 r ln n).
struct SparseCalibration {
    double n;
    double beta;
    double r;

    SparseCalibration(double n_, double beta_, double r_) : n(n_), beta(beta_), r(r_)
    {
        if (!(n > 1.0) || !std::isfinite(n))
            throw std::invalid_argument("SparseCalibration: n must exceed 1");
        if (!(beta > 0.5 && beta < 1.0))
            throw std::invalid_argument("SparseCalibration: beta must lie in (1/2, 1)");
        if (!(r > 0.0 && r < 1.0))
            throw std::invalid_argument("SparseCalibration: r must lie in (0, 1)");
    }

    double log_n() const { return std::log(n); }
};

inline TwoPointMixture calibrate(const SparseCalibration& cal)
{
    return TwoPointMixture(std::pow(cal.n, -cal.beta), std::sqrt(2.0 * cal.r * cal.log_n()));
}

namespace detail {

template <class Fn>
double over_components(const TwoPointMixture& m, Fn&& fn)
{
    return fn(m.mu);
}

template <class Fn>
double over_components(const DiscreteOneSidedMixture& m, Fn&& fn)
{
    double s = 0.0;
    for (const auto& a : m.atoms)
        s += a.weight * fn(a.mu);
    return s;
}

} // namespace detail

/// F(t) = (1 - eps) Phi(t) + eps G(t).
inline double mixture_cdf(const Mixture& model, double t)
{
    return std::visit(
        [t](const auto& m) {
            const double g =
                detail::over_components(m, [t](double mu) { return std_normal_cdf(t - mu); });
            return (1.0 - m.epsilon) * std_normal_cdf(t) + m.epsilon * g;
        },
        model);
}

/// 1 - F(t), evaluated from upper tails.
inline double mixture_sf(const Mixture& model, double t)
{
    return std::visit(
        [t](const auto& m) {
            const double g =
                detail::over_components(m, [t](double mu) { return std_normal_sf(t - mu); });
            return (1.0 - m.epsilon) * std_normal_sf(t) + m.epsilon * g;
        },
        model);
}

/// Phi(t) - F(t) = eps * sum_k w_k [Phi(t) - Phi(t - mu_k)], without cancellation.
inline double null_gap(const Mixture& model, double t)
{
    return std::visit(
        [t](const auto& m) {
            return m.epsilon * detail::over_components(
                                   m, [t](double mu) { return std_normal_interval(t - mu, t); });
        },
        model);
}

inline double mixture_epsilon(const Mixture& model)
{
    return std::visit([](const auto& m) { return m.epsilon; }, model);
}

// ---------------------------------------------------------------------------
// Phase diagram

/// rho*(beta): the detection boundary in the (beta, r) plane.
inline double detection_boundary(double beta)
{
    if (!(beta > 0.5 && beta < 1.0))
        throw std::invalid_argument("detection_boundary: beta must lie in (1/2, 1)");
    if (beta <= 0.75)
        return beta - 0.5;
    const double s = 1.0 - std::sqrt(1.0 - beta);
    return s * s;
}

// Points within this distance of a boundary curve count as on it.
inline constexpr double boundary_tolerance = 1e-12;

inline bool is_detectable(const SparseCalibration& cal)
{
    return cal.r > detection_boundary(cal.beta) + boundary_tolerance;
}

/// Above the line r = 2 beta - 1, where the Meinshausen-Rice bound is consistent.
inline bool mr_consistent(const SparseCalibration& cal)
{
    return cal.r > 2.0 * cal.beta - 1.0 + boundary_tolerance;
}

/// Exponent q of the most informative CJL threshold t* = sqrt(2 q ln n).
/// The tie beta == 3r belongs to the beta >= 3r branch.
inline double informative_exponent_cjl(double beta, double r)
{
    if (beta >= 3.0 * r)
        return 4.0 * r;
    if (beta > r)
        return (beta + r) * (beta + r) / (4.0 * r);
    return r;
}

inline double informative_threshold_cjl(const SparseCalibration& cal)
{
    if (!is_detectable(cal))
        throw std::invalid_argument("informative_threshold_cjl: calibration is not detectable");
    return std::sqrt(2.0 * informative_exponent_cjl(cal.beta, cal.r) * cal.log_n());
}

/// Multiple of mu_n at which the Meinshausen-Rice approximation is most
/// informative; empty when r <= 2 beta - 1 (not of interest).
inline std::optional<double> informative_factor_mr(double beta, double r)
{
    if (!(r > 2.0 * beta - 1.0))
        return std::nullopt;
    return 2.0 - std::sqrt(2.0 - (2.0 * beta - 1.0) / r);
}

inline std::optional<double> informative_threshold_mr(const SparseCalibration& cal)
{
    const auto factor = informative_factor_mr(cal.beta, cal.r);
    if (!factor)
        return std::nullopt;
    return *factor * calibrate(cal).mu;
}

// ---------------------------------------------------------------------------
// Sampling

enum class SamplingMode { Binomial, FixedCount };

inline std::string to_string(SamplingMode m)
{
    return m == SamplingMode::Binomial ? "binomial" : "fixed_count";
}

inline SamplingMode parse_sampling_mode(const std::string& s)
{
    if (s == "binomial")
        return SamplingMode::Binomial;
    if (s == "fixed_count" || s == "fixed-count")
        return SamplingMode::FixedCount;
    throw std::invalid_argument("unknown sampling mode '" + s + "' (expected binomial or fixed_count)");
}

/// Number of non-null draws for n observations at mixing fraction eps.
inline std::size_t non_null_count(double eps, std::size_t n, SamplingMode mode, Engine& rng)
{
    if (mode == SamplingMode::FixedCount)
        return static_cast<std::size_t>(std::llround(static_cast<double>(n) * eps));
    if (eps <= 0.0)
        return 0;
    if (eps >= 1.0)
        return n;
    std::binomial_distribution<std::uint64_t> bin(n, eps);
    return static_cast<std::size_t>(bin(rng));
}

/// n draws from the mixture, sorted. Nulls are drawn first, then signals, all
/// from a single engine seeded by `seed`.
inline SortedSample sample(const Mixture& model, std::size_t n, std::uint64_t seed,
                           SamplingMode mode = SamplingMode::Binomial)
{
    if (n == 0)
        throw std::invalid_argument("sample: n must be positive");
    Engine rng(seed);
    const std::size_t k = non_null_count(mixture_epsilon(model), n, mode, rng);

    std::vector<double> x(n);
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::size_t i = 0; i < n - k; ++i)
        x[i] = z(rng);

    if (const auto* two = std::get_if<TwoPointMixture>(&model)) {
        for (std::size_t i = n - k; i < n; ++i)
            x[i] = two->mu + z(rng);
    } else {
        const auto& atoms = std::get<DiscreteOneSidedMixture>(model).atoms;
        std::vector<double> w;
        w.reserve(atoms.size());
        for (const auto& a : atoms)
            w.push_back(a.weight);
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        for (std::size_t i = n - k; i < n; ++i)
            x[i] = atoms[pick(rng)].mu + z(rng);
    }
    std::sort(x.begin(), x.end());
    return SortedSample(std::move(x));
}

} // namespace sparsemix
