#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sparsemix/empirical.hpp"
#include "sparsemix/estimator.hpp"
#include "sparsemix/mixture.hpp"

using namespace sparsemix;

namespace {

// 45 nulls at normal quantiles (i - 1/2)/45 plus five signals; reference
// estimates from tests/oracles/compute_oracles.py.
const std::vector<double> kFifty = {
    -2.2865479513109806,  -1.8339146358159143,  -1.5932188180230504,  -1.4201790692709682,
    -1.2815515655446005,  -1.1639495821532649,  -1.0605622435314257,  -0.96742156610170104,
    -0.88199820533737216, -0.80257188805930941, -0.72791329088164428, -0.65710856642488894,
    -0.58945579784977834, -0.52440051270804078, -0.46149369421815834, -0.40036338453474806,
    -0.34069482708779545, -0.28221614706250813, -0.22468771507277524, -0.16789400478810547,
    -0.11163715450694492, -0.055731687742979807, 0.0,                 0.055731687742979807,
    0.11163715450694492,  0.16789400478810547,  0.22468771507277524,  0.28221614706250813,
    0.34069482708779545,  0.40036338453474806,  0.46149369421815834,  0.52440051270804078,
    0.58945579784977834,  0.65710856642488894,  0.72791329088164428,  0.80257188805930941,
    0.88199820533737216,  0.96742156610170104,  1.0605622435314257,   1.1639495821532649,
    1.2815515655446005,   1.4201790692709682,   1.5932188180230504,   1.8339146358159143,
    2.2865479513109806,   2.2,                  2.6,                  3.1,
    3.4,                  3.9};

} // namespace

TEST(DRatio, KnownValues)
{
    EXPECT_NEAR(d_ratio(1.0, 0.0, 1.0), 1.0, 1e-15);
    EXPECT_NEAR(d_ratio(2.0, 1.0, 2.0), 1.4304655440218122, 1e-14);
    EXPECT_NEAR(d_ratio(1e-7, 0.0, 1.0), std::exp(0.5), 1e-6);
    EXPECT_NEAR(d_ratio_sup(0.0, 1.0), 1.6487212707001281, 1e-15);
}

TEST(DRatio, StrictlyBetweenLimits)
{
    for (double mu : {0.01, 0.5, 2.0, 6.0})
        for (double tau : {0.0, 0.7, 2.0}) {
            const double tp = tau + 0.4;
            const double d = d_ratio(mu, tau, tp);
            EXPECT_GT(d, d_ratio_inf(tau, tp));
            EXPECT_LT(d, d_ratio_sup(tau, tp));
        }
}

TEST(DRatio, RejectsBadArguments)
{
    EXPECT_THROW(d_ratio(0.0, 0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(d_ratio(1.0, 1.0, 1.0), std::invalid_argument);
    EXPECT_THROW(d_ratio(1.0, 2.0, 1.0), std::invalid_argument);
}

TEST(SolveMu, KnownValues)
{
    const auto m2 = solve_mu(1.4304655440218122, 1.0, 2.0);
    ASSERT_TRUE(m2);
    EXPECT_NEAR(*m2, 2.0, 1e-7);
    const auto m1 = solve_mu(1.0, 0.0, 1.0);
    ASSERT_TRUE(m1);
    EXPECT_NEAR(*m1, 1.0, 1e-7);
    EXPECT_FALSE(solve_mu(5.0, 1.0, 2.0)); // above phi(1)/phi(2) = e^{1.5}
    EXPECT_FALSE(solve_mu(d_ratio_inf(1.0, 2.0), 1.0, 2.0));
    EXPECT_THROW(solve_mu(1.0, 2.0, 1.0), std::invalid_argument);
}

TEST(SolveMu, ResidualWithinTolerance)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double tau = 4.0 * unit(rng);
        const double tp = tau + 0.05 + 2.0 * unit(rng);
        const double mu = 0.1 + 4.0 * unit(rng);
        const double target = d_ratio(mu, tau, tp);
        const auto got = solve_mu(target, tau, tp);
        ASSERT_TRUE(got);
        EXPECT_LE(std::abs(d_ratio(*got, tau, tp) - target), 1e-10);
    }
}

TEST(TwoPointThrough, RecoversMixture)
{
    const auto got = two_point_through(1.0, 0.77307579685483438, 2.0, 0.92952488124663874);
    ASSERT_TRUE(got);
    EXPECT_NEAR(got->epsilon, 0.1, 1e-9);
    EXPECT_NEAR(got->mu, 2.0, 1e-8);
}

TEST(TwoPointThrough, IdentificationFromForwardModel)
{
    for (double eps : {0.01, 0.2, 0.45})
        for (double mu : {0.7, 1.9, 3.3}) {
            const Mixture m = TwoPointMixture(eps, mu);
            const auto got = two_point_through_gaps(0.4, null_gap(m, 0.4), 1.6, null_gap(m, 1.6));
            ASSERT_TRUE(got);
            EXPECT_NEAR(got->epsilon / eps, 1.0, 1e-9);
            EXPECT_NEAR(got->mu / mu, 1.0, 1e-9);
        }
}

TEST(TwoPointThrough, SparsestMixtureBound)
{
    const Mixture m = DiscreteOneSidedMixture(0.2, {{1.0, 0.5}, {3.0, 0.5}});
    const auto got = two_point_through(1.0, mixture_cdf(m, 1.0), 2.0, mixture_cdf(m, 2.0));
    ASSERT_TRUE(got);
    EXPECT_NEAR(got->epsilon, 0.15336023976290057, 1e-9);
    EXPECT_NEAR(got->mu, 2.3722341654932912, 1e-8);
    EXPECT_LE(got->epsilon, 0.2);
}

TEST(TwoPointThrough, RejectsPointsAboveNull)
{
    EXPECT_THROW(two_point_through(1.0, 0.9, 2.0, 0.9), std::invalid_argument);
    EXPECT_THROW(two_point_through(1.0, 0.0, 2.0, 0.9), std::invalid_argument);
    EXPECT_FALSE(two_point_through_gaps(1.0, -0.1, 2.0, 0.1));
}

TEST(Grid, PaperSize)
{
    const auto g = build_grid(1e7);
    ASSERT_EQ(g.points.size(), 33u);
    EXPECT_EQ(g.points.front(), 0.0);
    EXPECT_NEAR(g.spacing, 0.17612789223079019, 1e-15);
    EXPECT_NEAR(g.points.back(), 5.6360925513852862, 1e-13);
}

TEST(Grid, IntegralTwoLogN)
{
    const auto g = build_grid(std::exp(2.0));
    ASSERT_EQ(g.points.size(), 5u);
    for (std::size_t j = 0; j < 5; ++j)
        EXPECT_NEAR(g.points[j], 0.5 * j, 1e-14);
}

TEST(Grid, TenThousand)
{
    const auto g = build_grid(1e4);
    EXPECT_EQ(g.points.size(), 19u);
    EXPECT_NEAR(g.spacing, 0.23299530089232804, 1e-15);
    EXPECT_THROW(build_grid(1.5), std::invalid_argument);
}

TEST(CjlEstimate, FourPointInstanceHasNoSolvablePair)
{
    const SortedSample s(std::vector<double>{-0.5, 0.3, 1.0, 2.5});
    const auto r = cjl_estimate(s, 0.5, BelowRange::Zero);
    EXPECT_EQ(r.eps_hat, 0.0);
    EXPECT_FALSE(r.winner);
    ASSERT_EQ(r.pairs.size(), 2u);
    for (const auto& p : r.pairs)
        EXPECT_FALSE(p.mu_hat);
}

TEST(CjlEstimate, FourPointInstanceBelowRange)
{
    // Both ratios sit below inf D; the extended rule divides by Phi(t_j).
    const SortedSample s(std::vector<double>{-0.5, 0.3, 1.0, 2.5});
    const auto r = cjl_estimate(s, 0.5);
    EXPECT_NEAR(r.eps_hat, 0.25849698379623592, 1e-12);
    ASSERT_TRUE(r.winner);
    EXPECT_EQ(*r.winner, 0u);
    for (const auto& p : r.pairs) {
        ASSERT_TRUE(p.mu_hat);
        EXPECT_TRUE(std::isinf(*p.mu_hat));
    }
}

TEST(CjlEstimate, FiftyPointOracle)
{
    const SortedSample s(kFifty);
    const auto r = cjl_estimate(s, 0.3);
    EXPECT_NEAR(r.eps_hat, 0.098868616868463956, 1e-9);
    ASSERT_TRUE(r.winner);
    EXPECT_EQ(*r.winner, 6u);
    ASSERT_TRUE(r.pairs[6].mu_hat);
    EXPECT_NEAR(*r.pairs[6].mu_hat, 3.6634448419317, 1e-7);
    EXPECT_NEAR(cjl_estimate(s, 0.3, BelowRange::Zero).eps_hat, 0.098868616868463956, 1e-9);

    EXPECT_EQ(cjl_estimate(s, 1.0, BelowRange::Zero).eps_hat, 0.0);
    const auto wide = cjl_estimate(s, 1.0);
    EXPECT_NEAR(wide.eps_hat, 0.066427645010824309, 1e-12);
    ASSERT_TRUE(wide.winner);
    EXPECT_EQ(*wide.winner, 6u);
}

TEST(CjlEstimate, HugeAGivesZero)
{
    const auto s = sample(TwoPointMixture(0.1, 3.0), 1000, 4);
    EXPECT_EQ(cjl_estimate(s, 1e4).eps_hat, 0.0);
}

TEST(CjlEstimate, NonincreasingInA)
{
    const auto s = sample(TwoPointMixture(0.05, 2.5), 5000, 9);
    double prev = 2.0;
    for (double a = 0.0; a <= 6.0; a += 0.25) {
        const double e = cjl_estimate(s, a).eps_hat;
        EXPECT_LE(e, prev + 1e-15) << a;
        EXPECT_LE(cjl_estimate(s, a, BelowRange::Zero).eps_hat, e) << a;
        prev = e;
    }
}

TEST(CjlEstimate, UnderestimatesWhenTruthInsideEnvelope)
{
    const double n = 2000;
    const Mixture truth = TwoPointMixture(0.05, 2.5);
    const double a = 3.0;
    const auto grid = build_grid(n);
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const auto s = sample(truth, static_cast<std::size_t>(n), seed);
        bool inside = true;
        for (double t : grid.points) {
            const auto e = envelope(ecdf_at(s, t), a, n);
            const double f = mixture_cdf(truth, t);
            inside = inside && e.lower <= f && f <= e.upper;
        }
        if (!inside)
            continue;
        ++checked;
        EXPECT_LE(cjl_estimate(s, a).eps_hat, 0.05) << seed;
        EXPECT_LE(cjl_estimate(s, a, BelowRange::Zero).eps_hat, 0.05) << seed;
    }
    EXPECT_GT(checked, 30);
}

TEST(MrBound, TwoUniformsByHand)
{
    const std::vector<double> u{0.2, 0.6};
    EXPECT_DOUBLE_EQ(mr_lower_bound_uniform(u, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(mr_plus_lower_bound_uniform(u, 0.0), 0.4);
    EXPECT_EQ(mr_lower_bound_uniform(u, 1e3), 0.0);
    EXPECT_EQ(mr_plus_lower_bound_uniform(u, 1e3), 0.0);
}

TEST(MrBound, MatchesDenseGridSup)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> u(9);
        for (auto& v : u)
            v = unit(rng) * unit(rng);
        std::sort(u.begin(), u.end());
        const double a = 0.5 + unit(rng);
        const double k = a / 3.0;
        double mr = 0.0;
        double plus = 0.0;
        for (int i = 1; i < 400000; ++i) {
            const double t = i / 400000.0;
            const double c = static_cast<double>(std::upper_bound(u.begin(), u.end(), t) - u.begin()) / 9.0;
            const double g = c - t - k * std::sqrt(t * (1.0 - t));
            mr = std::max(mr, g / (1.0 - t));
            plus = std::max(plus, g);
        }
        EXPECT_NEAR(mr_lower_bound_uniform(u, a), std::min(mr, 1.0), 1e-4);
        EXPECT_NEAR(mr_plus_lower_bound_uniform(u, a), plus, 1e-4);
    }
}

TEST(MrBound, PlusNeverExceedsMr)
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = sample(TwoPointMixture(0.05, 2.0), 2000, seed);
        for (double a : {0.0, 1.0, 3.0}) {
            const auto pv = p_values(s);
            EXPECT_LE(mr_plus_lower_bound(pv, a), mr_lower_bound(pv, a));
        }
    }
}

TEST(MrBound, ZScoresUseUpperTailPValues)
{
    // Strong signals must push the bound up, not down.
    const auto s = sample(TwoPointMixture(0.2, 5.0), 5000, 1, SamplingMode::FixedCount);
    EXPECT_GT(mr_plus_lower_bound(s, 2.0), 0.1);
    EXPECT_GT(mr_lower_bound(s, 2.0), 0.1);
}

TEST(OracleApprox, CjlExactWithoutFluctuation)
{
    const Mixture m = TwoPointMixture(0.03, 2.7);
    for (double t : {0.5, 1.5, 3.0, 5.0})
        EXPECT_NEAR(oracle_cjl_approx(t, m, 2.7, 0.0, 1e6) / 0.03, 1.0, 1e-12);
    auto F = [&](double t) { return mixture_cdf(m, t); };
    EXPECT_NEAR(oracle_cjl_approx(1.5, F, 2.7, 0.0, 1e6) / 0.03, 1.0, 1e-10);
    EXPECT_THROW(oracle_cjl_approx(1.0, F, -1.0, 1.0, 100.0), std::invalid_argument);
}

TEST(OracleApprox, MrBiasedDownward)
{
    const Mixture m = TwoPointMixture(0.03, 2.7);
    auto F = [&](double t) { return mixture_cdf(m, t); };
    for (double t : {-1.0, 0.5, 2.0, 4.0}) {
        const double expect = 0.03 * std_normal_interval(t - 2.7, t) / std_normal_cdf(t);
        EXPECT_NEAR(oracle_mr_approx(t, m, 0.0, 1e6), expect, 1e-15);
        EXPECT_NEAR(oracle_mr_approx(t, F, 0.0, 1e6), expect, 1e-12);
        EXPECT_LE(oracle_mr_approx(t, m, 0.0, 1e6), 0.03);
    }
}

TEST(OracleApprox, CjlPeaksNearInformativeThreshold)
{
    const SparseCalibration cal(1e6, 4.0 / 7.0, 0.5);
    const auto tp = calibrate(cal);
    const Mixture m = tp;
    const double a = std::sqrt(2.0 * std::log(std::log(1e6)));
    double best = -1.0;
    const double top = std::sqrt(2.0 * std::log(1e6));
    for (int i = 0; i <= 2000; ++i)
        best = std::max(best, oracle_cjl_approx(top * i / 2000.0, m, tp.mu, a, 1e6));
    const double at_star = oracle_cjl_approx(informative_threshold_cjl(cal), m, tp.mu, a, 1e6);
    EXPECT_GE(at_star, 0.75 * best);
    EXPECT_LE(at_star, best);
}
