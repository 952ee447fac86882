#include <sparsemix/simlab.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sparsemix;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("sparsemix_simlab_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig small_config()
{
    ExperimentConfig c;
    c.n = 2000;
    c.beta = 4.0 / 7.0;
    c.r = 0.5;
    c.sampling = SamplingMode::FixedCount;
    c.estimators = {EstimatorKind::Cjl, EstimatorKind::Mr, EstimatorKind::MrPlus};
    c.alphas = {0.05, 0.25};
    c.reps = 40;
    c.calibration_reps = 200;
    c.seed = 11;
    return c;
}

// Shared W++ table at n = 10^4 for the estimate tests.
const fs::path& wpp_table_1e4()
{
    static const fs::path path = [] {
        const fs::path dir = scratch("tables");
        const auto t = calibrate_table(StatisticKind::WPlusPlus, 10000, default_c0, 2000, {0.05, 0.1}, 5);
        write_table(t, (dir / "wn_plus_plus_n10000.json").string());
        return dir / "wn_plus_plus_n10000.json";
    }();
    return path;
}

void write_z(const fs::path& p, const std::vector<double>& z)
{
    std::ofstream out(p);
    out.precision(17);
    for (double v : z)
        out << v << '\n';
}

} // namespace

TEST(Format, TwelveSignificantDigits)
{
    EXPECT_EQ(fmt12(1.0 / 3.0), "0.333333333333");
    EXPECT_EQ(fmt12(2.0), "2");
    EXPECT_EQ(fmt12(1234567.891234567), "1234567.89123");
}

TEST(Format, Fnv1aKnownValues)
{
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Config, ParsesKeyValueTextWithComments)
{
    ExperimentConfig c;
    apply_config_text(c,
                      "# reference point\n"
                      "n = 10000\n"
                      "beta=0.5714285714285714\n"
                      "r=0.5   # signal\n"
                      "\n"
                      "estimators=cjl,mr_plus\n"
                      "alphas=0.05, 0.1\n"
                      "sampling=fixed_count\n"
                      "a_n=mse\n",
                      "cfg");
    c.validate();
    EXPECT_EQ(c.n, 10000u);
    EXPECT_DOUBLE_EQ(*c.r, 0.5);
    ASSERT_EQ(c.estimators.size(), 2u);
    EXPECT_EQ(c.estimators[1], EstimatorKind::MrPlus);
    EXPECT_EQ(c.alphas, (std::vector<double>{0.05, 0.1}));
    EXPECT_EQ(c.sampling, SamplingMode::FixedCount);
    EXPECT_NEAR(*c.a_n, 4.0 * std::sqrt(2.0 * std::numbers::pi) * std::pow(std::log(1e4), 1.5), 1e-12);
}

TEST(Config, ErrorsCiteTheLine)
{
    ExperimentConfig c;
    try {
        apply_config_text(c, "n=10\nbogus=1\n", "file.cfg");
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("file.cfg:2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(apply_config_text(c, "n\n", "x"), std::invalid_argument);
    EXPECT_THROW(apply_config_text(c, "alphas=0.1,0.05\n", "x"), std::invalid_argument);
    EXPECT_THROW(apply_config_text(c, "alphas=0.1,1.5\n", "x"), std::invalid_argument);
}

TEST(Config, ValidationRejectsInconsistentModels)
{
    auto c = small_config();
    c.epsilon = 0.01;
    c.mu = 2.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);

    c = small_config();
    c.r.reset();
    EXPECT_THROW(c.validate(), std::invalid_argument);

    c = small_config();
    c.reps = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);

    c = small_config();
    c.cjl_statistic = StatisticKind::WStar;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, HashIgnoresWorkersOnly)
{
    auto a = small_config();
    auto b = small_config();
    b.workers = 8;
    EXPECT_EQ(a.hash(), b.hash());
    b.seed = 12;
    EXPECT_NE(a.hash(), b.hash());
}

TEST(Histogram, BinsAndOverflow)
{
    const auto h = make_histogram({0.0, 0.05, 1.0, 2.99, 3.0, 7.5}, 3.0);
    ASSERT_EQ(h.counts.size(), 50u);
    EXPECT_EQ(h.counts[0], 2u);
    EXPECT_EQ(h.counts[16], 1u);
    EXPECT_EQ(h.counts[49], 2u);
    EXPECT_EQ(h.overflow, 1u);
    EXPECT_DOUBLE_EQ(h.log_counts()[0], std::log10(3.0));
}

TEST(Replication, MissingTableNamesTheKey)
{
    auto c = small_config();
    c.mr_table = (scratch("missing") / "nope.json").string();
    c.validate();
    try {
        run_calibration(c, "");
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("wn_star_n2000"), std::string::npos) << e.what();
    }
}

TEST(Replication, PairedCyclesMatchDirectEvaluation)
{
    auto c = small_config();
    c.validate();
    const auto tables = run_calibration(c, "");
    const auto rep = run_replication_study(c, tables);
    ASSERT_EQ(rep.rows.size(), 6u);
    ASSERT_EQ(rep.cycle_values.size(), c.reps);
    const TwoPointMixture truth = c.model();
    for (std::size_t i : {0u, 17u, 39u}) {
        const auto s = sample(truth, c.n, derive_seed(c.seed, i), c.sampling);
        const auto pv = p_values(s);
        for (std::size_t k = 0; k < rep.rows.size(); ++k) {
            const auto& row = rep.rows[k];
            double expect = 0.0;
            if (row.estimator == EstimatorKind::Cjl)
                expect = cjl_estimate(s, row.a).eps_hat;
            else if (row.estimator == EstimatorKind::Mr)
                expect = mr_lower_bound(pv, row.a);
            else
                expect = mr_plus_lower_bound(pv, row.a);
            EXPECT_EQ(rep.cycle_values[i][k], expect) << i << ' ' << k;
        }
    }
}

TEST(Replication, ReportInvariantsAndMonotoneMeanInAlpha)
{
    auto c = small_config();
    c.alphas = {0.05, 0.1, 0.25, 0.5};
    c.estimators = {EstimatorKind::Cjl};
    c.validate();
    const auto rep = run_replication_study(c, run_calibration(c, ""));
    double prev = -1.0;
    for (const auto& row : rep.rows) {
        EXPECT_GE(row.overestimation_frequency, 0.0);
        EXPECT_LE(row.overestimation_frequency, 1.0);
        ASSERT_TRUE(row.mean && row.maximum && row.histogram);
        double mn = 1e300;
        for (const auto& cyc : rep.cycle_values)
            mn = std::min(mn, cyc[&row - rep.rows.data()] / rep.epsilon);
        EXPECT_LE(mn, *row.mean);
        EXPECT_LE(*row.mean, *row.maximum);
        // Common cycles, larger alpha means a smaller a.
        EXPECT_GE(*row.mean, prev);
        prev = *row.mean;
        std::uint64_t total = row.histogram->overflow;
        for (auto k : row.histogram->counts)
            total += k;
        EXPECT_EQ(total, c.reps);
    }
}

TEST(Replication, NullTruthCoverage)
{
    ExperimentConfig c;
    c.n = 2000;
    c.epsilon = 0.0;
    c.mu = 3.0;
    c.estimators = {EstimatorKind::Cjl, EstimatorKind::Mr};
    c.alphas = {0.1};
    c.reps = 200;
    c.calibration_reps = 1000;
    c.seed = 3;
    c.validate();
    const auto rep = run_replication_study(c, run_calibration(c, ""));
    for (const auto& row : rep.rows) {
        EXPECT_LE(row.overestimation_frequency, 0.1 + 3.0 * std::sqrt(0.09 / 200.0)) << to_string(row.estimator);
        EXPECT_FALSE(row.mean.has_value());
        EXPECT_FALSE(row.histogram.has_value());
    }
}

TEST(Replication, DeskScaleCoverageAndFiniteFields)
{
    ExperimentConfig c;
    c.n = 10000;
    c.beta = 4.0 / 7.0;
    c.r = 0.5;
    c.estimators = {EstimatorKind::Cjl, EstimatorKind::Mr, EstimatorKind::MrPlus};
    c.alphas = {0.1};
    c.reps = 400;
    c.calibration_reps = 2000;
    c.seed = 2024;
    c.validate();
    const auto rep = run_replication_study(c, run_calibration(c, ""));
    for (const auto& row : rep.rows) {
        EXPECT_LE(row.overestimation_frequency, 0.1 + 3.0 * std::sqrt(0.09 / 400.0)) << to_string(row.estimator);
        for (const auto& v : {row.maximum, row.mean, row.median, row.deviation, row.relative_mse, row.plus_risk}) {
            ASSERT_TRUE(v.has_value());
            EXPECT_TRUE(std::isfinite(*v));
        }
        EXPECT_TRUE(std::isfinite(row.a_normalized));
    }
}

TEST(Replication, AggregatesRecomputableFromCycleDump)
{
    auto c = small_config();
    const fs::path dir = scratch("dump");
    const auto rep = simulate(c, dir);
    const auto json = nlohmann::json::parse(slurp(dir / "report.json"));

    std::ifstream in(dir / "cycles.csv");
    std::string line;
    std::getline(in, line);
    ASSERT_EQ(line.rfind("# config_hash=" + rep.config_hash, 0), 0u) << line;
    std::vector<std::vector<double>> cols(rep.rows.size());
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        for (auto& col : cols) {
            std::getline(ss, cell, ',');
            col.push_back(std::stod(cell) / rep.epsilon);
        }
    }
    for (std::size_t k = 0; k < cols.size(); ++k) {
        auto v = cols[k];
        ASSERT_EQ(v.size(), c.reps);
        const double R = static_cast<double>(v.size());
        double sum = 0.0;
        for (double x : v)
            sum += x;
        const double mean = sum / R;
        double ss = 0.0;
        for (double x : v)
            ss += (x - mean) * (x - mean);
        std::sort(v.begin(), v.end());
        const double median = 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
        const auto& row = json["rows"][k];
        EXPECT_NEAR(row["mean"].get<double>(), mean, 1e-12);
        EXPECT_NEAR(row["median"].get<double>(), median, 1e-12);
        EXPECT_NEAR(row["maximum"].get<double>(), v.back(), 1e-12);
        EXPECT_NEAR(row["deviation"].get<double>(), std::sqrt(ss / (R - 1.0)), 1e-12);
    }
    for (const char* f : {"config.txt", "report.csv", "histogram.csv", "wn_plus_plus_n2000.json", "wn_star_n2000.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
}

TEST(Replication, OutputsIndependentOfWorkerCount)
{
    auto c = small_config();
    c.workers = 1;
    const fs::path a = scratch("w1");
    simulate(c, a);
    c.workers = 8;
    const fs::path b = scratch("w8");
    simulate(c, b);
    for (const char* f : {"config.txt", "report.json", "report.csv", "cycles.csv", "histogram.csv",
                          "wn_plus_plus_n2000.json", "wn_star_n2000.json"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Boundary, ParsesRanges)
{
    const auto r = parse_range("0.55:0.95:5", "--beta");
    EXPECT_DOUBLE_EQ(r.lo, 0.55);
    EXPECT_DOUBLE_EQ(r.at(4), 0.95);
    EXPECT_THROW(parse_range("0.5:0.9", "--beta"), std::invalid_argument);
    EXPECT_THROW(parse_range("0.5:0.9:1", "--beta"), std::invalid_argument);
    EXPECT_THROW(parse_range("0.9:0.5:3", "--beta"), std::invalid_argument);
}

TEST(Boundary, FlagsFollowThePredicates)
{
    BoundaryConfig bc;
    bc.beta = {0.6, 0.8, 3};
    bc.r = {0.1, 0.3, 3};
    bc.n = 1000;
    bc.reps = 5;
    bc.calibration_reps = 100;
    const auto map = run_boundary_map(bc);
    ASSERT_EQ(map.cells.size(), 9u);
    for (const auto& c : map.cells) {
        const SparseCalibration cal(1000.0, c.beta, c.r);
        EXPECT_EQ(c.detectable, is_detectable(cal));
        EXPECT_EQ(c.mr_consistent, mr_consistent(cal));
        if (c.r < detection_boundary(c.beta)) {
            EXPECT_FALSE(c.detectable);
        }
        // (0.6, 0.2) lies on r = 2 beta - 1.
        if (std::abs(c.beta - 0.6) < 1e-12 && std::abs(c.r - 0.2) < 1e-12) {
            EXPECT_FALSE(c.mr_consistent);
        }
    }
    const std::string csv = boundary_csv(map);
    EXPECT_EQ(csv.rfind("# config_hash=", 0), 0u);
    EXPECT_NE(csv.find("beta,r,detectable,mr_consistent,median_ratio,a"), std::string::npos);
}

TEST(Boundary, TablePointMedianRatioInUnitInterval)
{
    BoundaryConfig bc;
    bc.beta = {4.0 / 7.0, 4.0 / 7.0 + 1e-9, 2};
    bc.r = {0.5, 0.5 + 1e-9, 2};
    bc.n = 100000;
    bc.reps = 100;
    bc.alpha = 0.1;
    bc.calibration_reps = 500;
    const auto map = run_boundary_map(bc);
    const auto& c = map.cells.front();
    EXPECT_GT(c.median_ratio, 0.0);
    EXPECT_LE(c.median_ratio, 1.0);
}

TEST(Estimate, NullFilesRarelyGivePositiveBounds)
{
    const fs::path dir = scratch("null");
    int positive = 0;
    const int seeds = 100;
    for (int s = 0; s < seeds; ++s) {
        Engine rng = make_engine(777, static_cast<std::uint64_t>(s));
        std::normal_distribution<double> z;
        std::vector<double> x(10000);
        for (auto& v : x)
            v = z(rng);
        write_z(dir / "z.txt", x);
        const auto rep = estimate_from_file((dir / "z.txt").string(), 0.05, wpp_table_1e4().string());
        positive += rep.eps_hat > 0.0 ? 1 : 0;
    }
    EXPECT_LE(positive, 5 + static_cast<int>(3.0 * std::sqrt(0.05 * 0.95 * seeds)));
}

TEST(Estimate, ReportsWinnerAndMuForSignals)
{
    const fs::path dir = scratch("signal");
    const auto s = sample(calibrate({10000.0, 0.4 + 0.2, 0.6}), 10000, 9, SamplingMode::FixedCount);
    write_z(dir / "z.txt", {s.values().begin(), s.values().end()});
    const auto rep = estimate_from_file((dir / "z.txt").string(), 0.05, wpp_table_1e4().string());
    EXPECT_GT(rep.eps_hat, 0.0);
    ASSERT_TRUE(rep.winner.has_value());
    ASSERT_TRUE(rep.mu_hat.has_value());
    EXPECT_GT(*rep.t_right, *rep.t_left);
    EXPECT_FALSE(rep.warning.has_value());
    const auto j = to_json(rep);
    EXPECT_EQ(j["statistic"], "wn_plus_plus");
    EXPECT_EQ(j["n"], 10000);
}

TEST(Estimate, InputErrors)
{
    const fs::path dir = scratch("errors");
    write_z(dir / "empty.txt", {});
    EXPECT_THROW(estimate_from_file((dir / "empty.txt").string(), 0.05, wpp_table_1e4().string()),
                 std::invalid_argument);
    {
        std::ofstream out(dir / "bad.txt");
        out << "0.1\n0.2\nabc\n0.3\n";
    }
    try {
        estimate_from_file((dir / "bad.txt").string(), 0.05, wpp_table_1e4().string());
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
}

TEST(Estimate, TableMatchingByN)
{
    const fs::path dir = scratch("match");
    std::vector<double> x(6000, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = std_normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(x.size()));
    write_z(dir / "z6000.txt", x);
    const auto rep = estimate_from_file((dir / "z6000.txt").string(), 0.05, wpp_table_1e4().string());
    ASSERT_TRUE(rep.warning.has_value());
    EXPECT_EQ(rep.table_n, 10000u);

    x.resize(4000);
    write_z(dir / "z4000.txt", x);
    EXPECT_THROW(estimate_from_file((dir / "z4000.txt").string(), 0.05, wpp_table_1e4().string()),
                 std::runtime_error);

    // A directory picks the nearest n.
    const fs::path tables = scratch("match_dir");
    write_table(calibrate_table(StatisticKind::WPlusPlus, 5000, default_c0, 50, {0.05}, 1),
                (tables / "a.json").string());
    write_table(calibrate_table(StatisticKind::WPlusPlus, 20000, default_c0, 50, {0.05}, 1),
                (tables / "b.json").string());
    write_table(calibrate_table(StatisticKind::WStar, 6000, default_c0, 50, {0.05}, 1), (tables / "c.json").string());
    const auto near = estimate_from_file((dir / "z4000.txt").string(), 0.05, tables.string());
    EXPECT_EQ(near.table_n, 5000u);
    const auto mr = estimate_from_file((dir / "z4000.txt").string(), 0.05, tables.string(), EstimatorKind::Mr);
    EXPECT_EQ(mr.table_n, 6000u);
    EXPECT_EQ(mr.statistic, "wn_star");
}
