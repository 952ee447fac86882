#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "empirical.hpp"
#include "estimator.hpp"
#include "mixture.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace sparsemix {

// ---------------------------------------------------------------------------
// Formatting helpers

/// Decimal with 12 significant digits.
inline std::string fmt12(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

/// Round-trip decimal, used for the canonical config text and the per-cycle dump.
inline std::string fmt17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline double parse_double(const std::string& s, const std::string& what)
{
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || !std::isfinite(v))
        throw std::invalid_argument(what + ": '" + s + "' is not a finite number");
    return v;
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& what)
{
    std::uint64_t v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e)
        throw std::invalid_argument(what + ": '" + s + "' is not a nonnegative integer");
    return v;
}

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ','))
        if (auto t = trim(item); !t.empty())
            out.push_back(t);
    return out;
}

inline std::vector<double> parse_alphas(const std::string& s)
{
    std::vector<double> out;
    for (const auto& item : split_list(s))
        out.push_back(parse_double(item, "alphas"));
    if (out.empty())
        throw std::invalid_argument("alphas: empty list");
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(out[i] > 0.0 && out[i] < 1.0))
            throw std::invalid_argument("alphas: " + fmt12(out[i]) + " is outside (0, 1)");
        if (i > 0 && !(out[i] > out[i - 1]))
            throw std::invalid_argument("alphas: values must be strictly increasing");
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out)
        throw std::runtime_error("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Estimators

enum class EstimatorKind { Cjl, Mr, MrPlus };

inline std::string to_string(EstimatorKind k)
{
    switch (k) {
    case EstimatorKind::Cjl:
        return "cjl";
    case EstimatorKind::Mr:
        return "mr";
    case EstimatorKind::MrPlus:
        return "mr_plus";
    }
    return "?";
}

inline EstimatorKind parse_estimator(const std::string& s)
{
    if (s == "cjl")
        return EstimatorKind::Cjl;
    if (s == "mr")
        return EstimatorKind::Mr;
    if (s == "mr_plus")
        return EstimatorKind::MrPlus;
    throw std::invalid_argument("unknown estimator '" + s + "' (expected cjl, mr or mr_plus)");
}

inline std::string to_string(BelowRange r)
{
    return r == BelowRange::Extend ? "extend" : "zero";
}

inline BelowRange parse_below_range(const std::string& s)
{
    if (s == "extend")
        return BelowRange::Extend;
    if (s == "zero")
        return BelowRange::Zero;
    throw std::invalid_argument("unknown below-range rule '" + s + "' (expected extend or zero)");
}

/// a_n = 4 sqrt(2 pi) (ln n)^{3/2}.
inline double mse_critical_value(double n)
{
    return 4.0 * std::sqrt(2.0 * std::numbers::pi) * std::pow(std::log(n), 1.5);
}

inline double lil_scale(double n)
{
    return std::sqrt(2.0 * std::log(std::log(n)));
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
    std::uint64_t n = 10000;
    std::optional<double> beta;
    std::optional<double> r;
    std::optional<double> epsilon;
    std::optional<double> mu;
    SamplingMode sampling = SamplingMode::Binomial;
    std::vector<EstimatorKind> estimators{EstimatorKind::Cjl, EstimatorKind::Mr};
    std::vector<double> alphas{0.05};
    std::uint64_t reps = 100;
    std::uint64_t calibration_reps = 2000;
    std::uint64_t seed = 1;
    std::optional<double> a_n;  ///< fixed CJL critical value at every alpha
    bool a_n_mse = false;       ///< a_n = mse_critical_value(n)
    StatisticKind cjl_statistic = StatisticKind::WPlusPlus;
    BelowRange cjl_below_range = BelowRange::Extend;
    double c0 = default_c0;
    std::string cjl_table;  ///< empty: calibrate in-process
    std::string mr_table;
    std::optional<double> histogram_max;
    unsigned workers = 0;  ///< not part of the canonical text

    /// Keys accepted by set(), in canonical order.
    static const std::vector<std::string>& keys()
    {
        static const std::vector<std::string> k{
            "n",     "beta",    "r",       "epsilon", "mu",    "sampling",    "estimators",    "alphas",
            "reps",  "calibration_reps",   "seed",    "a_n",   "cjl_statistic", "cjl_below_range", "c0",
            "cjl_table", "mr_table", "histogram_max", "workers"};
        return k;
    }

    void set(const std::string& key, const std::string& raw)
    {
        const std::string v = trim(raw);
        if (key == "n")
            n = parse_u64(v, key);
        else if (key == "beta")
            beta = parse_double(v, key);
        else if (key == "r")
            r = parse_double(v, key);
        else if (key == "epsilon")
            epsilon = parse_double(v, key);
        else if (key == "mu")
            mu = parse_double(v, key);
        else if (key == "sampling")
            sampling = parse_sampling_mode(v);
        else if (key == "estimators") {
            estimators.clear();
            for (const auto& e : split_list(v))
                estimators.push_back(parse_estimator(e));
        } else if (key == "alphas")
            alphas = parse_alphas(v);
        else if (key == "reps")
            reps = parse_u64(v, key);
        else if (key == "calibration_reps")
            calibration_reps = parse_u64(v, key);
        else if (key == "seed")
            seed = parse_u64(v, key);
        else if (key == "a_n") {
            a_n.reset();
            a_n_mse = v == "mse";
            if (!a_n_mse && !v.empty() && v != "none")
                a_n = parse_double(v, key);
        } else if (key == "cjl_statistic")
            cjl_statistic = parse_statistic(v);
        else if (key == "cjl_below_range")
            cjl_below_range = parse_below_range(v);
        else if (key == "c0")
            c0 = parse_double(v, key);
        else if (key == "cjl_table")
            cjl_table = v;
        else if (key == "mr_table")
            mr_table = v;
        else if (key == "histogram_max")
            histogram_max = parse_double(v, key);
        else if (key == "workers")
            workers = static_cast<unsigned>(parse_u64(v, key));
        else
            throw std::invalid_argument("unknown config key '" + key + "'");
    }

    void validate()
    {
        if (n < 2)
            throw std::invalid_argument("config: n must be at least 2");
        if (reps < 1)
            throw std::invalid_argument("config: reps must be at least 1");
        if (calibration_reps < 1)
            throw std::invalid_argument("config: calibration_reps must be at least 1");
        if (estimators.empty())
            throw std::invalid_argument("config: estimators must not be empty");
        std::sort(estimators.begin(), estimators.end());
        estimators.erase(std::unique(estimators.begin(), estimators.end()), estimators.end());
        if (alphas.empty())
            throw std::invalid_argument("config: alphas must not be empty");
        for (std::size_t i = 0; i < alphas.size(); ++i) {
            if (!(alphas[i] > 0.0 && alphas[i] < 1.0))
                throw std::invalid_argument("config: alphas must lie in (0, 1)");
            if (i > 0 && !(alphas[i] > alphas[i - 1]))
                throw std::invalid_argument("config: alphas must be strictly increasing");
        }
        const bool calibrated = beta || r;
        const bool explicit_model = epsilon || mu;
        if (calibrated == explicit_model)
            throw std::invalid_argument("config: give either beta and r, or epsilon and mu");
        if (calibrated && !(beta && r))
            throw std::invalid_argument("config: beta and r must be given together");
        if (explicit_model && !(epsilon && mu))
            throw std::invalid_argument("config: epsilon and mu must be given together");
        if (calibrated)
            (void)SparseCalibration(static_cast<double>(n), *beta, *r);
        else
            (void)TwoPointMixture(*epsilon, *mu);
        if (a_n_mse)
            a_n = mse_critical_value(static_cast<double>(n));
        if (a_n && !(*a_n >= 0.0))
            throw std::invalid_argument("config: a_n must be nonnegative");
        if (!(c0 > 0.0))
            throw std::invalid_argument("config: c0 must be positive");
        if (cjl_statistic == StatisticKind::WStar)
            throw std::invalid_argument("config: cjl_statistic must be wn_plus or wn_plus_plus");
        if (histogram_max && !(*histogram_max > 0.0))
            throw std::invalid_argument("config: histogram_max must be positive");
    }

    TwoPointMixture model() const
    {
        if (beta)
            return calibrate({static_cast<double>(n), *beta, *r});
        return TwoPointMixture(*epsilon, *mu);
    }

    bool uses(EstimatorKind k) const
    {
        return std::find(estimators.begin(), estimators.end(), k) != estimators.end();
    }

    bool needs_mr_table() const { return uses(EstimatorKind::Mr) || uses(EstimatorKind::MrPlus); }
    bool needs_cjl_table() const { return uses(EstimatorKind::Cjl) && !a_n; }

    /// key=value lines in canonical order, excluding workers.
    std::string canonical() const
    {
        std::ostringstream o;
        auto opt = [](const std::optional<double>& v) { return v ? fmt17(*v) : std::string("none"); };
        o << "n=" << n << '\n';
        o << "beta=" << opt(beta) << '\n';
        o << "r=" << opt(r) << '\n';
        o << "epsilon=" << opt(epsilon) << '\n';
        o << "mu=" << opt(mu) << '\n';
        o << "sampling=" << to_string(sampling) << '\n';
        o << "estimators=";
        for (std::size_t i = 0; i < estimators.size(); ++i)
            o << (i ? "," : "") << to_string(estimators[i]);
        o << '\n' << "alphas=";
        for (std::size_t i = 0; i < alphas.size(); ++i)
            o << (i ? "," : "") << fmt17(alphas[i]);
        o << '\n';
        o << "reps=" << reps << '\n';
        o << "calibration_reps=" << calibration_reps << '\n';
        o << "seed=" << seed << '\n';
        o << "a_n=" << (a_n_mse ? std::string("mse") : opt(a_n)) << '\n';
        o << "cjl_statistic=" << to_string(cjl_statistic) << '\n';
        o << "cjl_below_range=" << to_string(cjl_below_range) << '\n';
        o << "c0=" << fmt17(c0) << '\n';
        o << "cjl_table=" << cjl_table << '\n';
        o << "mr_table=" << mr_table << '\n';
        o << "histogram_max=" << opt(histogram_max) << '\n';
        return o.str();
    }

    std::string hash() const { return hex64(fnv1a64(canonical())); }
};

/// Applies `key=value` lines; '#' starts a comment. Errors cite the line.
inline void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin)
{
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key=value");
        try {
            cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const std::exception& e) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig cfg;
    apply_config_text(cfg, ss.str(), path);
    return cfg;
}

// ---------------------------------------------------------------------------
// Calibration

inline std::string table_key(StatisticKind kind, std::uint64_t n)
{
    return to_string(kind) + "_n" + std::to_string(n);
}

/// Seed for the calibration of `kind` under a master seed, disjoint from the
/// per-cycle streams.
inline std::uint64_t calibration_seed(std::uint64_t master, StatisticKind kind)
{
    return derive_seed(~master, static_cast<std::uint64_t>(kind));
}

inline CriticalValueTable calibrate_table(StatisticKind kind, std::uint64_t n, double c0, std::uint64_t reps,
                                          const std::vector<double>& alphas, std::uint64_t seed,
                                          unsigned workers = 0)
{
    const auto values = simulate_sup_statistic(kind, n, c0, reps, seed, workers);
    return make_table(kind, n, c0, seed, values, alphas);
}

struct CalibrationSet {
    std::optional<CriticalValueTable> cjl;
    std::optional<CriticalValueTable> mr;
};

inline CriticalValueTable load_required_table(const std::string& path, StatisticKind kind, std::uint64_t n,
                                              const std::vector<double>& alphas)
{
    const std::string key = table_key(kind, n);
    if (!std::filesystem::exists(path))
        throw std::runtime_error("missing critical value table " + key + " at '" + path + "'");
    auto t = read_table(path, n);
    if (t.statistic != kind)
        throw std::runtime_error("table '" + path + "' holds " + to_string(t.statistic) + ", expected " + key);
    for (double a : alphas)
        (void)t.at(a);
    return t;
}

/// Tables the config needs: read from the configured paths, or simulated with
/// calibration_reps and written to `out_dir` when no path is configured.
inline CalibrationSet run_calibration(const ExperimentConfig& cfg, const std::filesystem::path& out_dir)
{
    CalibrationSet set;
    auto obtain = [&](StatisticKind kind, const std::string& path) {
        if (!path.empty())
            return load_required_table(path, kind, cfg.n, cfg.alphas);
        auto t = calibrate_table(kind, cfg.n, cfg.c0, cfg.calibration_reps, cfg.alphas,
                                 calibration_seed(cfg.seed, kind), cfg.workers);
        if (!out_dir.empty())
            write_table(t, (out_dir / (table_key(kind, cfg.n) + ".json")).string());
        return t;
    };
    if (cfg.needs_cjl_table())
        set.cjl = obtain(cfg.cjl_statistic, cfg.cjl_table);
    if (cfg.needs_mr_table())
        set.mr = obtain(StatisticKind::WStar, cfg.mr_table);
    return set;
}

// ---------------------------------------------------------------------------
// Replication study

inline constexpr std::size_t histogram_bins = 50;

struct Histogram {
    double lower = 0.0;
    double upper = 0.0;
    std::vector<std::uint64_t> counts;  ///< histogram_bins equal-width bins
    std::uint64_t overflow = 0;

    std::vector<double> log_counts() const
    {
        std::vector<double> out;
        out.reserve(counts.size());
        for (auto c : counts)
            out.push_back(std::log10(1.0 + static_cast<double>(c)));
        return out;
    }
};

inline Histogram make_histogram(const std::vector<double>& values, double upper)
{
    Histogram h;
    h.upper = upper;
    h.counts.assign(histogram_bins, 0);
    const double width = upper / static_cast<double>(histogram_bins);
    for (double v : values) {
        if (v > upper) {
            ++h.overflow;
            continue;
        }
        auto b = static_cast<std::size_t>(std::max(v, 0.0) / width);
        ++h.counts[std::min(b, histogram_bins - 1)];
    }
    return h;
}

struct ReplicationRow {
    EstimatorKind estimator = EstimatorKind::Cjl;
    double alpha = 0.0;
    std::string statistic;  ///< source of a: a statistic name or "fixed"
    double a = 0.0;
    double a_normalized = 0.0;  ///< a / sqrt(2 ln ln n)
    std::uint64_t cycles = 0;
    double overestimation_frequency = 0.0;  ///< share of cycles with eps_hat > eps
    // Summaries of eps_hat / eps; absent when eps = 0.
    std::optional<double> maximum, mean, median, deviation, relative_mse, plus_risk;
    std::optional<Histogram> histogram;
};

struct ReplicationReport {
    std::string config_hash;
    std::uint64_t n = 0;
    double epsilon = 0.0;
    double mu = 0.0;
    std::vector<ReplicationRow> rows;
    /// eps_hat per cycle, one column per row, in cycle order.
    std::vector<std::vector<double>> cycle_values;
};

namespace detail {

inline double median_of(std::vector<double> v)
{
    const std::size_t m = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
    const double hi = v[m];
    if (v.size() % 2 == 1)
        return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
    return 0.5 * (lo + hi);
}

inline void summarize(ReplicationRow& row, const std::vector<double>& eps_hat, double eps,
                      std::optional<double> histogram_max)
{
    const double R = static_cast<double>(eps_hat.size());
    row.cycles = eps_hat.size();
    std::uint64_t over = 0;
    for (double e : eps_hat)
        over += e > eps ? 1 : 0;
    row.overestimation_frequency = static_cast<double>(over) / R;
    if (!(eps > 0.0))
        return;

    std::vector<double> ratio(eps_hat.size());
    for (std::size_t i = 0; i < ratio.size(); ++i)
        ratio[i] = eps_hat[i] / eps;
    double sum = 0.0, mse = 0.0, plus = 0.0, mx = ratio.front();
    for (double v : ratio) {
        sum += v;
        mse += (v - 1.0) * (v - 1.0);
        plus += std::max(1.0 - v, 0.0);
        mx = std::max(mx, v);
    }
    const double mean = sum / R;
    double ss = 0.0;
    for (double v : ratio)
        ss += (v - mean) * (v - mean);
    row.maximum = mx;
    row.mean = mean;
    row.median = median_of(ratio);
    row.deviation = ratio.size() > 1 ? std::sqrt(ss / (R - 1.0)) : 0.0;
    row.relative_mse = mse / R;
    row.plus_risk = plus / R;
    row.histogram = make_histogram(ratio, histogram_max.value_or(std::max(3.0, mx)));
}

} // namespace detail

/// Runs cfg.reps cycles. Each cycle draws one sample and evaluates every
/// (estimator, alpha) on it. Cycle i uses stream (seed, i).
inline ReplicationReport run_replication_study(const ExperimentConfig& cfg, const CalibrationSet& tables)
{
    const TwoPointMixture truth = cfg.model();
    const double n = static_cast<double>(cfg.n);

    ReplicationReport rep;
    rep.config_hash = cfg.hash();
    rep.n = cfg.n;
    rep.epsilon = truth.epsilon;
    rep.mu = truth.mu;

    for (auto est : cfg.estimators)
        for (double alpha : cfg.alphas) {
            ReplicationRow row;
            row.estimator = est;
            row.alpha = alpha;
            if (est == EstimatorKind::Cjl) {
                if (cfg.a_n) {
                    row.statistic = "fixed";
                    row.a = *cfg.a_n;
                } else {
                    if (!tables.cjl)
                        throw std::runtime_error("missing critical value table " +
                                                 table_key(cfg.cjl_statistic, cfg.n));
                    row.statistic = to_string(tables.cjl->statistic);
                    row.a = tables.cjl->at(alpha);
                }
            } else {
                if (!tables.mr)
                    throw std::runtime_error("missing critical value table " +
                                             table_key(StatisticKind::WStar, cfg.n));
                row.statistic = to_string(StatisticKind::WStar);
                row.a = tables.mr->at(alpha);
            }
            row.a_normalized = row.a / lil_scale(n);
            rep.rows.push_back(row);
        }

    const std::size_t cols = rep.rows.size();
    std::vector<std::vector<double>> per_cycle(cfg.reps, std::vector<double>(cols, 0.0));
    const bool need_p = cfg.needs_mr_table();
    parallel_for(cfg.reps, cfg.workers, [&](std::size_t i) {
        const SortedSample s = sample(truth, cfg.n, derive_seed(cfg.seed, i), cfg.sampling);
        std::optional<PValues> pv;
        if (need_p)
            pv = p_values(s);
        auto& out = per_cycle[i];
        for (std::size_t c = 0; c < cols; ++c) {
            const auto& row = rep.rows[c];
            switch (row.estimator) {
            case EstimatorKind::Cjl:
                out[c] = cjl_estimate(s, row.a, cfg.cjl_below_range).eps_hat;
                break;
            case EstimatorKind::Mr:
                out[c] = mr_lower_bound(*pv, row.a);
                break;
            case EstimatorKind::MrPlus:
                out[c] = mr_plus_lower_bound(*pv, row.a);
                break;
            }
        }
    });

    std::vector<double> column(cfg.reps);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t i = 0; i < cfg.reps; ++i)
            column[i] = per_cycle[i][c];
        detail::summarize(rep.rows[c], column, truth.epsilon, cfg.histogram_max);
    }
    rep.cycle_values = std::move(per_cycle);
    return rep;
}

inline nlohmann::json to_json(const Histogram& h)
{
    nlohmann::json j;
    j["lower"] = h.lower;
    j["upper"] = h.upper;
    j["bins"] = h.counts.size();
    j["counts"] = h.counts;
    j["overflow"] = h.overflow;
    j["log_counts"] = h.log_counts();
    return j;
}

inline nlohmann::json to_json(const ReplicationReport& r)
{
    nlohmann::json j;
    j["config_hash"] = r.config_hash;
    j["n"] = r.n;
    j["epsilon"] = r.epsilon;
    j["mu"] = r.mu;
    j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json o;
        o["estimator"] = to_string(row.estimator);
        o["alpha"] = row.alpha;
        o["statistic"] = row.statistic;
        o["a"] = row.a;
        o["a_normalized"] = row.a_normalized;
        o["cycles"] = row.cycles;
        o["overestimation_frequency"] = row.overestimation_frequency;
        auto put = [&](const char* key, const std::optional<double>& v) {
            o[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
        };
        put("maximum", row.maximum);
        put("mean", row.mean);
        put("median", row.median);
        put("deviation", row.deviation);
        put("relative_mse", row.relative_mse);
        put("plus_risk", row.plus_risk);
        o["histogram"] = row.histogram ? to_json(*row.histogram) : nlohmann::json(nullptr);
        j["rows"].push_back(o);
    }
    return j;
}

inline std::string csv_header(const std::string& config_hash, const std::string& columns)
{
    return "# config_hash=" + config_hash + " columns=" + columns + "\n";
}

inline std::string report_csv(const ReplicationReport& r)
{
    std::string s = csv_header(r.config_hash,
                               "estimator,alpha,statistic,a,a_normalized,cycles,overestimation_frequency,"
                               "maximum,mean,median,deviation,relative_mse,plus_risk");
    auto opt = [](const std::optional<double>& v) { return v ? fmt12(*v) : std::string(); };
    for (const auto& row : r.rows) {
        s += to_string(row.estimator) + ',' + fmt12(row.alpha) + ',' + row.statistic + ',' + fmt12(row.a) + ',' +
             fmt12(row.a_normalized) + ',' + std::to_string(row.cycles) + ',' +
             fmt12(row.overestimation_frequency) + ',' + opt(row.maximum) + ',' + opt(row.mean) + ',' +
             opt(row.median) + ',' + opt(row.deviation) + ',' + opt(row.relative_mse) + ',' +
             opt(row.plus_risk) + '\n';
    }
    return s;
}

inline std::string column_name(const ReplicationRow& row)
{
    return to_string(row.estimator) + "@" + fmt12(row.alpha);
}

inline std::string cycles_csv(const ReplicationReport& r)
{
    std::string cols = "cycle";
    for (const auto& row : r.rows)
        cols += "," + column_name(row);
    std::string s = csv_header(r.config_hash, cols);
    for (std::size_t i = 0; i < r.cycle_values.size(); ++i) {
        s += std::to_string(i);
        for (double v : r.cycle_values[i])
            s += ',' + fmt17(v);
        s += '\n';
    }
    return s;
}

inline std::string histogram_csv(const ReplicationReport& r)
{
    std::string s = csv_header(r.config_hash, "estimator,alpha,bin_lower,bin_upper,count,log_count");
    for (const auto& row : r.rows) {
        if (!row.histogram)
            continue;
        const auto& h = *row.histogram;
        const auto logs = h.log_counts();
        const double width = (h.upper - h.lower) / static_cast<double>(h.counts.size());
        const std::string head = to_string(row.estimator) + ',' + fmt12(row.alpha) + ',';
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            s += head + fmt12(h.lower + width * static_cast<double>(b)) + ',' +
                 fmt12(h.lower + width * static_cast<double>(b + 1)) + ',' + std::to_string(h.counts[b]) + ',' +
                 fmt12(logs[b]) + '\n';
        s += head + fmt12(h.upper) + ",inf," + std::to_string(h.overflow) + ',' +
             fmt12(std::log10(1.0 + static_cast<double>(h.overflow))) + '\n';
    }
    return s;
}

/// Writes config.txt, report.json, report.csv, cycles.csv and histogram.csv.
inline void write_report(const ExperimentConfig& cfg, const ReplicationReport& r, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    write_text(dir / "config.txt", cfg.canonical());
    write_text(dir / "report.json", to_json(r).dump(2) + "\n");
    write_text(dir / "report.csv", report_csv(r));
    write_text(dir / "cycles.csv", cycles_csv(r));
    write_text(dir / "histogram.csv", histogram_csv(r));
}

/// Full pipeline from config to the files in `dir`.
inline ReplicationReport simulate(ExperimentConfig cfg, const std::filesystem::path& dir)
{
    cfg.validate();
    std::filesystem::create_directories(dir);
    const auto tables = run_calibration(cfg, dir);
    auto report = run_replication_study(cfg, tables);
    write_report(cfg, report, dir);
    return report;
}

// ---------------------------------------------------------------------------
// Boundary map

struct AxisRange {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t steps = 2;

    double at(std::size_t i) const
    {
        return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
    }
};

/// "LO:HI:STEPS", endpoints included.
inline AxisRange parse_range(const std::string& s, const std::string& what)
{
    const auto a = s.find(':');
    const auto b = a == std::string::npos ? a : s.find(':', a + 1);
    if (a == std::string::npos || b == std::string::npos)
        throw std::invalid_argument(what + ": expected LO:HI:STEPS, got '" + s + "'");
    AxisRange r;
    r.lo = parse_double(s.substr(0, a), what);
    r.hi = parse_double(s.substr(a + 1, b - a - 1), what);
    r.steps = parse_u64(s.substr(b + 1), what);
    if (r.steps < 2)
        throw std::invalid_argument(what + ": STEPS must be at least 2");
    if (!(r.hi > r.lo))
        throw std::invalid_argument(what + ": HI must exceed LO");
    return r;
}

struct BoundaryConfig {
    AxisRange beta{0.55, 0.95, 5};
    AxisRange r{0.05, 0.95, 5};
    std::uint64_t n = 10000;
    std::uint64_t reps = 50;
    double alpha = 0.1;
    std::uint64_t seed = 1;
    std::uint64_t calibration_reps = 1000;
    StatisticKind statistic = StatisticKind::WPlusPlus;
    double c0 = default_c0;
    SamplingMode sampling = SamplingMode::Binomial;
    std::string table;  ///< empty: calibrate in-process
    unsigned workers = 0;

    std::string canonical() const
    {
        std::ostringstream o;
        o << "beta=" << fmt17(beta.lo) << ':' << fmt17(beta.hi) << ':' << beta.steps << '\n'
          << "r=" << fmt17(r.lo) << ':' << fmt17(r.hi) << ':' << r.steps << '\n'
          << "n=" << n << '\n'
          << "reps=" << reps << '\n'
          << "alpha=" << fmt17(alpha) << '\n'
          << "seed=" << seed << '\n'
          << "calibration_reps=" << calibration_reps << '\n'
          << "statistic=" << to_string(statistic) << '\n'
          << "c0=" << fmt17(c0) << '\n'
          << "sampling=" << to_string(sampling) << '\n'
          << "table=" << table << '\n';
        return o.str();
    }
};

struct BoundaryCell {
    double beta;
    double r;
    bool detectable;
    bool mr_consistent;
    double median_ratio;
};

struct BoundaryMap {
    std::string config_hash;
    double a = 0.0;
    std::vector<BoundaryCell> cells;
};

inline BoundaryMap run_boundary_map(const BoundaryConfig& cfg)
{
    if (cfg.n < 2)
        throw std::invalid_argument("boundary: n must be at least 2");
    if (cfg.reps < 1)
        throw std::invalid_argument("boundary: reps must be at least 1");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
        throw std::invalid_argument("boundary: alpha must lie in (0, 1)");
    if (cfg.statistic == StatisticKind::WStar)
        throw std::invalid_argument("boundary: statistic must be wn_plus or wn_plus_plus");
    const double n = static_cast<double>(cfg.n);

    std::vector<SparseCalibration> cals;
    for (std::size_t i = 0; i < cfg.beta.steps; ++i)
        for (std::size_t k = 0; k < cfg.r.steps; ++k)
            cals.emplace_back(n, cfg.beta.at(i), cfg.r.at(k));

    BoundaryMap map;
    map.config_hash = hex64(fnv1a64(cfg.canonical()));
    if (!cfg.table.empty())
        map.a = load_required_table(cfg.table, cfg.statistic, cfg.n, {cfg.alpha}).at(cfg.alpha);
    else
        map.a = calibrate_table(cfg.statistic, cfg.n, cfg.c0, cfg.calibration_reps, {cfg.alpha},
                                calibration_seed(cfg.seed, cfg.statistic), cfg.workers)
                    .at(cfg.alpha);

    const std::size_t cells = cals.size();
    std::vector<double> ratios(cells * cfg.reps);
    parallel_for(cells * cfg.reps, cfg.workers, [&](std::size_t job) {
        const std::size_t c = job / cfg.reps;
        const std::size_t i = job % cfg.reps;
        const TwoPointMixture truth = calibrate(cals[c]);
        const SortedSample s = sample(truth, cfg.n, derive_seed(derive_seed(cfg.seed, c), i), cfg.sampling);
        ratios[job] = cjl_estimate(s, map.a).eps_hat / truth.epsilon;
    });

    for (std::size_t c = 0; c < cells; ++c) {
        std::vector<double> v(ratios.begin() + static_cast<std::ptrdiff_t>(c * cfg.reps),
                              ratios.begin() + static_cast<std::ptrdiff_t>((c + 1) * cfg.reps));
        map.cells.push_back(
            {cals[c].beta, cals[c].r, is_detectable(cals[c]), mr_consistent(cals[c]), detail::median_of(v)});
    }
    return map;
}

inline std::string boundary_csv(const BoundaryMap& m)
{
    std::string s = csv_header(m.config_hash, "beta,r,detectable,mr_consistent,median_ratio,a");
    for (const auto& c : m.cells)
        s += fmt12(c.beta) + ',' + fmt12(c.r) + ',' + (c.detectable ? "1" : "0") + ',' +
             (c.mr_consistent ? "1" : "0") + ',' + fmt12(c.median_ratio) + ',' + fmt12(m.a) + '\n';
    return s;
}

// ---------------------------------------------------------------------------
// Estimation from a data file

/// Newline-delimited z-scores; blank lines are skipped.
inline std::vector<double> read_z_scores(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open input '" + path + "'");
    std::vector<double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty())
            continue;
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": cannot parse '" + t +
                                        "' as a number");
        out.push_back(v);
    }
    if (out.empty())
        throw std::invalid_argument(path + ": no observations");
    return out;
}

struct TableChoice {
    CriticalValueTable table;
    std::string path;
    std::optional<std::string> warning;
};

/// Picks the table for `n`: `path` is a table file or a directory of them.
/// The nearest n (in ratio) is used with a warning; a ratio beyond 2 is refused.
inline TableChoice choose_table(const std::string& path, std::uint64_t n, const std::vector<StatisticKind>& kinds)
{
    std::vector<std::pair<std::string, CriticalValueTable>> found;
    if (std::filesystem::is_directory(path)) {
        std::vector<std::string> files;
        for (const auto& e : std::filesystem::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".json")
                files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            CriticalValueTable t;
            try {
                t = read_table(f);
            } catch (const std::exception&) {
                continue;
            }
            if (std::find(kinds.begin(), kinds.end(), t.statistic) != kinds.end())
                found.emplace_back(f, t);
        }
        if (found.empty())
            throw std::runtime_error("no critical value table for " + to_string(kinds.front()) + " in '" +
                                     path + "'");
    } else {
        auto t = read_table(path);
        if (std::find(kinds.begin(), kinds.end(), t.statistic) == kinds.end())
            throw std::runtime_error("table '" + path + "' holds " + to_string(t.statistic) +
                                     ", which does not fit this estimator");
        found.emplace_back(path, t);
    }

    auto distance = [&](const CriticalValueTable& t) {
        return std::abs(std::log(static_cast<double>(t.n) / static_cast<double>(n)));
    };
    // Nearest n; ties go to the earlier statistic in `kinds`.
    auto rank = [&](const CriticalValueTable& t) {
        return static_cast<std::size_t>(std::find(kinds.begin(), kinds.end(), t.statistic) - kinds.begin());
    };
    auto best = std::min_element(found.begin(), found.end(), [&](const auto& x, const auto& y) {
        const double dx = distance(x.second), dy = distance(y.second);
        if (dx != dy)
            return dx < dy;
        return rank(x.second) < rank(y.second);
    });

    TableChoice choice{best->second, best->first, std::nullopt};
    const double ratio = std::max(static_cast<double>(choice.table.n) / static_cast<double>(n),
                                  static_cast<double>(n) / static_cast<double>(choice.table.n));
    if (ratio > 2.0)
        throw std::runtime_error("table n=" + std::to_string(choice.table.n) + " at '" + choice.path +
                                 "' is too far from the data length n=" + std::to_string(n) +
                                 " (more than a factor of 2)");
    if (choice.table.n != n)
        choice.warning = "using table n=" + std::to_string(choice.table.n) + " for data of length n=" +
                         std::to_string(n);
    return choice;
}

struct EstimateReport {
    std::string input;
    std::uint64_t n = 0;
    EstimatorKind estimator = EstimatorKind::Cjl;
    double alpha = 0.0;
    std::string statistic;
    std::string table_path;
    std::uint64_t table_n = 0;
    double a = 0.0;
    double eps_hat = 0.0;
    std::optional<std::size_t> winner;
    std::optional<double> t_left;
    std::optional<double> t_right;
    std::optional<double> mu_hat;
    std::optional<std::string> warning;
};

inline EstimateReport estimate_from_file(const std::string& path, double alpha, const std::string& table_path,
                                         EstimatorKind estimator = EstimatorKind::Cjl)
{
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("estimate: alpha must lie in (0, 1)");
    auto z = read_z_scores(path);
    const SortedSample s(std::move(z));
    if (s.size() < 2)
        throw std::invalid_argument("estimate: at least two observations are required");

    const std::vector<StatisticKind> kinds =
        estimator == EstimatorKind::Cjl ? std::vector{StatisticKind::WPlusPlus, StatisticKind::WPlus}
                                        : std::vector{StatisticKind::WStar};
    const auto choice = choose_table(table_path, s.size(), kinds);

    EstimateReport rep;
    rep.input = path;
    rep.n = s.size();
    rep.estimator = estimator;
    rep.alpha = alpha;
    rep.statistic = to_string(choice.table.statistic);
    rep.table_path = choice.path;
    rep.table_n = choice.table.n;
    rep.a = choice.table.at(alpha);
    rep.warning = choice.warning;
    switch (estimator) {
    case EstimatorKind::Cjl: {
        const auto r = cjl_estimate(s, rep.a);
        rep.eps_hat = r.eps_hat;
        if (r.winner) {
            const Grid g = build_grid(static_cast<double>(s.size()));
            rep.winner = *r.winner;
            rep.t_left = g.points[*r.winner];
            rep.t_right = g.points[*r.winner + 1];
            rep.mu_hat = r.pairs[*r.winner].mu_hat;
        }
        break;
    }
    case EstimatorKind::Mr:
        rep.eps_hat = mr_lower_bound(s, rep.a);
        break;
    case EstimatorKind::MrPlus:
        rep.eps_hat = mr_plus_lower_bound(s, rep.a);
        break;
    }
    return rep;
}

inline nlohmann::json to_json(const EstimateReport& r)
{
    nlohmann::json j;
    j["input"] = r.input;
    j["n"] = r.n;
    j["estimator"] = to_string(r.estimator);
    j["alpha"] = r.alpha;
    j["statistic"] = r.statistic;
    j["table"] = r.table_path;
    j["table_n"] = r.table_n;
    j["a"] = r.a;
    j["eps_hat"] = r.eps_hat;
    j["winner_pair"] = r.winner ? nlohmann::json(*r.winner) : nlohmann::json(nullptr);
    j["t_left"] = r.t_left ? nlohmann::json(*r.t_left) : nlohmann::json(nullptr);
    j["t_right"] = r.t_right ? nlohmann::json(*r.t_right) : nlohmann::json(nullptr);
    // JSON has no infinity: mu_hat is null and mu_hat_infinite is set.
    const bool inf_mu = r.mu_hat && std::isinf(*r.mu_hat);
    j["mu_hat"] = r.mu_hat && !inf_mu ? nlohmann::json(*r.mu_hat) : nlohmann::json(nullptr);
    j["mu_hat_infinite"] = inf_mu;
    j["warning"] = r.warning ? nlohmann::json(*r.warning) : nlohmann::json(nullptr);
    return j;
}

inline std::string to_text(const EstimateReport& r)
{
    std::ostringstream o;
    o << "input:      " << r.input << " (n=" << r.n << ")\n"
      << "estimator:  " << to_string(r.estimator) << '\n'
      << "alpha:      " << fmt12(r.alpha) << '\n'
      << "table:      " << r.table_path << " (" << r.statistic << ", n=" << r.table_n << ")\n"
      << "a:          " << fmt12(r.a) << '\n'
      << "eps_hat:    " << fmt12(r.eps_hat) << '\n';
    if (r.winner)
        o << "winner:     pair " << *r.winner << " [" << fmt12(*r.t_left) << ", " << fmt12(*r.t_right) << "]\n";
    else if (r.estimator == EstimatorKind::Cjl)
        o << "winner:     none\n";
    if (r.mu_hat)
        o << "mu_hat:     " << fmt12(*r.mu_hat) << '\n';
    return o.str();
}

} // namespace sparsemix
