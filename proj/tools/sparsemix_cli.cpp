#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include <sparsemix/simlab.hpp>

using namespace sparsemix;

namespace {

struct CalibrateArgs {
    std::uint64_t n = 0;
    std::string stat;
    std::uint64_t reps = 5000;
    std::string alphas = "0.005,0.01,0.025,0.05,0.075,0.1,0.25,0.5";
    std::uint64_t seed = 1;
    std::string out;
    double c0 = default_c0;
    unsigned workers = 0;
};

int run_calibrate(const CalibrateArgs& a)
{
    const auto kind = parse_statistic(a.stat);
    if (a.n < 1)
        throw std::invalid_argument("calibrate: --n must be positive");
    if (a.reps < 1)
        throw std::invalid_argument("calibrate: --reps must be positive");
    const auto alphas = parse_alphas(a.alphas);
    const auto table = calibrate_table(kind, a.n, a.c0, a.reps, alphas, a.seed, a.workers);
    write_table(table, a.out);
    std::cout << "wrote " << a.out << " (" << to_string(kind) << ", n=" << a.n << ", reps=" << a.reps << ")\n";
    for (const auto& q : table.quantiles)
        std::cout << "  alpha=" << fmt12(q.alpha) << "  a=" << fmt12(q.a)
                  << "  a/sqrt(2 ln ln n)=" << fmt12(q.a / lil_scale(static_cast<double>(a.n))) << '\n';
    return 0;
}

int run_simulate(const std::string& config_path, const std::map<std::string, std::string>& overrides,
                 const std::string& out)
{
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    for (const auto& [key, value] : overrides)
        cfg.set(key, value);
    const auto report = simulate(cfg, out);
    std::cout << "config_hash " << report.config_hash << ", " << report.cycle_values.size() << " cycles, output in "
              << out << '\n';
    for (const auto& row : report.rows) {
        std::cout << "  " << to_string(row.estimator) << " alpha=" << fmt12(row.alpha) << " a=" << fmt12(row.a)
                  << " P(over)=" << fmt12(row.overestimation_frequency);
        if (row.mean)
            std::cout << " mean=" << fmt12(*row.mean) << " median=" << fmt12(*row.median)
                      << " max=" << fmt12(*row.maximum);
        std::cout << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Lower confidence bounds for the proportion of non-null effects in sparse normal mixtures"};
    app.require_subcommand(1);

    CalibrateArgs ca;
    auto* cal = app.add_subcommand("calibrate", "Simulate a sup statistic and persist its critical values");
    cal->add_option("--n", ca.n, "Sample size")->required();
    cal->add_option("--stat", ca.stat, "wn_plus, wn_plus_plus or wn_star")->required();
    cal->add_option("--reps", ca.reps, "Monte Carlo replicates");
    cal->add_option("--alphas", ca.alphas, "Comma-separated levels");
    cal->add_option("--seed", ca.seed, "Master seed");
    cal->add_option("--out", ca.out, "Output JSON path")->required();
    cal->add_option("--c0", ca.c0, "Window constant for wn_plus_plus");
    cal->add_option("--workers", ca.workers, "Worker threads (0 = all cores)");

    std::string config_path;
    std::string sim_out = "sparsemix_out";
    std::map<std::string, std::string> overrides;
    auto* sim = app.add_subcommand("simulate", "Run a replication study from a key=value config");
    sim->add_option("--config", config_path, "Config file");
    sim->add_option("--out", sim_out, "Output directory");
    for (const auto& key : ExperimentConfig::keys()) {
        std::string names = "--" + key;
        if (key.find('_') != std::string::npos) {
            std::string dashed = key;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            names += ",--" + dashed;
        }
        sim->add_option_function<std::string>(
            names, [&overrides, key](const std::string& v) { overrides[key] = v; }, "Overrides config key " + key);
    }

    BoundaryConfig bc;
    std::string beta_range, r_range, b_stat = "wn_plus_plus", b_sampling = "binomial", b_out;
    auto* bnd = app.add_subcommand("boundary", "Sweep a (beta, r) grid and write a CSV map");
    bnd->add_option("--beta", beta_range, "LO:HI:STEPS")->required();
    bnd->add_option("--r", r_range, "LO:HI:STEPS")->required();
    bnd->add_option("--n", bc.n, "Sample size")->required();
    bnd->add_option("--reps", bc.reps, "Cycles per cell");
    bnd->add_option("--alpha", bc.alpha, "Level");
    bnd->add_option("--seed", bc.seed, "Master seed");
    bnd->add_option("--out", b_out, "Output CSV path")->required();
    bnd->add_option("--calibration-reps,--calibration_reps", bc.calibration_reps, "Replicates for the critical value");
    bnd->add_option("--stat", b_stat, "wn_plus or wn_plus_plus");
    bnd->add_option("--c0", bc.c0, "Window constant for wn_plus_plus");
    bnd->add_option("--sampling", b_sampling, "binomial or fixed_count");
    bnd->add_option("--table", bc.table, "Critical value table instead of calibrating");
    bnd->add_option("--workers", bc.workers, "Worker threads (0 = all cores)");

    std::string e_input, e_table, e_estimator = "cjl", e_json;
    double e_alpha = 0.05;
    auto* est = app.add_subcommand("estimate", "Lower confidence bound for a file of z-scores");
    est->add_option("--input", e_input, "Newline-delimited z-scores")->required();
    est->add_option("--alpha", e_alpha, "Level")->required();
    est->add_option("--table", e_table, "Table file or directory of tables")->required();
    est->add_option("--estimator", e_estimator, "cjl, mr or mr_plus");
    est->add_option("--json", e_json, "Also write the report as JSON to this path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*cal)
            return run_calibrate(ca);
        if (*sim)
            return run_simulate(config_path, overrides, sim_out);
        if (*bnd) {
            bc.beta = parse_range(beta_range, "--beta");
            bc.r = parse_range(r_range, "--r");
            bc.statistic = parse_statistic(b_stat);
            bc.sampling = parse_sampling_mode(b_sampling);
            const auto map = run_boundary_map(bc);
            write_text(b_out, boundary_csv(map));
            std::cout << "wrote " << b_out << " (" << map.cells.size() << " cells, a=" << fmt12(map.a) << ")\n";
            return 0;
        }
        if (*est) {
            const auto rep = estimate_from_file(e_input, e_alpha, e_table, parse_estimator(e_estimator));
            if (rep.warning)
                std::cerr << "warning: " << *rep.warning << '\n';
            std::cout << to_text(rep);
            if (!e_json.empty())
                write_text(e_json, to_json(rep).dump(2) + "\n");
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
