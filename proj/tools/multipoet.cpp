// multipoet: covariance estimation under global + group-local latent
// factor structure, with simulation, factor-count selection, membership
// detection, and a constrained minimum-variance backtester.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <multipoet/multipoet.hpp>

namespace fs = std::filesystem;
using namespace multipoet;

namespace {

int parse_count(const std::string& text, const char* what) {
    if (text == "auto") return -1;
    try {
        std::size_t used = 0;
        const int value = std::stoi(text, &used);
        if (used == text.size() && value >= 0) return value;
    } catch (...) {
    }
    throw InvalidConfig(std::string(what) + " must be 'auto' or a nonnegative integer, got '" +
                        text + "'");
}

double parse_tau(const std::string& text) {
    if (text == "auto") return -1.0;
    try {
        std::size_t used = 0;
        const double value = std::stod(text, &used);
        if (used == text.size() && value >= 0.0) return value;
    } catch (...) {
    }
    throw InvalidConfig("tau must be 'auto' or a nonnegative real, got '" + text + "'");
}

ThresholdRule parse_rule(const std::string& text) {
    if (text == "soft") return ThresholdRule::soft;
    if (text == "hard") return ThresholdRule::hard;
    if (text == "sector") return ThresholdRule::sector_block;
    throw InvalidConfig("rule must be soft, hard or sector, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (...) {
            throw InvalidConfig(std::string(what) + ": bad integer '" + item + "'");
        }
    }
    if (out.empty()) throw InvalidConfig(std::string(what) + " is empty");
    return out;
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw InvalidConfig(std::string(what) + ": bad number '" + item + "'");
        }
    }
    if (out.empty()) throw InvalidConfig(std::string(what) + " is empty");
    return out;
}

std::vector<std::string> parse_string_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream stream(text);
    std::string item;
    while (std::getline(stream, item, ',')) out.push_back(item);
    return out;
}

void ensure_out_dir(const std::string& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw InvalidConfig("cannot create output directory '" + out + "'");
}

std::ofstream open_out(const std::string& path) {
    std::ofstream stream(path);
    if (!stream) throw InvalidConfig("cannot write '" + path + "'");
    return stream;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::string grid_axis = "p";
    std::string values = "60,300,600";
    int num_groups = 10;
    int group_size = 30;
    int num_obs = 300;
    int k = 3;
    int rj = 2;
    double m = 0.3;
    std::string methods = "samcov,poet,poet2,dpoet";
    int reps = 50;
    std::uint64_t seed = 1;
    std::string tau = "auto";
    std::string factors = "auto";
    int rmax = 10;
    int kmax = -1;
    double phi_scale = 0.3;
    std::string target = "global";
    int poet_group_factors = -1;
    double mix_rate = 0.03;
    std::string out = "sim_out";
};

void write_manifest(std::ofstream& out, const std::vector<std::pair<std::string, std::string>>& kv) {
    for (const auto& [key, value] : kv) out << key << "=" << value << "\n";
}

int run_simulate(const SimulateArgs& args) {
    SimConfig config;
    if (args.grid_axis == "p") {
        config.axis = GridAxis::dimension;
        config.fixed_groups = args.num_groups;
    } else if (args.grid_axis == "J") {
        config.axis = GridAxis::groups;
        config.fixed_group_size = args.group_size;
    } else {
        throw InvalidConfig("grid axis must be p or J");
    }
    config.grid = parse_int_list(args.values, "grid values");
    config.num_obs = args.num_obs;
    config.k = args.k;
    config.r_per_group = args.rj;
    config.m = args.m;
    config.methods = parse_string_list(args.methods);
    config.reps = args.reps;
    config.seed = args.seed;
    config.tau = parse_tau(args.tau);
    if (args.factors == "auto") {
        config.auto_factors = true;
    } else if (args.factors == "true") {
        config.auto_factors = false;
    } else {
        throw InvalidConfig("factors must be auto or true");
    }
    config.rmax = args.rmax;
    if (args.kmax >= 0) config.kmax_pad = args.kmax;  // interpreted as pad over r
    config.phi_scale = args.phi_scale;
    if (args.target == "global") {
        config.target = SimTarget::global_matrix;
    } else if (args.target == "local") {
        config.target = SimTarget::local_block;
    } else {
        throw InvalidConfig("target must be global or local");
    }
    config.poet_group_factors = args.poet_group_factors;
    config.mix_rate = args.mix_rate;

    const auto report = run_replications(config);

    ensure_out_dir(args.out);
    auto csv = open_out(args.out + "/errors.csv");
    csv << "grid,method,norm,mean,stderr,reps\n";
    for (const auto& cell : report.cells) {
        csv << cell.grid_value << ',' << cell.method << ',' << cell.norm << ','
            << format_g17(cell.mean()) << ',' << format_g17(cell.stderr_mean()) << ','
            << cell.values.size() << '\n';
    }
    auto manifest = open_out(args.out + "/manifest.txt");
    write_manifest(manifest,
                   {{"command", "simulate"},
                    {"grid_axis", args.grid_axis},
                    {"grid_values", args.values},
                    {"J", std::to_string(args.num_groups)},
                    {"pj", std::to_string(args.group_size)},
                    {"T", std::to_string(args.num_obs)},
                    {"k", std::to_string(args.k)},
                    {"rj", std::to_string(args.rj)},
                    {"m", format_g17(args.m)},
                    {"methods", args.methods},
                    {"reps", std::to_string(args.reps)},
                    {"seed", std::to_string(args.seed)},
                    {"tau", args.tau},
                    {"factors", args.factors},
                    {"rmax", std::to_string(args.rmax)},
                    {"phi_scale", format_g17(args.phi_scale)},
                    {"target", args.target},
                    {"poet_group_factors", std::to_string(args.poet_group_factors)},
                    {"mix_rate", format_g17(args.mix_rate)}});
    return 0;
}

// ------------------------------------------------------------------ select

int run_select(const std::string& returns_path, int kmax, double phi_scale, int rmax,
               const std::string& membership_path, bool as_csv) {
    const auto panel = read_returns_csv(returns_path);
    const auto p = static_cast<int>(panel.cols());
    const auto num_obs = static_cast<int>(panel.rows());
    int groups_guess = 1;
    if (!membership_path.empty()) {
        const auto labels = read_label_csv(membership_path, "group");
        groups_guess = membership_for_panel(panel, labels).first.num_groups;
    }
    int k_max = kmax;
    if (k_max < 0) k_max = std::min({10 + groups_guess * rmax, p - 1, num_obs - 1});
    if (k_max < 2) throw InvalidKMax("panel too small for model selection");
    const double phi = phi_scale * std::log(static_cast<double>(p));
    const auto sel = mer_select(sample_covariance(panel), k_max, phi);

    if (as_csv) {
        std::cout << "field,value\n";
        std::cout << "variant," << variant_name(sel.variant) << "\n";
        std::cout << "k_hat," << sel.k_hat << "\n";
        std::cout << "k1," << sel.k1 << "\nk2," << sel.k2 << "\n";
        std::cout << "er1," << format_g17(sel.er1) << "\ner2," << format_g17(sel.er2) << "\n";
        std::cout << "phi_p," << format_g17(sel.phi_p) << "\n";
        for (std::size_t m = 0; m < sel.ratios.size(); ++m) {
            std::cout << "ER(" << m + 1 << ")," << format_g17(sel.ratios[m]) << "\n";
        }
    } else {
        std::cout << "model variant : " << variant_name(sel.variant) << "\n";
        std::cout << "k_hat         : " << sel.k_hat << "\n";
        std::cout << "spikes        : k1=" << sel.k1 << " (ER=" << sel.er1 << "), k2=" << sel.k2
                  << " (ER=" << sel.er2 << ")\n";
        std::cout << "phi_p         : " << sel.phi_p << "\n";
        std::cout << "eigenvalue ratios:\n";
        for (std::size_t m = 0; m < sel.ratios.size(); ++m) {
            std::cout << "  ER(" << m + 1 << ") = " << sel.ratios[m] << "\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------- estimate

struct EstimateArgs {
    std::string returns_path;
    std::string membership_path;
    std::string sectors_path;
    std::string method = "samcov";
    std::string k = "auto";
    std::string r = "auto";
    std::string tau = "auto";
    std::string rule = "soft";
    int kmax = -1;
    int rmax = 10;
    double phi_scale = 0.3;
    int cluster = 0;
    std::uint64_t seed = 1;
    bool components = false;
    std::string out = "estimate_out";
};

int run_estimate(const EstimateArgs& args) {
    const auto panel = read_returns_csv(args.returns_path);

    EstimatorSpec spec;
    spec.method = args.method;
    spec.k = parse_count(args.k, "k");
    spec.r = parse_count(args.r, "r");
    spec.tau = parse_tau(args.tau);
    spec.rule = parse_rule(args.rule);
    spec.k_max = args.kmax;
    spec.r_max = args.rmax;
    spec.phi_scale = args.phi_scale;
    if (!args.sectors_path.empty()) {
        const auto sector_map = read_label_csv(args.sectors_path, "sector");
        std::vector<std::string> sectors;
        for (const auto& asset : panel.asset_ids) {
            const auto it = sector_map.find(asset);
            if (it == sector_map.end()) {
                throw InvalidInput("asset '" + asset + "' missing from sector file");
            }
            sectors.push_back(it->second);
        }
        spec.sector_labels = sectors;
    }

    std::optional<GroupStructure> truth_groups;
    if (!args.membership_path.empty()) {
        const auto labels = read_label_csv(args.membership_path, "group");
        truth_groups = membership_for_panel(panel, labels).first;
        spec.groups = truth_groups;
    }

    ensure_out_dir(args.out);
    auto log = open_out(args.out + "/estimate_log.txt");
    log << "method=" << args.method << "\n";

    if (args.cluster > 0) {
        // detect membership with regularized spectral clustering
        const Matrix sigma_hat = sample_covariance(panel);
        int k_for_removal = spec.k;
        if (k_for_removal < 0) {
            const int k_max = spec.k_max >= 0
                                  ? spec.k_max
                                  : std::min({10 + args.cluster * args.rmax,
                                              static_cast<int>(panel.cols()) - 1,
                                              static_cast<int>(panel.rows()) - 1});
            if (k_max < 2) throw InvalidKMax("panel too small for model selection");
            k_for_removal =
                mer_select(sigma_hat, k_max,
                           args.phi_scale * std::log(static_cast<double>(panel.cols())))
                    .k_hat;
        }
        const auto remainder = principal_truncation(sigma_hat, k_for_removal).second;
        const auto detected = rsc_cluster(remainder, args.cluster, args.seed);
        spec.groups = make_groups(detected.labels);
        log << "cluster_K=" << args.cluster << "\n";
        log << "cluster_inertia=" << format_g17(detected.inertia) << "\n";
        if (truth_groups) {
            log << "cluster_misclassification="
                << format_g17(misclassification_rate(detected.labels, truth_groups->membership))
                << "\n";
        }
        auto clusters = open_out(args.out + "/clusters.csv");
        clusters << "asset_id,group\n";
        for (std::size_t i = 0; i < panel.asset_ids.size(); ++i) {
            clusters << panel.asset_ids[i] << ',' << detected.labels[i] << '\n';
        }
    }

    const auto outcome = resolve_estimate(panel, spec);
    write_matrix_csv(args.out + "/covariance.csv", outcome.estimate.assembled, panel.asset_ids);
    if (args.components) {
        write_matrix_csv(args.out + "/global_part.csv", outcome.estimate.global_part,
                         panel.asset_ids);
        write_matrix_csv(args.out + "/local_part.csv", outcome.estimate.local_part,
                         panel.asset_ids);
        write_matrix_csv(args.out + "/residual_part.csv", outcome.estimate.residual_part,
                         panel.asset_ids);
    }
    log << "k=" << outcome.k << "\n";
    if (outcome.selection) {
        log << "variant=" << variant_name(outcome.selection->variant) << "\n";
    }
    if (!outcome.r.empty()) {
        log << "r=";
        for (std::size_t j = 0; j < outcome.r.size(); ++j) {
            if (j > 0) log << ',';
            log << outcome.r[j];
        }
        log << "\n";
    }
    log << "tau=" << format_g17(outcome.tau) << "\n";
    return 0;
}

// ---------------------------------------------------------------- backtest

struct BacktestArgs {
    std::string returns_path;
    std::string membership_path;
    std::string sectors_path;
    std::string method = "samcov";
    std::string k = "auto";
    std::string r = "auto";
    std::string tau = "auto";
    std::string rule = "soft";
    int kmax = -1;
    int rmax = 10;
    double phi_scale = 0.3;
    int window = 104;
    int hold = 4;
    std::string c_grid = "1,2,3,4";
    std::string out = "backtest_out";
};

int run_backtest(const BacktestArgs& args) {
    const auto panel = read_returns_csv(args.returns_path);

    BacktestConfig config;
    config.window = args.window;
    config.hold = args.hold;
    config.c_grid = parse_double_list(args.c_grid, "c grid");
    config.estimator.method = args.method;
    config.estimator.k = parse_count(args.k, "k");
    config.estimator.r = parse_count(args.r, "r");
    config.estimator.tau = parse_tau(args.tau);
    config.estimator.rule = parse_rule(args.rule);
    config.estimator.k_max = args.kmax;
    config.estimator.r_max = args.rmax;
    config.estimator.phi_scale = args.phi_scale;
    if (!args.membership_path.empty()) {
        const auto labels = read_label_csv(args.membership_path, "group");
        config.estimator.groups = membership_for_panel(panel, labels).first;
    }
    if (!args.sectors_path.empty()) {
        const auto sector_map = read_label_csv(args.sectors_path, "sector");
        std::vector<std::string> sectors;
        for (const auto& asset : panel.asset_ids) {
            const auto it = sector_map.find(asset);
            if (it == sector_map.end()) {
                throw InvalidInput("asset '" + asset + "' missing from sector file");
            }
            sectors.push_back(it->second);
        }
        config.estimator.sector_labels = sectors;
    }

    const auto reports = backtest(panel, config);

    ensure_out_dir(args.out);
    auto csv = open_out(args.out + "/risks.csv");
    csv << "c,method,k,period,label,realized_risk\n";
    for (const auto& report : reports) {
        for (std::size_t i = 0; i < report.risks.size(); ++i) {
            csv << format_g17(report.c) << ',' << report.method << ',' << report.k_used[i] << ','
                << i << ',' << report.period_label[i] << ',' << format_g17(report.risks[i])
                << '\n';
        }
    }
    auto summary = open_out(args.out + "/summary.csv");
    summary << "c,method,periods,skipped,overall_risk\n";
    for (const auto& report : reports) {
        summary << format_g17(report.c) << ',' << report.method << ',' << report.risks.size()
                << ',' << report.skipped_periods << ',' << format_g17(report.overall_risk)
                << '\n';
    }
    auto manifest = open_out(args.out + "/manifest.txt");
    write_manifest(manifest, {{"command", "backtest"},
                              {"returns", args.returns_path},
                              {"membership", args.membership_path},
                              {"method", args.method},
                              {"k", args.k},
                              {"r", args.r},
                              {"tau", args.tau},
                              {"rule", args.rule},
                              {"window", std::to_string(args.window)},
                              {"hold", std::to_string(args.hold)},
                              {"c_grid", args.c_grid}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Covariance estimation under global + group-local factor models"};
    app.require_subcommand(1);
    // flat key=value lines under a [simulate]/[select]/[estimate]/[backtest]
    // section; command-line flags override
    app.set_config("--config");
    app.allow_config_extras(CLI::config_extras_mode::error);

    SimulateArgs sim;
    auto* simulate_cmd = app.add_subcommand("simulate", "Replicated synthetic error study");
    simulate_cmd->add_option("--grid", sim.grid_axis, "Grid axis: p or J");
    simulate_cmd->add_option("--values", sim.values, "Comma-separated grid values");
    simulate_cmd->add_option("--J", sim.num_groups, "Group count (grid=p)");
    simulate_cmd->add_option("--pj", sim.group_size, "Group size (grid=J)");
    simulate_cmd->add_option("--T", sim.num_obs, "Observations per panel");
    simulate_cmd->add_option("--k", sim.k, "True global factor count");
    simulate_cmd->add_option("--rj", sim.rj, "True local factors per group");
    simulate_cmd->add_option("--m", sim.m, "Sparsity control");
    simulate_cmd->add_option("--methods", sim.methods, "Comma-separated method list");
    simulate_cmd->add_option("--reps", sim.reps, "Replications per grid point");
    simulate_cmd->add_option("--seed", sim.seed, "Master seed");
    simulate_cmd->add_option("--tau", sim.tau, "Threshold constant or auto");
    simulate_cmd->add_option("--factors", sim.factors, "auto (estimated) or true");
    simulate_cmd->add_option("--rmax", sim.rmax, "Local factor search bound");
    simulate_cmd->add_option("--kmax", sim.kmax, "Pad over true r for the MER bound");
    simulate_cmd->add_option("--phi-scale", sim.phi_scale, "phi_p = scale * log p");
    simulate_cmd->add_option("--target", sim.target, "global or local (block study)");
    simulate_cmd->add_option("--poet-group-factors", sim.poet_group_factors,
                             "Factor count for group-level POET in the local study");
    simulate_cmd->add_option("--mix-rate", sim.mix_rate, "Membership noise for dpoet_mix");
    simulate_cmd->add_option("--out", sim.out, "Output directory");

    std::string sel_returns, sel_membership;
    int sel_kmax = -1, sel_rmax = 10;
    double sel_phi = 0.3;
    bool sel_csv = false;
    auto* select_cmd = app.add_subcommand("select", "Factor-count / model selection report");
    select_cmd->add_option("--returns", sel_returns, "Returns CSV")->required();
    select_cmd->add_option("--membership", sel_membership, "Membership CSV (guides k_max)");
    select_cmd->add_option("--kmax", sel_kmax, "Eigenvalue-ratio search bound");
    select_cmd->add_option("--rmax", sel_rmax, "Per-group bound used for the default k_max");
    select_cmd->add_option("--phi-scale", sel_phi, "phi_p = scale * log p");
    select_cmd->add_flag("--csv", sel_csv, "Machine-readable output");

    EstimateArgs est;
    auto* estimate_cmd = app.add_subcommand("estimate", "Covariance estimation from a CSV panel");
    estimate_cmd->add_option("--returns", est.returns_path, "Returns CSV")->required();
    estimate_cmd->add_option("--membership", est.membership_path, "Membership CSV");
    estimate_cmd->add_option("--sectors", est.sectors_path, "Sector CSV (rule=sector)");
    estimate_cmd->add_option("--method", est.method, "samcov | poet | poet2 | dpoet");
    estimate_cmd->add_option("--k", est.k, "Global factor count or auto");
    estimate_cmd->add_option("--r", est.r, "Local factor count per group or auto");
    estimate_cmd->add_option("--tau", est.tau, "Threshold constant or auto");
    estimate_cmd->add_option("--rule", est.rule, "soft | hard | sector");
    estimate_cmd->add_option("--kmax", est.kmax, "MER search bound");
    estimate_cmd->add_option("--rmax", est.rmax, "ER search bound");
    estimate_cmd->add_option("--phi-scale", est.phi_scale, "phi_p = scale * log p");
    estimate_cmd->add_option("--cluster", est.cluster, "Detect membership with K clusters");
    estimate_cmd->add_option("--seed", est.seed, "Seed for clustering restarts");
    estimate_cmd->add_flag("--components", est.components, "Also write the three parts");
    estimate_cmd->add_option("--out", est.out, "Output directory");

    BacktestArgs back;
    auto* backtest_cmd = app.add_subcommand("backtest", "Rolling minimum-variance backtest");
    backtest_cmd->add_option("--returns", back.returns_path, "Returns CSV")->required();
    backtest_cmd->add_option("--membership", back.membership_path, "Membership CSV");
    backtest_cmd->add_option("--sectors", back.sectors_path, "Sector CSV (rule=sector)");
    backtest_cmd->add_option("--method", back.method,
                             "samcov | poet | poet2 | dpoet | identity");
    backtest_cmd->add_option("--k", back.k, "Global factor count or auto");
    backtest_cmd->add_option("--r", back.r, "Local factor count per group or auto");
    backtest_cmd->add_option("--tau", back.tau, "Threshold constant or auto");
    backtest_cmd->add_option("--rule", back.rule, "soft | hard | sector");
    backtest_cmd->add_option("--kmax", back.kmax, "MER search bound");
    backtest_cmd->add_option("--rmax", back.rmax, "ER search bound");
    backtest_cmd->add_option("--phi-scale", back.phi_scale, "phi_p = scale * log p");
    backtest_cmd->add_option("--window", back.window, "Estimation window in rows");
    backtest_cmd->add_option("--hold", back.hold, "Holding-period rows without dates");
    backtest_cmd->add_option("--c-grid", back.c_grid, "Comma-separated exposure bounds");
    backtest_cmd->add_option("--out", back.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (simulate_cmd->parsed()) return run_simulate(sim);
        if (select_cmd->parsed()) {
            return run_select(sel_returns, sel_kmax, sel_phi, sel_rmax, sel_membership, sel_csv);
        }
        if (estimate_cmd->parsed()) return run_estimate(est);
        if (backtest_cmd->parsed()) return run_backtest(back);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
