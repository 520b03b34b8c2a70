#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mobhfl/bounds.hpp"
#include "mobhfl/errors.hpp"
#include "mobhfl/experiment.hpp"
#include "mobhfl/mobility.hpp"

namespace fs = std::filesystem;
using namespace mobhfl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int cmd_run(const std::string& config_path) {
    ExperimentConfig cfg = parse_config(config_path);
    ExperimentResult result = run_experiment(cfg);
    for (const auto& outcome : result.outcomes) {
        if (outcome.ok) {
            std::printf("seed %llu: final_acc=%.4f final_loss=%.6f (%zu records)\n",
                        static_cast<unsigned long long>(outcome.seed), outcome.final_accuracy,
                        outcome.final_train_loss, outcome.records.size());
        } else {
            std::printf("seed %llu: FAILED: %s\n",
                        static_cast<unsigned long long>(outcome.seed), outcome.error.c_str());
        }
    }
    return result.exit_code;
}

int cmd_sweep(const std::string& config_path, const std::string& axis,
              const std::string& values_csv) {
    ExperimentConfig cfg = parse_config(config_path);
    std::vector<double> values;
    std::stringstream ss(values_csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) values.push_back(std::stod(item));
    if (values.empty()) throw ConfigError("sweep: empty value list");

    auto rows = sweep(cfg, axis, values);
    std::printf("%-8s %-10s %-8s %-14s %-14s\n", "axis", "value", "failed", "mean_final_acc",
                "stddev");
    for (const auto& row : rows)
        std::printf("%-8s %-10g %-8d %-14.4f %-14.4f\n", row.axis.c_str(), row.value,
                    row.seeds_failed, row.mean_final_accuracy, row.stddev_final_accuracy);
    std::printf("summary: %s/sweep_summary.csv\n", cfg.output_dir.c_str());
    for (const auto& row : rows)
        if (row.seeds_failed > 0) return kExitRuntime;
    return kExitOk;
}

// Re-derive every per-k bound from the logged series and constants; report
// the largest deviation from the stored values.
int cmd_bounds(const std::string& metrics_dir) {
    if (!fs::is_directory(metrics_dir))
        throw ConfigError("bounds: not a directory: " + metrics_dir);
    int files = 0;
    for (const auto& entry : fs::directory_iterator(metrics_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("bounds_", 0) != 0 || entry.path().extension() != ".json") continue;
        ++files;
        std::ifstream in(entry.path());
        nlohmann::json stored = nlohmann::json::parse(in);

        BoundInputs inputs;
        const auto& consts = stored.at("constants");
        inputs.eta = consts.at("eta").get<double>();
        inputs.tau_l = consts.at("tau_l").get<int>();
        inputs.tau_e = consts.at("tau_e").get<int>();
        inputs.cloud_epochs = consts.at("cloud_epochs").get<int>();
        inputs.n_edges = consts.value("n_edges", 4);
        inputs.smoothness.beta = consts.at("beta").get<double>();
        inputs.smoothness.rho = consts.at("rho").get<double>();
        inputs.heterogeneity.delta = consts.at("delta").get<double>();
        inputs.heterogeneity.G = consts.at("G").get<double>();
        inputs.heterogeneity.L = consts.at("L").get<double>();
        inputs.heterogeneity.lambda = consts.at("lambda_star").get<double>();
        inputs.heterogeneity.Delta_series =
            consts.at("Delta_series_full").get<std::vector<double>>();

        std::string recomputed = bound_report_json(inputs, std::nullopt);
        nlohmann::json fresh = nlohmann::json::parse(recomputed);

        double worst = 0.0;
        for (const auto& [k, entry_k] : stored.at("per_k").items()) {
            const auto& fresh_k = fresh.at("per_k").at(k);
            for (const char* field : {"u_static", "u_mobile", "gamma_def"}) {
                const double a = entry_k.at(field).get<double>();
                const double b = fresh_k.at(field).get<double>();
                worst = std::max(worst, std::abs(a - b));
            }
        }
        const fs::path out_path = entry.path().parent_path() /
                                  ("recomputed_" + entry.path().filename().string());
        std::ofstream out(out_path);
        out << recomputed;
        std::printf("%s: max |stored - recomputed| = %.3e -> %s\n", name.c_str(), worst,
                    out_path.filename().string().c_str());
        if (worst > 1e-9) return kExitRuntime;
    }
    if (files == 0) {
        std::printf("bounds: no bounds_*.json files under %s\n", metrics_dir.c_str());
        return kExitConfig;
    }
    return kExitOk;
}

int cmd_eig(int n, double p_s) {
    auto values = eigenvalues_ring({n, p_s});
    for (double v : values) std::printf("%.12g\n", v);
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical federated learning simulator with vehicle mobility"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "Run an experiment config across its seeds");
    run->add_option("config", config_path, "Path to a key = value config file")->required();

    std::string sweep_config, sweep_axis, sweep_values;
    auto* sw = app.add_subcommand("sweep", "Sweep one axis across values");
    sw->add_option("config", sweep_config, "Path to the base config")->required();
    sw->add_option("--axis", sweep_axis, "One of speed, p_s, tau_e, tau_l, N, M")->required();
    sw->add_option("--values", sweep_values, "Comma-separated axis values")->required();

    std::string bounds_dir;
    auto* bd = app.add_subcommand("bounds", "Re-evaluate bound reports from logged series");
    bd->add_option("metrics-dir", bounds_dir, "Directory holding bounds_*.json files")
        ->required();

    bool eig_ring = false;
    int eig_n = 4;
    double eig_ps = 0.5;
    auto* eig = app.add_subcommand("eig", "Print the ring-topology transition spectrum");
    eig->add_flag("--ring", eig_ring, "Ring topology (the only supported one)");
    eig->add_option("N", eig_n, "Number of edges")->required();
    eig->add_option("p_s", eig_ps, "Sojourn probability")->required();

    try {
        app.parse(argc, argv);
        if (run->parsed()) return cmd_run(config_path);
        if (sw->parsed()) return cmd_sweep(sweep_config, sweep_axis, sweep_values);
        if (bd->parsed()) return cmd_bounds(bounds_dir);
        if (eig->parsed()) return cmd_eig(eig_n, eig_ps);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
