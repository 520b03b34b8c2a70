#include "mobhfl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mobhfl/errors.hpp"
#include "mobhfl/rng.hpp"

namespace fs = std::filesystem;

namespace mobhfl {

namespace {

std::string trim(const std::string& s) {
    std::size_t lo = s.find_first_not_of(" \t\r");
    std::size_t hi = s.find_last_not_of(" \t\r");
    if (lo == std::string::npos) return "";
    return s.substr(lo, hi - lo + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

[[noreturn]] void key_error(const std::string& origin, int line, const std::string& key,
                            const std::string& what) {
    throw ConfigError(origin + ":" + std::to_string(line) + ": key '" + key + "': " + what);
}

double parse_double(const std::string& origin, int line, const std::string& key,
                    const std::string& value) {
    try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        key_error(origin, line, key, "expected a number, got '" + value + "'");
    }
}

long parse_int(const std::string& origin, int line, const std::string& key,
               const std::string& value) {
    try {
        std::size_t used = 0;
        long v = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        key_error(origin, line, key, "expected an integer, got '" + value + "'");
    }
}

bool parse_bool(const std::string& origin, int line, const std::string& key,
                const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    key_error(origin, line, key, "expected true/false, got '" + value + "'");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

TransitionMatrix load_matrix_file(const std::string& path, int n) {
    std::ifstream in(path);
    if (!in) throw ConfigError("matrix_file: cannot open " + path);
    std::vector<double> entries;
    double v;
    while (in >> v) entries.push_back(v);
    if (entries.size() != static_cast<std::size_t>(n) * n)
        throw ConfigError("matrix_file: expected " + std::to_string(n * n) + " values, found " +
                          std::to_string(entries.size()));
    return TransitionMatrix::from_rows(n, std::move(entries));
}

} // namespace

double ExperimentConfig::resolved_p_s() const {
    switch (mobility) {
        case MobilitySource::Static: return 1.0;
        case MobilitySource::Ring: return p_s;
        case MobilitySource::Speed:
            return sojourn_from_speed(speed_mps, side_m, interval_s, sojourn_slope,
                                      sojourn_intercept);
        default: return -1.0; // not derived from a sojourn probability
    }
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(ss, raw)) {
        ++line_no;
        std::string line = raw;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + trim(raw) + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (value.empty()) key_error(origin, line_no, key, "empty value");

        auto as_int = [&](long lo, long hi) {
            long v = parse_int(origin, line_no, key, value);
            if (v < lo || v > hi)
                key_error(origin, line_no, key,
                          "value " + value + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
            return static_cast<int>(v);
        };
        auto as_double = [&]() { return parse_double(origin, line_no, key, value); };

        if (key == "task") {
            if (value != "softmax-linear" && value != "mlp" && value != "mean-quadratic")
                key_error(origin, line_no, key, "unknown task '" + value + "'");
            cfg.task = value;
        } else if (key == "classes") {
            cfg.classes = as_int(2, 1000);
        } else if (key == "input_dim") {
            cfg.input_dim = as_int(2, 100000);
        } else if (key == "per_class") {
            cfg.per_class = as_int(1, 10000000);
        } else if (key == "test_per_class") {
            cfg.test_per_class = as_int(1, 10000000);
        } else if (key == "separation") {
            cfg.separation = as_double();
            if (!(cfg.separation > 0.0)) key_error(origin, line_no, key, "must be positive");
        } else if (key == "hidden_dims") {
            cfg.hidden_dims.clear();
            for (const auto& item : split_list(value))
                cfg.hidden_dims.push_back(
                    static_cast<int>(parse_int(origin, line_no, key, item)));
            if (cfg.hidden_dims.empty() || cfg.hidden_dims.size() > 2)
                key_error(origin, line_no, key, "expected one or two layer sizes");
        } else if (key == "quad_dim") {
            cfg.quad_dim = as_int(1, 100000);
        } else if (key == "quad_spread") {
            cfg.quad_spread = as_double();
            if (!(cfg.quad_spread > 0.0)) key_error(origin, line_no, key, "must be positive");
        } else if (key == "partition") {
            if (value == "iid") cfg.partition = PartitionCase::Iid;
            else if (value == "local-niid") cfg.partition = PartitionCase::LocalNiid;
            else if (value == "edge-niid") cfg.partition = PartitionCase::EdgeNiid;
            else key_error(origin, line_no, key, "unknown partition '" + value + "'");
        } else if (key == "l") {
            cfg.skew_classes = as_int(1, 1000);
        } else if (key == "vehicles") {
            cfg.vehicles = as_int(1, 1000000);
        } else if (key == "edges") {
            cfg.edges = as_int(1, 100000);
        } else if (key == "tau_l") {
            cfg.tau_l = as_int(1, 1000000);
        } else if (key == "tau_e") {
            cfg.tau_e = as_int(1, 1000000);
        } else if (key == "cloud_epochs") {
            cfg.cloud_epochs = as_int(1, 100000000);
        } else if (key == "eta") {
            cfg.eta = as_double();
            if (!(cfg.eta > 0.0)) key_error(origin, line_no, key, "must be positive");
        } else if (key == "batch_size") {
            cfg.batch_size = as_int(0, 100000000); // 0 = full shard
        } else if (key == "empty_edge") {
            if (value != "carry-forward" && value != "fail")
                key_error(origin, line_no, key, "expected carry-forward or fail");
            cfg.empty_edge = value;
        } else if (key == "workers") {
            cfg.workers = as_int(1, 256);
        } else if (key == "mobility") {
            if (value == "static") cfg.mobility = MobilitySource::Static;
            else if (value == "ring") cfg.mobility = MobilitySource::Ring;
            else if (value == "speed") cfg.mobility = MobilitySource::Speed;
            else if (value == "matrix") cfg.mobility = MobilitySource::MatrixFile;
            else if (value == "trace") cfg.mobility = MobilitySource::TraceFile;
            else key_error(origin, line_no, key, "unknown mobility source '" + value + "'");
        } else if (key == "p_s") {
            cfg.p_s = as_double();
            if (cfg.p_s < 0.0 || cfg.p_s > 1.0)
                key_error(origin, line_no, key, "sojourn probability outside [0, 1]");
        } else if (key == "speed_mps") {
            cfg.speed_mps = as_double();
            if (cfg.speed_mps < 0.0) key_error(origin, line_no, key, "must be nonnegative");
        } else if (key == "side_m") {
            cfg.side_m = as_double();
            if (!(cfg.side_m > 0.0)) key_error(origin, line_no, key, "must be positive");
        } else if (key == "interval_s") {
            cfg.interval_s = as_double();
            if (!(cfg.interval_s > 0.0)) key_error(origin, line_no, key, "must be positive");
        } else if (key == "sojourn_slope") {
            cfg.sojourn_slope = as_double();
        } else if (key == "sojourn_intercept") {
            cfg.sojourn_intercept = as_double();
        } else if (key == "matrix_file") {
            cfg.matrix_file = value;
        } else if (key == "trace_file") {
            cfg.trace_file = value;
        } else if (key == "track_bounds") {
            cfg.track_bounds = parse_bool(origin, line_no, key, value);
        } else if (key == "ring_factor_literal") {
            cfg.ring_factor_literal = parse_bool(origin, line_no, key, value);
        } else if (key == "seeds") {
            cfg.seeds.clear();
            for (const auto& item : split_list(value)) {
                long v = parse_int(origin, line_no, key, item);
                if (v < 0) key_error(origin, line_no, key, "seeds must be nonnegative");
                cfg.seeds.push_back(static_cast<std::uint64_t>(v));
            }
            if (cfg.seeds.empty()) key_error(origin, line_no, key, "empty seed list");
        } else if (key == "targets") {
            cfg.targets.clear();
            for (const auto& item : split_list(value))
                cfg.targets.push_back(parse_double(origin, line_no, key, item));
            if (cfg.targets.empty()) key_error(origin, line_no, key, "empty target list");
        } else if (key == "output_dir") {
            cfg.output_dir = value;
        } else {
            key_error(origin, line_no, key, "unknown key");
        }
    }

    // Cross-key constraints.
    if (cfg.vehicles < cfg.edges)
        throw ConfigError(origin + ": vehicles (" + std::to_string(cfg.vehicles) +
                          ") must be at least edges (" + std::to_string(cfg.edges) + ")");
    if (cfg.mobility == MobilitySource::MatrixFile && cfg.matrix_file.empty())
        throw ConfigError(origin + ": mobility = matrix requires matrix_file");
    if (cfg.mobility == MobilitySource::TraceFile && cfg.trace_file.empty())
        throw ConfigError(origin + ": mobility = trace requires trace_file");
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("parse_config: cannot open " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), path);
}

std::string resolved_config_text(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "task = " << cfg.task << "\n";
    out << "classes = " << cfg.classes << "\n";
    out << "input_dim = " << cfg.input_dim << "\n";
    out << "per_class = " << cfg.per_class << "\n";
    out << "test_per_class = " << cfg.test_per_class << "\n";
    out << "separation = " << fmt(cfg.separation) << "\n";
    out << "hidden_dims = ";
    for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i)
        out << (i ? "," : "") << cfg.hidden_dims[i];
    out << "\n";
    out << "quad_dim = " << cfg.quad_dim << "\n";
    out << "quad_spread = " << fmt(cfg.quad_spread) << "\n";
    out << "partition = "
        << (cfg.partition == PartitionCase::Iid
                ? "iid"
                : cfg.partition == PartitionCase::LocalNiid ? "local-niid" : "edge-niid")
        << "\n";
    out << "l = " << cfg.skew_classes << "\n";
    out << "vehicles = " << cfg.vehicles << "\n";
    out << "edges = " << cfg.edges << "\n";
    out << "tau_l = " << cfg.tau_l << "\n";
    out << "tau_e = " << cfg.tau_e << "\n";
    out << "cloud_epochs = " << cfg.cloud_epochs << "\n";
    out << "eta = " << fmt(cfg.eta) << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "empty_edge = " << cfg.empty_edge << "\n";
    out << "workers = " << cfg.workers << "\n";
    const char* mob = cfg.mobility == MobilitySource::Static ? "static"
                      : cfg.mobility == MobilitySource::Ring ? "ring"
                      : cfg.mobility == MobilitySource::Speed ? "speed"
                      : cfg.mobility == MobilitySource::MatrixFile ? "matrix"
                                                                   : "trace";
    out << "mobility = " << mob << "\n";
    out << "p_s = " << fmt(cfg.p_s) << "\n";
    out << "speed_mps = " << fmt(cfg.speed_mps) << "\n";
    out << "side_m = " << fmt(cfg.side_m) << "\n";
    out << "interval_s = " << fmt(cfg.interval_s) << "\n";
    out << "sojourn_slope = " << fmt(cfg.sojourn_slope) << "\n";
    out << "sojourn_intercept = " << fmt(cfg.sojourn_intercept) << "\n";
    if (!cfg.matrix_file.empty()) out << "matrix_file = " << cfg.matrix_file << "\n";
    if (!cfg.trace_file.empty()) out << "trace_file = " << cfg.trace_file << "\n";
    out << "track_bounds = " << (cfg.track_bounds ? "true" : "false") << "\n";
    out << "ring_factor_literal = " << (cfg.ring_factor_literal ? "true" : "false") << "\n";
    out << "seeds = ";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) out << (i ? "," : "") << cfg.seeds[i];
    out << "\n";
    out << "targets = ";
    for (std::size_t i = 0; i < cfg.targets.size(); ++i)
        out << (i ? "," : "") << fmt(cfg.targets[i]);
    out << "\n";
    out << "output_dir = " << cfg.output_dir << "\n";
    out << "# resolved_p_s = " << fmt(cfg.resolved_p_s()) << "\n";
    return out.str();
}

PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t seed) {
    PreparedRun run;

    if (cfg.task == "mean-quadratic") {
        std::vector<ParamVector> targets(cfg.vehicles);
        for (int m = 0; m < cfg.vehicles; ++m) {
            StreamRng stream(seed, 0x9d, static_cast<std::uint64_t>(m));
            targets[m].resize(cfg.quad_dim);
            for (double& t : targets[m]) t = cfg.quad_spread * stream.next_gaussian();
        }
        run.spec = ModelSpec::mean_quadratic(std::move(targets));
        // Placeholder dataset: one sample per vehicle, equal shard weights.
        run.train.num_samples = cfg.vehicles;
        run.train.input_dim = 2;
        run.train.num_classes = 2;
        run.train.inputs.assign(static_cast<std::size_t>(cfg.vehicles) * 2, 0.0);
        run.train.labels.assign(cfg.vehicles, 0);
        run.plan.shards.resize(cfg.vehicles);
        for (int m = 0; m < cfg.vehicles; ++m) run.plan.shards[m] = {m};
    } else {
        run.train = generate_synthetic(cfg.classes, cfg.input_dim, cfg.per_class, cfg.separation,
                                       rng::key(seed, 0x7421));
        run.test = generate_synthetic(cfg.classes, cfg.input_dim, cfg.test_per_class,
                                      cfg.separation, rng::key(seed, 0x7e57));
        run.spec = cfg.task == "mlp"
                       ? ModelSpec::mlp(cfg.input_dim, cfg.classes, cfg.hidden_dims)
                       : ModelSpec::softmax_linear(cfg.input_dim, cfg.classes);
        switch (cfg.partition) {
            case PartitionCase::Iid:
                run.plan = partition_iid(run.train, cfg.vehicles, seed);
                break;
            case PartitionCase::LocalNiid:
                run.plan =
                    partition_local_niid(run.train, cfg.vehicles, cfg.skew_classes, seed);
                break;
            case PartitionCase::EdgeNiid:
                run.plan = partition_edge_niid(run.train, cfg.edges, cfg.vehicles,
                                               cfg.skew_classes, seed);
                break;
        }
    }

    run.hfl.num_vehicles = cfg.vehicles;
    run.hfl.num_edges = cfg.edges;
    run.hfl.tau_l = cfg.tau_l;
    run.hfl.tau_e = cfg.tau_e;
    run.hfl.cloud_epochs = cfg.cloud_epochs;
    run.hfl.eta = cfg.eta;
    run.hfl.batch_size = cfg.batch_size;
    run.hfl.empty_edge = cfg.empty_edge == "fail" ? EmptyEdgePolicy::Fail
                                                  : EmptyEdgePolicy::CarryForward;
    run.hfl.workers = cfg.workers;
    run.hfl.track_virtual = cfg.track_bounds;
    run.hfl.seed = seed;

    switch (cfg.mobility) {
        case MobilitySource::Static:
            run.hfl.scenario = Scenario::Static;
            break;
        case MobilitySource::Ring:
        case MobilitySource::Speed: {
            const double p = cfg.resolved_p_s();
            run.hfl.scenario = Scenario::Markov;
            run.hfl.transition = ring_transition({cfg.edges, p});
            break;
        }
        case MobilitySource::MatrixFile:
            run.hfl.scenario = Scenario::Markov;
            run.hfl.transition = load_matrix_file(cfg.matrix_file, cfg.edges);
            break;
        case MobilitySource::TraceFile:
            run.hfl.scenario = Scenario::Trace;
            run.hfl.trace = load_trace(cfg.trace_file);
            break;
    }
    return run;
}

SeedOutcome run_single(const ExperimentConfig& cfg, std::uint64_t seed) {
    SeedOutcome outcome;
    outcome.seed = seed;
    PreparedRun prepared = prepare_run(cfg, seed);
    const LabeledDataset* test =
        cfg.task == "mean-quadratic" ? nullptr : &prepared.test;
    RunResult result =
        run_mob_hierfavg(prepared.hfl, prepared.plan, prepared.spec, prepared.train, test);
    outcome.records = std::move(result.records);
    for (auto it = outcome.records.rbegin(); it != outcome.records.rend(); ++it) {
        if (it->event == EventKind::CloudAgg) {
            outcome.final_accuracy = it->test_accuracy;
            outcome.final_train_loss = it->train_loss;
            break;
        }
    }
    outcome.ok = true;
    return outcome;
}

std::vector<std::vector<double>> prob_diff_series(const LabeledDataset& dataset,
                                                  const PartitionPlan& plan, int num_edges,
                                                  std::span<const MobilityState> series) {
    const int m_count = static_cast<int>(plan.shards.size());
    std::vector<std::vector<long>> shard_counts(m_count,
                                                std::vector<long>(dataset.num_classes, 0));
    std::vector<long> global_counts(dataset.num_classes, 0);
    long total = 0;
    for (int m = 0; m < m_count; ++m)
        for (int i : plan.shards[m]) {
            ++shard_counts[m][dataset.labels[i]];
            ++global_counts[dataset.labels[i]];
            ++total;
        }

    std::vector<std::vector<double>> out;
    out.reserve(series.size());
    std::vector<long> pool(dataset.num_classes);
    for (const auto& state : series) {
        std::vector<double> per_edge(num_edges, 0.0);
        for (int n = 0; n < num_edges; ++n) {
            std::fill(pool.begin(), pool.end(), 0L);
            long edge_total = 0;
            for (int m = 0; m < m_count; ++m)
                if (state.assignment[m] == n) {
                    for (int c = 0; c < dataset.num_classes; ++c) pool[c] += shard_counts[m][c];
                    edge_total += static_cast<long>(plan.shards[m].size());
                }
            if (edge_total == 0) {
                per_edge[n] = 0.0;
                continue;
            }
            double l1 = 0.0;
            for (int c = 0; c < dataset.num_classes; ++c)
                l1 += std::abs(static_cast<double>(global_counts[c]) / total -
                               static_cast<double>(pool[c]) / edge_total);
            per_edge[n] = l1;
        }
        out.push_back(std::move(per_edge));
    }
    return out;
}

namespace {

void write_bound_report(const ExperimentConfig& cfg, const PreparedRun& prepared,
                        const RunResult& result, std::uint64_t seed, const std::string& path) {
    BoundInputs inputs;
    inputs.eta = cfg.eta;
    inputs.tau_l = cfg.tau_l;
    inputs.tau_e = cfg.tau_e;
    inputs.cloud_epochs = cfg.cloud_epochs;
    inputs.n_edges = cfg.edges;

    const bool quadratic = cfg.task == "mean-quadratic";
    std::vector<ParamVector> probes;
    probes.push_back(init_params(prepared.spec, seed));
    if (!result.final_cloud_model.empty()) probes.push_back(result.final_cloud_model);

    if (quadratic) {
        inputs.smoothness.beta = 1.0;
        inputs.smoothness.rho = 1.0;
    } else {
        // beta and rho as maxima of difference quotients over probe pairs.
        DataBatch full;
        std::vector<int> all(prepared.train.num_samples);
        for (int i = 0; i < prepared.train.num_samples; ++i) all[i] = i;
        full = make_batch(prepared.train, all);
        std::vector<ParamVector> pts = probes;
        StreamRng stream(seed, 0xbe7a);
        for (int extra = 0; extra < 3; ++extra) {
            ParamVector p = probes.front();
            for (double& x : p) x += 0.5 * stream.next_gaussian();
            pts.push_back(std::move(p));
        }
        double beta = 0.0, rho = 0.0;
        std::vector<double> losses(pts.size());
        std::vector<ParamVector> grads(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i)
            losses[i] = loss_and_gradient(prepared.spec, pts[i], full, grads[i]);
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = i + 1; j < pts.size(); ++j) {
                double dw = 0.0, dg = 0.0;
                for (std::size_t x = 0; x < pts[i].size(); ++x) {
                    const double a = pts[i][x] - pts[j][x];
                    const double b = grads[i][x] - grads[j][x];
                    dw += a * a;
                    dg += b * b;
                }
                dw = std::sqrt(dw);
                if (dw < 1e-12) continue;
                beta = std::max(beta, std::sqrt(dg) / dw);
                rho = std::max(rho, std::abs(losses[i] - losses[j]) / dw);
            }
        inputs.smoothness.beta = beta > 0.0 ? beta : 1.0;
        inputs.smoothness.rho = rho > 0.0 ? rho : 1.0;
    }

    inputs.heterogeneity = estimate_gradient_differences(
        prepared.spec, prepared.train, prepared.plan, result.membership_series, probes);
    if (!quadratic) inputs.heterogeneity.G = estimate_G(prepared.spec, prepared.train, probes);

    std::optional<DistributionCase> closed;
    if (prepared.hfl.scenario == Scenario::Markov) {
        try {
            inputs.heterogeneity.lambda = lambda_star(prepared.hfl.transition);
        } catch (const std::exception& e) {
            std::cerr << "note: no mixing rate for this run: " << e.what() << "\n";
        }
        if (inputs.heterogeneity.lambda > 0.0 && inputs.heterogeneity.lambda < 1.0) {
            if (cfg.partition == PartitionCase::EdgeNiid) closed = DistributionCase::EdgeNiid;
            else if (cfg.partition == PartitionCase::LocalNiid) closed = DistributionCase::EdgeIid;
            else closed = DistributionCase::Iid;
            if (!quadratic) {
                auto series = prob_diff_series(prepared.train, prepared.plan, cfg.edges,
                                               result.membership_series);
                std::vector<std::size_t> sizes(prepared.plan.shards.size());
                for (std::size_t m = 0; m < sizes.size(); ++m)
                    sizes[m] = prepared.plan.shards[m].size();
                auto theta = edge_weights(result.membership_series.front(), sizes, cfg.edges);
                auto fit = fit_L(series, theta, inputs.heterogeneity.lambda);
                inputs.heterogeneity.L_n = fit.L_n;
                inputs.heterogeneity.L = fit.L;
            }
        }
    }

    std::optional<RingParams> ring;
    if (cfg.mobility == MobilitySource::Ring || cfg.mobility == MobilitySource::Speed)
        ring = RingParams{cfg.edges, cfg.resolved_p_s()};

    std::ofstream out(path);
    out << bound_report_json(inputs, closed, ring, cfg.ring_factor_literal);
}

} // namespace

void emit_metrics(const std::vector<RoundRecord>& rows, std::uint64_t seed,
                  const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("emit_metrics: cannot open " + path);
    out << "seed,cloud_epoch,edge_round,tau,event,test_acc,train_loss,cf_diff,avg_prob_diff,"
           "theta_min,theta_max\n";
    for (const auto& rec : rows) {
        const char* event = rec.event == EventKind::Local ? "local"
                            : rec.event == EventKind::EdgeAgg ? "edge_agg"
                                                              : "cloud_agg";
        double tmin = 0.0, tmax = 0.0;
        if (!rec.theta.empty()) {
            tmin = *std::min_element(rec.theta.begin(), rec.theta.end());
            tmax = *std::max_element(rec.theta.begin(), rec.theta.end());
        }
        out << seed << ',' << rec.cloud_epoch << ',' << rec.edge_round << ',' << rec.tau << ','
            << event << ',' << fmt(rec.test_accuracy) << ',' << fmt(rec.train_loss) << ','
            << fmt(rec.cf_difference) << ',' << fmt(rec.avg_prob_difference) << ',' << fmt(tmin)
            << ',' << fmt(tmax) << '\n';
    }
}

std::vector<int> epochs_to_accuracy(const std::vector<RoundRecord>& rows,
                                    std::span<const double> targets) {
    std::vector<int> out(targets.size(), -1);
    for (const auto& rec : rows) {
        if (rec.event != EventKind::CloudAgg) continue;
        for (std::size_t t = 0; t < targets.size(); ++t)
            if (out[t] < 0 && rec.test_accuracy >= targets[t]) out[t] = rec.cloud_epoch;
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    ExperimentResult result;
    fs::create_directories(cfg.output_dir);
    {
        std::ofstream snap(fs::path(cfg.output_dir) / "config_resolved.txt");
        snap << resolved_config_text(cfg);
    }

    for (std::uint64_t seed : cfg.seeds) {
        SeedOutcome outcome;
        outcome.seed = seed;
        try {
            PreparedRun prepared = prepare_run(cfg, seed);
            const LabeledDataset* test =
                cfg.task == "mean-quadratic" ? nullptr : &prepared.test;
            RunResult run = run_mob_hierfavg(prepared.hfl, prepared.plan, prepared.spec,
                                             prepared.train, test);
            outcome.records = std::move(run.records);
            for (auto it = outcome.records.rbegin(); it != outcome.records.rend(); ++it)
                if (it->event == EventKind::CloudAgg) {
                    outcome.final_accuracy = it->test_accuracy;
                    outcome.final_train_loss = it->train_loss;
                    break;
                }
            outcome.ok = true;
            const std::string stem = "seed" + std::to_string(seed);
            emit_metrics(outcome.records, seed,
                         (fs::path(cfg.output_dir) / ("metrics_" + stem + ".csv")).string());
            if (cfg.track_bounds)
                write_bound_report(cfg, prepared, run, seed,
                                   (fs::path(cfg.output_dir) / ("bounds_" + stem + ".json"))
                                       .string());
        } catch (const ConfigError& e) {
            outcome.ok = false;
            outcome.error = e.what();
            result.exit_code = std::max(result.exit_code, 2);
        } catch (const std::exception& e) {
            outcome.ok = false;
            outcome.error = e.what();
            result.exit_code = std::max(result.exit_code, 3);
        }
        if (!outcome.ok) {
            std::ofstream err(fs::path(cfg.output_dir) /
                              ("ERROR_seed" + std::to_string(seed) + ".txt"));
            err << outcome.error << "\n";
            if (!outcome.records.empty())
                emit_metrics(outcome.records, seed,
                             (fs::path(cfg.output_dir) /
                              ("metrics_seed" + std::to_string(seed) + "_partial.csv"))
                                 .string());
            std::cerr << "seed " << seed << " failed: " << outcome.error << "\n";
        }
        result.outcomes.push_back(std::move(outcome));
    }
    return result;
}

std::vector<SweepRow> sweep(const ExperimentConfig& cfg, const std::string& axis,
                            std::span<const double> values) {
    std::vector<SweepRow> rows;
    for (double value : values) {
        ExperimentConfig point = cfg;
        if (axis == "speed") {
            point.mobility = MobilitySource::Speed;
            point.speed_mps = value;
        } else if (axis == "p_s") {
            point.mobility = MobilitySource::Ring;
            point.p_s = value;
        } else if (axis == "tau_e") {
            point.tau_e = static_cast<int>(value);
        } else if (axis == "tau_l") {
            point.tau_l = static_cast<int>(value);
        } else if (axis == "N") {
            point.edges = static_cast<int>(value);
        } else if (axis == "M") {
            point.vehicles = static_cast<int>(value);
        } else {
            throw ConfigError("sweep: unknown axis '" + axis + "'");
        }
        std::ostringstream dir;
        dir << cfg.output_dir << "/" << axis << "_" << fmt(value);
        point.output_dir = dir.str();

        SweepRow row;
        row.axis = axis;
        row.value = value;
        std::vector<double> finals;
        std::vector<std::vector<int>> e2t_per_seed;
        ExperimentResult res = run_experiment(point);
        for (const auto& outcome : res.outcomes) {
            ++row.seeds_run;
            if (!outcome.ok) {
                ++row.seeds_failed;
                continue;
            }
            finals.push_back(outcome.final_accuracy);
            e2t_per_seed.push_back(epochs_to_accuracy(outcome.records, cfg.targets));
        }
        if (!finals.empty()) {
            double mean = 0.0;
            for (double f : finals) mean += f;
            mean /= static_cast<double>(finals.size());
            double var = 0.0;
            for (double f : finals) var += (f - mean) * (f - mean);
            row.mean_final_accuracy = mean;
            row.stddev_final_accuracy =
                finals.size() > 1 ? std::sqrt(var / (static_cast<double>(finals.size()) - 1.0))
                                  : 0.0;
        }
        row.mean_epochs_to_target.assign(cfg.targets.size(), -1);
        for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
            long sum = 0;
            int reached = 0;
            for (const auto& seed_e2t : e2t_per_seed)
                if (seed_e2t[t] >= 0) {
                    sum += seed_e2t[t];
                    ++reached;
                }
            if (reached > 0)
                row.mean_epochs_to_target[t] =
                    static_cast<int>(std::lround(static_cast<double>(sum) / reached));
        }
        rows.push_back(std::move(row));
    }
    write_sweep_summary(rows, cfg.targets,
                        (fs::path(cfg.output_dir) / "sweep_summary.csv").string());
    return rows;
}

void write_sweep_summary(const std::vector<SweepRow>& rows, std::span<const double> targets,
                         const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("write_sweep_summary: cannot open " + path);
    out << "axis,value,seeds_run,seeds_failed,mean_final_acc,stddev_final_acc";
    for (double t : targets) out << ",epochs_to_" << fmt(t);
    out << "\n";
    for (const auto& row : rows) {
        out << row.axis << ',' << fmt(row.value) << ',' << row.seeds_run << ','
            << row.seeds_failed << ',' << fmt(row.mean_final_accuracy) << ','
            << fmt(row.stddev_final_accuracy);
        for (int e : row.mean_epochs_to_target) out << ',' << e;
        out << "\n";
    }
}

} // namespace mobhfl
