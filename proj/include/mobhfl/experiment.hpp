#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mobhfl/bounds.hpp"
#include "mobhfl/engine.hpp"

namespace mobhfl {

enum class PartitionCase { Iid, LocalNiid, EdgeNiid };

enum class MobilitySource { Static, Ring, Speed, MatrixFile, TraceFile };

/// Full experiment description. Defaults are the desk-scale profile:
/// 8-class synthetic blobs, softmax-linear, M=32 vehicles, N=4 edges,
/// tau_l=6, tau_e=10, K=60 cloud epochs, eta=0.1, batch 20.
struct ExperimentConfig {
    // task
    std::string task = "softmax-linear"; // softmax-linear | mlp | mean-quadratic
    int classes = 8;
    int input_dim = 16;
    int per_class = 500;
    int test_per_class = 125;
    double separation = 6.0;
    std::vector<int> hidden_dims = {32}; // mlp only
    int quad_dim = 8;                    // mean-quadratic target dimension
    double quad_spread = 1.0;            // scale of the random quadratic targets

    // partition
    PartitionCase partition = PartitionCase::Iid;
    int skew_classes = 1; // l

    // schedule
    int vehicles = 32;
    int edges = 4;
    int tau_l = 6;
    int tau_e = 10;
    int cloud_epochs = 60;
    double eta = 0.1;
    int batch_size = 20; // 0 = full shard
    std::string empty_edge = "carry-forward"; // carry-forward | fail
    int workers = 1;

    // mobility
    MobilitySource mobility = MobilitySource::Static;
    double p_s = 0.5;          // ring sojourn probability
    double speed_mps = 30.0;   // speed source
    double side_m = 1000.0;
    double interval_s = 1.0;
    double sojourn_slope = 1.0;
    double sojourn_intercept = 1.0;
    std::string matrix_file;
    std::string trace_file;

    // analysis + outputs
    bool track_bounds = true;
    bool ring_factor_literal = false;
    std::vector<std::uint64_t> seeds = {1};
    std::vector<double> targets = {0.5, 0.7, 0.9}; // accuracy targets for sweeps
    std::string output_dir = "out";

    /// The sojourn probability the run will actually use (resolved from the
    /// mobility source).
    double resolved_p_s() const;
};

/// Parse the flat `key = value` config format ('#' comments, blank lines
/// allowed). Unknown keys, type errors and constraint violations raise
/// ConfigError naming the key and line.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");

/// Serialize the fully resolved config back to the flat format.
std::string resolved_config_text(const ExperimentConfig& config);

/// Everything a single seeded run needs: data, task, partition, schedule.
struct PreparedRun {
    LabeledDataset train;
    LabeledDataset test;
    ModelSpec spec;
    PartitionPlan plan;
    HFLConfig hfl;
};

/// Materialize datasets, model spec, partition plan and engine config for
/// one seed of the experiment.
PreparedRun prepare_run(const ExperimentConfig& config, std::uint64_t seed);

/// Per-edge probability-difference series ||p - p_n^[j]||_1 over a
/// membership snapshot series; index [j][n].
std::vector<std::vector<double>> prob_diff_series(const LabeledDataset& dataset,
                                                  const PartitionPlan& plan, int num_edges,
                                                  std::span<const MobilityState> series);

struct SeedOutcome {
    std::uint64_t seed = 0;
    double final_accuracy = 0.0;
    double final_train_loss = 0.0;
    std::vector<RoundRecord> records;
    bool ok = false;
    std::string error;
};

struct ExperimentResult {
    std::vector<SeedOutcome> outcomes;
    int exit_code = 0;
};

/// Run every seed, writing per-seed metrics CSV, bound JSON (when enabled)
/// and a resolved-config snapshot under config.output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// In-memory single-seed run (no file output); used by tests and bindings.
SeedOutcome run_single(const ExperimentConfig& config, std::uint64_t seed);

struct SweepRow {
    std::string axis;
    double value = 0.0;
    int seeds_run = 0;
    int seeds_failed = 0;
    double mean_final_accuracy = 0.0;
    double stddev_final_accuracy = 0.0;
    std::vector<int> mean_epochs_to_target; // parallel to config.targets; -1 if never reached
};

/// Run the experiment once per (axis value, seed); per-point failures are
/// recorded and the sweep continues. Returns the summary table and writes
/// sweep_summary.csv plus per-point run directories.
std::vector<SweepRow> sweep(const ExperimentConfig& config, const std::string& axis,
                            std::span<const double> values);

/// Fixed-order metrics CSV:
/// seed,cloud_epoch,edge_round,tau,event,test_acc,train_loss,cf_diff,avg_prob_diff,theta_min,theta_max
void emit_metrics(const std::vector<RoundRecord>& rows, std::uint64_t seed,
                  const std::string& path);

/// First cloud epoch (1-based) whose test accuracy reaches each target;
/// -1 when never reached. Rows must be time-ordered.
std::vector<int> epochs_to_accuracy(const std::vector<RoundRecord>& rows,
                                    std::span<const double> targets);

void write_sweep_summary(const std::vector<SweepRow>& rows, std::span<const double> targets,
                         const std::string& path);

} // namespace mobhfl
