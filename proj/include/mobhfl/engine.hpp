#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mobhfl/dataset.hpp"
#include "mobhfl/mobility.hpp"
#include "mobhfl/model.hpp"

namespace mobhfl {

enum class Scenario { Static, Markov, Trace };

enum class EmptyEdgePolicy { CarryForward, Fail };

/// Training-run configuration for the hierarchical federated averaging loop.
struct HFLConfig {
    int num_vehicles = 32;
    int num_edges = 4;
    int tau_l = 6;       // local updates per edge epoch
    int tau_e = 10;      // edge epochs per cloud epoch
    int cloud_epochs = 600;
    double eta = 0.1;
    int batch_size = 20; // 0 means full shard
    Scenario scenario = Scenario::Static;
    TransitionMatrix transition;          // Markov scenario
    TrajectoryTrace trace;                // Trace scenario
    EmptyEdgePolicy empty_edge = EmptyEdgePolicy::CarryForward;
    int workers = 1;
    bool track_virtual = true;            // maintain u/v and the CF gap
    std::uint64_t seed = 0;
};

/// Per-vehicle training state plus the mobility assignment.
struct FleetState {
    std::vector<ParamVector> params; // one per vehicle
    MobilityState mobility;
    long tau = 0;
};

/// Virtual cloud model u (data-weighted mean of all local models) and
/// virtual centralized model v (exact full-gradient trajectory, resynced to
/// u at every cloud boundary).
struct VirtualModels {
    ParamVector u;
    ParamVector v;
};

enum class EventKind { Local, EdgeAgg, CloudAgg };

/// One metrics record. test_accuracy holds the latest evaluated value
/// (classifier kinds; 0 for the quadratic task), train_loss the mean batch
/// loss of the preceding local rounds.
struct RoundRecord {
    long tau = 0;
    int cloud_epoch = 0; // 1-based
    int edge_round = 0;  // 1-based within the cloud epoch
    EventKind event = EventKind::Local;
    double test_accuracy = 0.0;
    double train_loss = 0.0;
    double cf_difference = 0.0;
    double avg_prob_difference = 0.0;
    std::vector<double> theta; // live per-edge data fractions
};

/// Hook bundle; every callback is optional and invoked sequentially from the
/// engine thread.
struct RunHooks {
    std::function<void(const FleetState&)> on_local;
    /// After each edge aggregation; j is the global edge-epoch index (1-based).
    std::function<void(int j, const FleetState&, const std::vector<ParamVector>& edge_models)>
        on_edge_agg;
    /// After each cloud aggregation; k is 1-based.
    std::function<void(int k, const ParamVector& cloud_model, const VirtualModels&)> on_cloud_agg;
    /// CF gap measured at the cloud boundary, before v resyncs to u.
    std::function<void(int k, double cf, const VirtualModels&)> on_cf_measured;
};

// --- aggregation primitives ---------------------------------------------

/// w_m <- edge model of the vehicle's current edge.
void edge_distribute(const std::vector<ParamVector>& edge_models, const MobilityState& state,
                     std::vector<ParamVector>& fleet_params);

/// Data-size-weighted mean per edge over its covering set. Empty edges keep
/// their previous model (CarryForward) or raise DegenerateEdgeError (Fail).
std::vector<ParamVector> edge_aggregate(const std::vector<ParamVector>& fleet_params,
                                        const MobilityState& state,
                                        std::span<const std::size_t> shard_sizes, int num_edges,
                                        const std::vector<ParamVector>& previous_edge_models,
                                        EmptyEdgePolicy policy);

/// theta-weighted mean of edge models; theta must sum to 1 within 1e-12.
ParamVector cloud_aggregate(const std::vector<ParamVector>& edge_models,
                            std::span<const double> theta);

/// Synchronized local SGD rounds across the fleet: one batch per vehicle per
/// round, sampled without replacement within a pass over the shard and
/// reshuffled per pass on the vehicle's own stream. Deterministic for a
/// given seed and independent of the worker count.
class LocalUpdater {
public:
    LocalUpdater(const ModelSpec& spec, const LabeledDataset& dataset,
                 const PartitionPlan& plan, double eta, int batch_size, std::uint64_t seed,
                 int workers = 1);
    ~LocalUpdater();
    LocalUpdater(LocalUpdater&&) noexcept;
    LocalUpdater& operator=(LocalUpdater&&) noexcept;

    /// One local update round in place; returns the mean batch loss.
    double round(std::vector<ParamVector>& fleet_params);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Data-size weights alpha_m = |D_m| / |D|.
std::vector<double> vehicle_weights(std::span<const std::size_t> shard_sizes);

/// Live edge weights theta_n = sum of covered shard sizes / total.
std::vector<double> edge_weights(const MobilityState& state,
                                 std::span<const std::size_t> shard_sizes, int num_edges);

/// Virtual cloud model: alpha-weighted mean over all vehicles.
ParamVector virtual_cloud(const std::vector<ParamVector>& fleet_params,
                          std::span<const std::size_t> shard_sizes);

/// One exact full-gradient step of the centralized trajectory.
ParamVector virtual_centralized_step(const ParamVector& v, const ModelSpec& spec,
                                     const LabeledDataset& dataset,
                                     std::span<const int> full_indices, double eta);

/// Euclidean norm of u - v.
double cf_difference(const ParamVector& u, const ParamVector& v_tilde);

// --- the training loop ----------------------------------------------------

struct RunResult {
    std::vector<RoundRecord> records;        // edge_agg and cloud_agg rows
    ParamVector final_cloud_model;
    std::vector<MobilityState> membership_series; // snapshot per edge epoch, index 0 = initial
    std::vector<double> cf_at_boundaries;         // per cloud epoch, measured pre-resync
    std::vector<double> v_dist_to_opt;            // ||v - w*|| at boundaries 0..K-1 (quadratic only)
};

/// Run the full mobility-aware hierarchical federated averaging schedule:
/// K cloud epochs of tau_e edge epochs, each being edge distribution,
/// tau_l local SGD rounds, one mobility step, then edge aggregation.
/// test_dataset may be null for non-classifier tasks.
RunResult run_mob_hierfavg(const HFLConfig& config, const PartitionPlan& plan,
                           const ModelSpec& spec, const LabeledDataset& dataset,
                           const LabeledDataset* test_dataset, const RunHooks& hooks = {});

} // namespace mobhfl
