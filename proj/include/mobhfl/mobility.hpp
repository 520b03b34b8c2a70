#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mobhfl/dataset.hpp"
#include "mobhfl/rng.hpp"

namespace mobhfl {

/// Row-stochastic N x N transition matrix between edge servers.
struct TransitionMatrix {
    int n = 0;
    std::vector<double> entries; // row-major

    double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * n + j]; }
    double& at(int i, int j) { return entries[static_cast<std::size_t>(i) * n + j]; }

    static TransitionMatrix identity(int n);
    /// Build from row-major entries; throws unless every row sums to 1 within 1e-12.
    static TransitionMatrix from_rows(int n, std::vector<double> entries);
};

/// Which edge each vehicle currently sits under.
struct MobilityState {
    std::vector<int> assignment; // length M, values in [0, N)

    int num_vehicles() const { return static_cast<int>(assignment.size()); }
};

/// Ring of N edges where a vehicle stays put with probability sojourn_prob
/// and otherwise moves to one of its two ring neighbours with equal
/// probability.
struct RingParams {
    int n_edges = 2;
    double sojourn_prob = 1.0;
};

/// External vehicle trajectory: (step, vehicle, edge) rows.
struct TrajectoryTrace {
    struct Row {
        int step;
        int vehicle;
        int edge;
    };
    std::vector<Row> rows;
    int num_vehicles = 0;
    int num_edges = 0;
    int max_step = -1;
};

/// The ring transition matrix: diagonal sojourn_prob, (1-p)/2 to each
/// neighbour. For N=2 the two neighbours coincide, so the off-diagonal
/// entry is 1-p.
TransitionMatrix ring_transition(const RingParams& params);

/// Closed-form ring spectrum: p + (1-p)cos(2*pi*n/N) for n = 0..N-1.
std::vector<double> eigenvalues_ring(const RingParams& params);

/// Largest eigenvalue modulus after removing one copy of the Perron root 1.
/// Throws NonMixingError when that runner-up modulus is itself >= 1 - 1e-9
/// (periodic or disconnected chains) and StructureError when the support
/// graph is reducible.
double lambda_star(const TransitionMatrix& q);

/// Advance every vehicle one Markov step. Vehicle m draws from its current
/// row of q using the stream keyed by (seed, vehicle, step), so the result
/// is independent of iteration order and worker count.
MobilityState step_assignments(const MobilityState& state, const TransitionMatrix& q,
                               std::uint64_t seed, std::uint64_t step);

/// Evolve per-edge label distributions one edge epoch under q.
/// General form: p_n' = sum_n' theta_n' q(n',n) p_n' / theta_n', with the
/// edge weights advanced as theta' = q^T theta. `theta` is updated in place.
/// Throws DegenerateEdgeError when an edge's weight hits zero.
std::vector<LabelDistribution> label_evolution(const std::vector<LabelDistribution>& dists,
                                               const TransitionMatrix& q,
                                               std::vector<double>& theta);

/// Sojourn probability from vehicle speed: clamp(intercept - slope*v*interval/side, 0, 1).
double sojourn_from_speed(double speed_mps, double side_m, double interval_s, double slope = 1.0,
                          double intercept = 1.0);

/// CSV trace with header "step,vehicle,edge". Parse errors name the line.
TrajectoryTrace load_trace(const std::string& path);

/// Assignment snapshot at a step; every vehicle must be present.
MobilityState assignments_at(const TrajectoryTrace& trace, int step);

/// Row-normalized transition counts over consecutive steps; edges never
/// observed leaving a state become self-loops.
TransitionMatrix empirical_transition(const TrajectoryTrace& trace);

void save_trace(const TrajectoryTrace& trace, const std::string& path);

} // namespace mobhfl
