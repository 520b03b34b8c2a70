#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobhfl/dataset.hpp"
#include "mobhfl/engine.hpp"
#include "mobhfl/mobility.hpp"
#include "mobhfl/model.hpp"

namespace mobhfl {

/// Loss-landscape constants: rho (Lipschitz constant of f_m) and beta
/// (smoothness). Exact beta = 1 for the quadratic task; estimated for
/// classifiers.
struct SmoothnessParams {
    double beta = 1.0;
    double rho = 1.0;
};

/// Measured or exact heterogeneity quantities feeding the bounds.
struct HeterogeneityEstimates {
    std::vector<double> delta_m;                     // per-vehicle gradient difference
    double delta = 0.0;                              // alpha-weighted mean of delta_m
    std::vector<std::vector<double>> Delta_n_series; // [j][n] per edge epoch
    std::vector<double> Delta_series;                // [j] theta-weighted, j=0 is initial
    double G = 0.0;                                  // max per-class gradient norm
    std::vector<double> L_n;
    double L = 0.0;
    double lambda = 0.0;                             // mixing rate lambda*
};

/// Everything the closed-form bounds consume.
struct BoundInputs {
    double eta = 0.1;
    int tau_l = 6;
    int tau_e = 10;
    int cloud_epochs = 600;
    int n_edges = 4;
    SmoothnessParams smoothness;
    HeterogeneityEstimates heterogeneity;
    double epsilon = 1.0; // loss-gap floor in the convergence bound
    double phi = 1.0;     // curvature/distance coefficient of the convergence bound
};

/// r(tau, eta, delta) = (delta/beta)[(1+eta*beta)^tau - 1] - tau*eta*delta.
double r_term(long tau, double eta, double delta, double beta);

/// h(t) = tau_l [ sum_{r=1}^{R_t} (1+eta*beta)^r - R_t ], R_t = floor((t-1)/tau_l).
double h_func(long t, int tau_l, double eta, double beta);

/// H = sum_{r=1}^{tau_e - 1} h(r*tau_l).
double H_func(int tau_l, int tau_e, double eta, double beta);

/// Static-scenario CF gap bound:
/// U = r(tau_l*tau_e) - eta(delta - Delta)[tau_e(tau_e-1)tau_l/2 + H].
/// Warns (stderr) when Delta > delta, outside the intended regime.
double u_static(const BoundInputs& inputs, double Delta);

/// Mobility-scenario CF gap bound for cloud epoch k (1-based):
/// U = r(tau_l*tau_e) - eta*tau_l[tau_e(tau_e-1)delta/2 - sum_j j*Delta[(k-1)tau_e + j]].
/// Delta_series is indexed from j=0 (initial distribution).
double u_mobile(const BoundInputs& inputs, int k, std::span<const double> Delta_series);

/// Mobility factor, definitional route: (U_nomob - U_mob) / (tau_l * tau_e).
double mobility_factor(double u_nomob, double u_mob, int tau_l, int tau_e);

/// Mobility factor, expanded route:
/// (eta/tau_e)[ sum_j j (Delta[0] - Delta[(k-1)tau_e+j]) - (delta - Delta[0]) H / tau_l ].
double mobility_factor_expanded(const BoundInputs& inputs, int k,
                                std::span<const double> Delta_series);

enum class DistributionCase { Iid, EdgeIid, EdgeNiid };

/// Closed-form mobility factor per initial distribution: 0 for i.i.d.,
/// -eta*delta*H/(tau_l*tau_e) for local non-i.i.d./edge i.i.d., and
/// (eta G N L / tau_e) sum_j j (1 - lambda^((k-1)tau_e + j)) for edge
/// non-i.i.d. (requires lambda* < 1).
double mobility_factor_closed(DistributionCase dist, const BoundInputs& inputs, int k);

/// Ring-topology edge non-i.i.d. factor. The default substitutes
/// lambda* = p + (1-p)cos(2*pi/N) into the closed form above;
/// `literal_variant` instead evaluates an alternative form with
/// base (1-p)(1-cos(2*pi/N)) and exponent k*tau_e + j.
double mobility_factor_ring(const BoundInputs& inputs, int k, const RingParams& ring,
                            bool literal_variant = false);

/// Envelope on the edge gradient difference: G * lambda^j * N * L.
double delta_bound(int j, double G, int n_edges, double L, double lambda);

/// Heterogeneity from data. Quadratic task: exact, delta_m = ||bbar - b_m||
/// and Delta_n^[j] = ||bbar - bbar_n^[j]|| over the membership series.
/// Classifier kinds: probe-set maxima of full-shard gradient differences.
HeterogeneityEstimates estimate_gradient_differences(
    const ModelSpec& spec, const LabeledDataset& dataset, const PartitionPlan& plan,
    std::span<const MobilityState> membership_series, std::span<const ParamVector> probe_params);

/// Max over probe params and classes of the per-class mean-gradient norm.
/// Classes absent from the dataset are skipped with a warning.
double estimate_G(const ModelSpec& spec, const LabeledDataset& dataset,
                  std::span<const ParamVector> probe_params);

struct FitLResult {
    std::vector<double> L_n;
    double L = 0.0;
};

/// L_n = max_j series_n[j] / (N * lambda^j); L = sum theta_n L_n.
/// prob_diff_series is indexed [j][n].
FitLResult fit_L(const std::vector<std::vector<double>>& prob_diff_series,
                 std::span<const double> theta, double lambda);

/// Convergence bound 1 / (T*eta*phi - (rho/eps^2) sum_k U_k). Throws
/// ConfigError naming the violated condition when eta > 1/beta or the
/// denominator is not positive.
double prop1_bound(const BoundInputs& inputs, std::span<const double> u_series, long total_updates);

/// phi = min_k (1 - beta*eta/2) / ||v_boundary_k - w*||^2 from a logged
/// series of boundary distances.
double phi_from_v_distances(std::span<const double> v_dist_to_opt, double eta, double beta);

struct Prop2Report {
    double delta = 0.0;
    double Delta0 = 0.0;
    double difference = 0.0; // delta - Delta0
    bool holds = false;      // |difference| within tolerance
    double tolerance = 0.0;
};

/// Check delta - Delta^[0] = 0 (holds exactly for i.i.d. and edge
/// non-i.i.d. starts under the class-conditional loss assumption).
Prop2Report check_prop2(const HeterogeneityEstimates& est, double tolerance);

/// Serialize a per-cloud-epoch bound report as JSON (keys "constants" and
/// "per_k", the latter keyed by k with fields u_static, u_mobile, gamma_def,
/// gamma_closed, delta, Delta_series). When ring parameters are given and
/// the case is edge non-i.i.d., gamma_closed goes through the ring formula,
/// honoring `ring_literal`.
std::string bound_report_json(const BoundInputs& inputs,
                              std::optional<DistributionCase> closed_form_case,
                              std::optional<RingParams> ring = std::nullopt,
                              bool ring_literal = false);

} // namespace mobhfl
