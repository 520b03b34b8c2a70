#include "mobhfl/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mobhfl/errors.hpp"

namespace mobhfl {

namespace {

double vec_norm(const ParamVector& a, const ParamVector& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

// Entries j = (k-1)*tau_e + 1 .. (k-1)*tau_e + tau_e - 1 of the series,
// validated against its length.
void check_series(const BoundInputs& inputs, int k, std::span<const double> series,
                  const char* who) {
    if (k < 1) throw InputError(std::string(who) + ": cloud epoch index must be >= 1");
    const long last = static_cast<long>(k - 1) * inputs.tau_e + inputs.tau_e - 1;
    if (last >= static_cast<long>(series.size()))
        throw InputError(std::string(who) + ": Delta series has " +
                         std::to_string(series.size()) + " entries, epoch " + std::to_string(k) +
                         " needs index " + std::to_string(last));
}

} // namespace

double r_term(long tau, double eta, double delta, double beta) {
    if (tau < 0) throw InputError("r_term: tau must be nonnegative");
    return delta / beta * (std::pow(1.0 + eta * beta, static_cast<double>(tau)) - 1.0) -
           static_cast<double>(tau) * eta * delta;
}

double h_func(long t, int tau_l, double eta, double beta) {
    if (t < 1) throw InputError("h_func: t must be >= 1");
    if (tau_l < 1) throw InputError("h_func: tau_l must be >= 1");
    const long r_t = (t - 1) / tau_l;
    double sum = 0.0;
    double power = 1.0;
    const double growth = 1.0 + eta * beta;
    for (long r = 1; r <= r_t; ++r) {
        power *= growth;
        sum += power;
    }
    return tau_l * (sum - static_cast<double>(r_t));
}

double H_func(int tau_l, int tau_e, double eta, double beta) {
    if (tau_e < 1) throw InputError("H_func: tau_e must be >= 1");
    double total = 0.0;
    for (int r = 1; r <= tau_e - 1; ++r)
        total += h_func(static_cast<long>(r) * tau_l, tau_l, eta, beta);
    return total;
}

double u_static(const BoundInputs& inputs, double Delta) {
    const double delta = inputs.heterogeneity.delta;
    if (Delta > delta + 1e-12)
        std::cerr << "warning: u_static called with Delta " << Delta << " > delta " << delta
                  << "\n";
    const long horizon = static_cast<long>(inputs.tau_l) * inputs.tau_e;
    const double r = r_term(horizon, inputs.eta, delta, inputs.smoothness.beta);
    const double bracket =
        0.5 * inputs.tau_e * (inputs.tau_e - 1.0) * inputs.tau_l +
        H_func(inputs.tau_l, inputs.tau_e, inputs.eta, inputs.smoothness.beta);
    return r - inputs.eta * (delta - Delta) * bracket;
}

double u_mobile(const BoundInputs& inputs, int k, std::span<const double> Delta_series) {
    check_series(inputs, k, Delta_series, "u_mobile");
    const double delta = inputs.heterogeneity.delta;
    const long horizon = static_cast<long>(inputs.tau_l) * inputs.tau_e;
    const double r = r_term(horizon, inputs.eta, delta, inputs.smoothness.beta);
    double weighted = 0.0;
    for (int j = 1; j <= inputs.tau_e - 1; ++j)
        weighted += j * Delta_series[static_cast<long>(k - 1) * inputs.tau_e + j];
    const double bracket = 0.5 * inputs.tau_e * (inputs.tau_e - 1.0) * delta - weighted;
    return r - inputs.eta * inputs.tau_l * bracket;
}

double mobility_factor(double u_nomob, double u_mob, int tau_l, int tau_e) {
    return (u_nomob - u_mob) / (static_cast<double>(tau_l) * tau_e);
}

double mobility_factor_expanded(const BoundInputs& inputs, int k,
                                std::span<const double> Delta_series) {
    check_series(inputs, k, Delta_series, "mobility_factor_expanded");
    const double Delta0 = Delta_series[0];
    double fusion = 0.0;
    for (int j = 1; j <= inputs.tau_e - 1; ++j)
        fusion += j * (Delta0 - Delta_series[static_cast<long>(k - 1) * inputs.tau_e + j]);
    const double shuffle =
        (inputs.heterogeneity.delta - Delta0) *
        H_func(inputs.tau_l, inputs.tau_e, inputs.eta, inputs.smoothness.beta) / inputs.tau_l;
    return inputs.eta / inputs.tau_e * (fusion - shuffle);
}

double mobility_factor_closed(DistributionCase dist, const BoundInputs& inputs, int k) {
    switch (dist) {
        case DistributionCase::Iid:
            return 0.0;
        case DistributionCase::EdgeIid:
            return -inputs.eta * inputs.heterogeneity.delta *
                   H_func(inputs.tau_l, inputs.tau_e, inputs.eta, inputs.smoothness.beta) /
                   (static_cast<double>(inputs.tau_l) * inputs.tau_e);
        case DistributionCase::EdgeNiid: {
            const double lambda = inputs.heterogeneity.lambda;
            if (lambda >= 1.0 - 1e-9)
                throw NonMixingError("mobility_factor_closed: lambda* = " +
                                     std::to_string(lambda) + " does not mix");
            if (k < 1) throw InputError("mobility_factor_closed: k must be >= 1");
            double sum = 0.0;
            for (int j = 1; j <= inputs.tau_e - 1; ++j) {
                const double expo = static_cast<double>(k - 1) * inputs.tau_e + j;
                sum += j * (1.0 - std::pow(std::abs(lambda), expo));
            }
            return inputs.eta * inputs.heterogeneity.G * inputs.n_edges *
                   inputs.heterogeneity.L / inputs.tau_e * sum;
        }
    }
    throw InputError("mobility_factor_closed: unknown distribution case");
}

double mobility_factor_ring(const BoundInputs& inputs, int k, const RingParams& ring,
                            bool literal_variant) {
    if (!literal_variant) {
        BoundInputs local = inputs;
        local.heterogeneity.lambda =
            ring.sojourn_prob +
            (1.0 - ring.sojourn_prob) * std::cos(2.0 * 3.14159265358979323846 / ring.n_edges);
        return mobility_factor_closed(DistributionCase::EdgeNiid, local, k);
    }
    // Literal variant: base (1-p)(1-cos(2*pi/N)), exponent k*tau_e + j.
    const double base = (1.0 - ring.sojourn_prob) *
                        (1.0 - std::cos(2.0 * 3.14159265358979323846 / ring.n_edges));
    double sum = 0.0;
    for (int j = 1; j <= inputs.tau_e - 1; ++j)
        sum += j * std::pow(base, static_cast<double>(k) * inputs.tau_e + j);
    return inputs.eta * inputs.heterogeneity.G * inputs.n_edges *
           inputs.heterogeneity.L / inputs.tau_e * sum;
}

double delta_bound(int j, double G, int n_edges, double L, double lambda) {
    if (j < 0) throw InputError("delta_bound: j must be nonnegative");
    if (lambda >= 1.0) throw NonMixingError("delta_bound: lambda* must be < 1");
    return G * std::pow(std::abs(lambda), j) * n_edges * L;
}

HeterogeneityEstimates estimate_gradient_differences(
    const ModelSpec& spec, const LabeledDataset& dataset, const PartitionPlan& plan,
    std::span<const MobilityState> membership_series, std::span<const ParamVector> probe_params) {
    const int m_count = static_cast<int>(plan.shards.size());
    std::vector<std::size_t> sizes(m_count);
    for (int m = 0; m < m_count; ++m) {
        if (plan.shards[m].empty())
            throw ContractError("estimate_gradient_differences: empty shard " +
                                std::to_string(m));
        sizes[m] = plan.shards[m].size();
    }
    const auto alpha = vehicle_weights(sizes);

    HeterogeneityEstimates est;
    est.delta_m.assign(m_count, 0.0);

    int n_count = 0;
    for (const auto& s : membership_series)
        for (int e : s.assignment) n_count = std::max(n_count, e + 1);

    if (spec.kind == ModelKind::MeanQuadratic) {
        // Exact: grad difference is w-independent, || bbar - b_m ||.
        ParamVector bbar(spec.targets.front().size(), 0.0);
        for (int m = 0; m < m_count; ++m)
            for (std::size_t i = 0; i < bbar.size(); ++i)
                bbar[i] += alpha[m] * spec.targets[m][i];
        for (int m = 0; m < m_count; ++m) est.delta_m[m] = vec_norm(bbar, spec.targets[m]);
        for (int m = 0; m < m_count; ++m) est.delta += alpha[m] * est.delta_m[m];

        for (const auto& state : membership_series) {
            std::vector<ParamVector> edge_mean(n_count,
                                               ParamVector(bbar.size(), 0.0));
            std::vector<double> edge_mass(n_count, 0.0);
            for (int m = 0; m < m_count; ++m) edge_mass[state.assignment[m]] += alpha[m];
            for (int m = 0; m < m_count; ++m) {
                const int n = state.assignment[m];
                if (edge_mass[n] == 0.0) continue;
                const double w = alpha[m] / edge_mass[n];
                for (std::size_t i = 0; i < bbar.size(); ++i)
                    edge_mean[n][i] += w * spec.targets[m][i];
            }
            std::vector<double> Delta_n(n_count, 0.0);
            double Delta = 0.0;
            for (int n = 0; n < n_count; ++n) {
                if (edge_mass[n] == 0.0) continue;
                Delta_n[n] = vec_norm(bbar, edge_mean[n]);
                Delta += edge_mass[n] * Delta_n[n];
            }
            est.Delta_n_series.push_back(std::move(Delta_n));
            est.Delta_series.push_back(Delta);
        }
        return est;
    }

    // Classifier path: probe-set maxima over full-shard gradients.
    if (probe_params.empty())
        throw InputError("estimate_gradient_differences: classifier path needs probe params");

    std::vector<DataBatch> shard_batches(m_count);
    for (int m = 0; m < m_count; ++m) shard_batches[m] = make_batch(dataset, plan.shards[m]);

    for (const auto& probe : probe_params) {
        std::vector<ParamVector> shard_grads(m_count);
        ParamVector global_grad(probe.size(), 0.0);
        for (int m = 0; m < m_count; ++m) {
            shard_grads[m] = gradient(spec, probe, shard_batches[m]);
            for (std::size_t i = 0; i < probe.size(); ++i)
                global_grad[i] += alpha[m] * shard_grads[m][i];
        }
        for (int m = 0; m < m_count; ++m)
            est.delta_m[m] = std::max(est.delta_m[m], vec_norm(shard_grads[m], global_grad));

        for (std::size_t j = 0; j < membership_series.size(); ++j) {
            const auto& state = membership_series[j];
            if (est.Delta_n_series.size() <= j) {
                est.Delta_n_series.emplace_back(n_count, 0.0);
                est.Delta_series.push_back(0.0);
            }
            std::vector<double> edge_mass(n_count, 0.0);
            for (int m = 0; m < m_count; ++m) edge_mass[state.assignment[m]] += alpha[m];
            std::vector<ParamVector> edge_grad(n_count, ParamVector(probe.size(), 0.0));
            for (int m = 0; m < m_count; ++m) {
                const int n = state.assignment[m];
                if (edge_mass[n] == 0.0) continue;
                const double w = alpha[m] / edge_mass[n];
                for (std::size_t i = 0; i < probe.size(); ++i)
                    edge_grad[n][i] += w * shard_grads[m][i];
            }
            double Delta = 0.0;
            for (int n = 0; n < n_count; ++n) {
                if (edge_mass[n] == 0.0) continue;
                est.Delta_n_series[j][n] =
                    std::max(est.Delta_n_series[j][n], vec_norm(edge_grad[n], global_grad));
                Delta += edge_mass[n] * est.Delta_n_series[j][n];
            }
            est.Delta_series[j] = std::max(est.Delta_series[j], Delta);
        }
    }
    for (int m = 0; m < m_count; ++m) est.delta += alpha[m] * est.delta_m[m];
    return est;
}

double estimate_G(const ModelSpec& spec, const LabeledDataset& dataset,
                  std::span<const ParamVector> probe_params) {
    if (spec.kind == ModelKind::MeanQuadratic)
        throw UnsupportedError("estimate_G: defined for classifier kinds only");
    if (probe_params.empty()) throw InputError("estimate_G: need at least one probe point");

    std::vector<std::vector<int>> by_class(dataset.num_classes);
    for (int i = 0; i < dataset.num_samples; ++i) by_class[dataset.labels[i]].push_back(i);

    double g = 0.0;
    for (int c = 0; c < dataset.num_classes; ++c) {
        if (by_class[c].empty()) {
            std::cerr << "warning: estimate_G skipping class " << c << " with no samples\n";
            continue;
        }
        DataBatch batch = make_batch(dataset, by_class[c]);
        for (const auto& probe : probe_params) {
            ParamVector grad = gradient(spec, probe, batch);
            double norm = 0.0;
            for (double v : grad) norm += v * v;
            g = std::max(g, std::sqrt(norm));
        }
    }
    return g;
}

FitLResult fit_L(const std::vector<std::vector<double>>& prob_diff_series,
                 std::span<const double> theta, double lambda) {
    if (prob_diff_series.empty()) throw InputError("fit_L: empty series");
    if (!(lambda > 0.0) || lambda >= 1.0)
        throw NonMixingError("fit_L: lambda* must lie in (0, 1)");
    const std::size_t n_count = prob_diff_series.front().size();
    if (theta.size() != n_count) throw InputError("fit_L: theta size does not match edge count");

    FitLResult fit;
    fit.L_n.assign(n_count, 0.0);
    double power = 1.0;
    for (std::size_t j = 0; j < prob_diff_series.size(); ++j) {
        if (prob_diff_series[j].size() != n_count)
            throw InputError("fit_L: ragged series at j=" + std::to_string(j));
        for (std::size_t n = 0; n < n_count; ++n)
            fit.L_n[n] = std::max(fit.L_n[n],
                                  prob_diff_series[j][n] / (static_cast<double>(n_count) * power));
        power *= lambda;
    }
    for (std::size_t n = 0; n < n_count; ++n) fit.L += theta[n] * fit.L_n[n];
    return fit;
}

double prop1_bound(const BoundInputs& inputs, std::span<const double> u_series,
                   long total_updates) {
    if (inputs.eta > 1.0 / inputs.smoothness.beta + 1e-15)
        throw ConfigError("prop1_bound: condition (1) violated, eta > 1/beta");
    double u_sum = 0.0;
    for (double u : u_series) u_sum += std::max(0.0, u);
    const double denom = static_cast<double>(total_updates) * inputs.eta * inputs.phi -
                         inputs.smoothness.rho / (inputs.epsilon * inputs.epsilon) * u_sum;
    if (!(denom > 0.0))
        throw ConfigError("prop1_bound: condition (2) violated, denominator " +
                          std::to_string(denom) + " is not positive");
    return 1.0 / denom;
}

double phi_from_v_distances(std::span<const double> v_dist_to_opt, double eta, double beta) {
    if (v_dist_to_opt.empty()) throw InputError("phi_from_v_distances: empty series");
    double phi = std::numeric_limits<double>::infinity();
    for (double d : v_dist_to_opt) {
        if (d <= 0.0) continue; // already at the optimum: no constraint
        phi = std::min(phi, (1.0 - beta * eta / 2.0) / (d * d));
    }
    if (!std::isfinite(phi))
        throw InputError("phi_from_v_distances: trajectory sits at the optimum throughout");
    return phi;
}

Prop2Report check_prop2(const HeterogeneityEstimates& est, double tolerance) {
    Prop2Report report;
    report.delta = est.delta;
    report.Delta0 = est.Delta_series.empty() ? 0.0 : est.Delta_series.front();
    report.difference = report.delta - report.Delta0;
    report.tolerance = tolerance;
    report.holds = std::abs(report.difference) <= tolerance;
    return report;
}

std::string bound_report_json(const BoundInputs& inputs,
                              std::optional<DistributionCase> closed_form_case,
                              std::optional<RingParams> ring, bool ring_literal) {
    nlohmann::json root;
    auto& consts = root["constants"];
    consts["eta"] = inputs.eta;
    consts["tau_l"] = inputs.tau_l;
    consts["tau_e"] = inputs.tau_e;
    consts["cloud_epochs"] = inputs.cloud_epochs;
    consts["beta"] = inputs.smoothness.beta;
    consts["rho"] = inputs.smoothness.rho;
    consts["delta"] = inputs.heterogeneity.delta;
    consts["G"] = inputs.heterogeneity.G;
    consts["L"] = inputs.heterogeneity.L;
    consts["lambda_star"] = inputs.heterogeneity.lambda;
    consts["n_edges"] = inputs.n_edges;
    consts["H"] = H_func(inputs.tau_l, inputs.tau_e, inputs.eta, inputs.smoothness.beta);
    consts["Delta_series_full"] = inputs.heterogeneity.Delta_series;

    const auto& series = inputs.heterogeneity.Delta_series;
    auto& per_k = root["per_k"];
    const double Delta0 = series.empty() ? 0.0 : series.front();
    for (int k = 1; k <= inputs.cloud_epochs; ++k) {
        const long last = static_cast<long>(k - 1) * inputs.tau_e + inputs.tau_e - 1;
        if (last >= static_cast<long>(series.size())) break;
        nlohmann::json entry;
        const double u_no = u_static(inputs, Delta0);
        const double u_mo = u_mobile(inputs, k, series);
        entry["u_static"] = u_no;
        entry["u_mobile"] = u_mo;
        entry["gamma_def"] = mobility_factor(u_no, u_mo, inputs.tau_l, inputs.tau_e);
        if (closed_form_case) {
            if (*closed_form_case == DistributionCase::EdgeNiid && ring)
                entry["gamma_closed"] = mobility_factor_ring(inputs, k, *ring, ring_literal);
            else
                entry["gamma_closed"] = mobility_factor_closed(*closed_form_case, inputs, k);
        }
        entry["delta"] = inputs.heterogeneity.delta;
        auto& ds = entry["Delta_series"];
        for (int j = 1; j <= inputs.tau_e - 1; ++j)
            ds.push_back(series[static_cast<long>(k - 1) * inputs.tau_e + j]);
        per_k[std::to_string(k)] = std::move(entry);
    }
    return root.dump(2);
}

} // namespace mobhfl
