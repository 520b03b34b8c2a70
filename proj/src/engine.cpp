#include "mobhfl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "mobhfl/errors.hpp"

namespace mobhfl {

namespace {

// Per-vehicle minibatch sampler: without replacement within a pass over the
// shard, reshuffled at every pass with the vehicle's own stream. The final
// batch of a pass may be short when the shard size is not a multiple of the
// batch size.
class BatchSampler {
public:
    BatchSampler() = default;
    BatchSampler(const std::vector<int>& shard, std::uint64_t seed, int vehicle)
        : shard_(&shard), seed_(seed), vehicle_(vehicle) {}

    std::vector<int> next(int batch_size) {
        if (batch_size <= 0 || batch_size >= static_cast<int>(shard_->size()))
            return *shard_; // full batch, canonical order
        if (pos_ >= order_.size()) reshuffle();
        const std::size_t take =
            std::min<std::size_t>(batch_size, order_.size() - pos_);
        std::vector<int> batch(order_.begin() + pos_, order_.begin() + pos_ + take);
        pos_ += take;
        return batch;
    }

private:
    void reshuffle() {
        order_ = *shard_;
        StreamRng stream(seed_, static_cast<std::uint64_t>(vehicle_) | (0xba7ull << 40), pass_++);
        stream.shuffle(order_);
        pos_ = 0;
    }

    const std::vector<int>* shard_ = nullptr;
    std::vector<int> order_;
    std::size_t pos_ = 0;
    std::uint64_t pass_ = 0;
    std::uint64_t seed_ = 0;
    int vehicle_ = 0;
};

// Run fn(m) for every vehicle, optionally on a small thread pool. Results
// must go to per-vehicle slots; the split is by contiguous ranges.
template <typename Fn>
void for_each_vehicle(int workers, int num_vehicles, Fn&& fn) {
    if (workers <= 1 || num_vehicles <= 1) {
        for (int m = 0; m < num_vehicles; ++m) fn(m);
        return;
    }
    const int w = std::min(workers, num_vehicles);
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (int t = 0; t < w; ++t) {
        const int lo = static_cast<int>(static_cast<long>(t) * num_vehicles / w);
        const int hi = static_cast<int>(static_cast<long>(t + 1) * num_vehicles / w);
        pool.emplace_back([lo, hi, &fn] {
            for (int m = lo; m < hi; ++m) fn(m);
        });
    }
    for (auto& th : pool) th.join();
}

std::vector<std::size_t> shard_sizes_of(const PartitionPlan& plan) {
    std::vector<std::size_t> sizes(plan.shards.size());
    for (std::size_t m = 0; m < plan.shards.size(); ++m) sizes[m] = plan.shards[m].size();
    return sizes;
}

} // namespace

struct LocalUpdater::Impl {
    const ModelSpec* spec;
    const LabeledDataset* dataset;
    const PartitionPlan* plan;
    double eta;
    int batch_size;
    int workers;
    bool quadratic;
    std::vector<BatchSampler> samplers;
    std::vector<double> losses;
    std::vector<ParamVector> grads;
};

LocalUpdater::LocalUpdater(const ModelSpec& spec, const LabeledDataset& dataset,
                           const PartitionPlan& plan, double eta, int batch_size,
                           std::uint64_t seed, int workers)
    : impl_(std::make_unique<Impl>()) {
    if (!(eta > 0.0)) throw ConfigError("LocalUpdater: learning rate must be positive");
    impl_->spec = &spec;
    impl_->dataset = &dataset;
    impl_->plan = &plan;
    impl_->eta = eta;
    impl_->batch_size = batch_size;
    impl_->workers = workers;
    impl_->quadratic = spec.kind == ModelKind::MeanQuadratic;
    const int m = static_cast<int>(plan.shards.size());
    impl_->samplers.reserve(m);
    for (int v = 0; v < m; ++v) {
        if (plan.shards[v].empty())
            throw ConfigError("LocalUpdater: empty shard " + std::to_string(v));
        impl_->samplers.emplace_back(plan.shards[v], seed, v);
    }
    impl_->losses.assign(m, 0.0);
    impl_->grads.resize(m);
}

LocalUpdater::~LocalUpdater() = default;
LocalUpdater::LocalUpdater(LocalUpdater&&) noexcept = default;
LocalUpdater& LocalUpdater::operator=(LocalUpdater&&) noexcept = default;

double LocalUpdater::round(std::vector<ParamVector>& fleet_params) {
    Impl& im = *impl_;
    const int m = static_cast<int>(im.samplers.size());
    if (static_cast<int>(fleet_params.size()) != m)
        throw ContractError("LocalUpdater: fleet size does not match the plan");
    for_each_vehicle(im.workers, m, [&](int v) {
        DataBatch batch;
        if (im.quadratic) {
            batch.shard_index = v;
        } else {
            auto indices = im.samplers[v].next(im.batch_size);
            batch = make_batch(*im.dataset, indices);
        }
        im.losses[v] = loss_and_gradient(*im.spec, fleet_params[v], batch, im.grads[v]);
        ParamVector& w = fleet_params[v];
        const ParamVector& g = im.grads[v];
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= im.eta * g[i];
    });
    double total = 0.0;
    for (int v = 0; v < m; ++v) total += im.losses[v];
    return total / m;
}

void edge_distribute(const std::vector<ParamVector>& edge_models, const MobilityState& state,
                     std::vector<ParamVector>& fleet_params) {
    for (std::size_t m = 0; m < fleet_params.size(); ++m) {
        const int n = state.assignment[m];
        if (n < 0 || n >= static_cast<int>(edge_models.size()))
            throw ContractError("edge_distribute: vehicle " + std::to_string(m) +
                                " assigned to edge " + std::to_string(n));
        fleet_params[m] = edge_models[n];
    }
}

std::vector<double> vehicle_weights(std::span<const std::size_t> shard_sizes) {
    std::size_t total = 0;
    for (std::size_t s : shard_sizes) total += s;
    if (total == 0) throw ContractError("vehicle_weights: no data");
    std::vector<double> alpha(shard_sizes.size());
    for (std::size_t m = 0; m < shard_sizes.size(); ++m)
        alpha[m] = static_cast<double>(shard_sizes[m]) / static_cast<double>(total);
    return alpha;
}

std::vector<double> edge_weights(const MobilityState& state,
                                 std::span<const std::size_t> shard_sizes, int num_edges) {
    std::vector<std::size_t> per_edge(num_edges, 0);
    std::size_t total = 0;
    for (std::size_t m = 0; m < shard_sizes.size(); ++m) {
        per_edge[state.assignment[m]] += shard_sizes[m];
        total += shard_sizes[m];
    }
    std::vector<double> theta(num_edges);
    for (int n = 0; n < num_edges; ++n)
        theta[n] = static_cast<double>(per_edge[n]) / static_cast<double>(total);
    return theta;
}

std::vector<ParamVector> edge_aggregate(const std::vector<ParamVector>& fleet_params,
                                        const MobilityState& state,
                                        std::span<const std::size_t> shard_sizes, int num_edges,
                                        const std::vector<ParamVector>& previous_edge_models,
                                        EmptyEdgePolicy policy) {
    const std::size_t dim = fleet_params.empty() ? 0 : fleet_params.front().size();
    std::vector<ParamVector> models(num_edges, ParamVector(dim, 0.0));
    std::vector<std::size_t> edge_data(num_edges, 0);

    for (std::size_t m = 0; m < fleet_params.size(); ++m)
        edge_data[state.assignment[m]] += shard_sizes[m];

    // Ascending vehicle order keeps the reduction deterministic.
    for (std::size_t m = 0; m < fleet_params.size(); ++m) {
        const int n = state.assignment[m];
        if (edge_data[n] == 0) continue;
        const double alpha =
            static_cast<double>(shard_sizes[m]) / static_cast<double>(edge_data[n]);
        const ParamVector& w = fleet_params[m];
        ParamVector& acc = models[n];
        for (std::size_t i = 0; i < dim; ++i) acc[i] += alpha * w[i];
    }

    for (int n = 0; n < num_edges; ++n) {
        bool empty = true;
        for (std::size_t m = 0; m < fleet_params.size(); ++m)
            if (state.assignment[m] == n) {
                empty = false;
                break;
            }
        if (!empty) continue;
        if (policy == EmptyEdgePolicy::Fail)
            throw DegenerateEdgeError("edge_aggregate: edge " + std::to_string(n) +
                                      " has no vehicles");
        if (n < static_cast<int>(previous_edge_models.size()))
            models[n] = previous_edge_models[n]; // carry-forward
    }
    return models;
}

ParamVector cloud_aggregate(const std::vector<ParamVector>& edge_models,
                            std::span<const double> theta) {
    if (edge_models.empty() || edge_models.size() != theta.size())
        throw ContractError("cloud_aggregate: need one weight per edge model");
    double sum = 0.0;
    for (double t : theta) sum += t;
    if (std::abs(sum - 1.0) > 1e-12)
        throw ContractError("cloud_aggregate: edge weights sum to " + std::to_string(sum));

    ParamVector cloud(edge_models.front().size(), 0.0);
    for (std::size_t n = 0; n < edge_models.size(); ++n) {
        const ParamVector& w = edge_models[n];
        for (std::size_t i = 0; i < cloud.size(); ++i) cloud[i] += theta[n] * w[i];
    }
    return cloud;
}

ParamVector virtual_cloud(const std::vector<ParamVector>& fleet_params,
                          std::span<const std::size_t> shard_sizes) {
    if (fleet_params.empty()) throw ContractError("virtual_cloud: empty fleet");
    const auto alpha = vehicle_weights(shard_sizes);
    ParamVector u(fleet_params.front().size(), 0.0);
    for (std::size_t m = 0; m < fleet_params.size(); ++m) {
        const ParamVector& w = fleet_params[m];
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += alpha[m] * w[i];
    }
    return u;
}

ParamVector virtual_centralized_step(const ParamVector& v, const ModelSpec& spec,
                                     const LabeledDataset& dataset,
                                     std::span<const int> full_indices, double eta) {
    if (spec.kind == ModelKind::MeanQuadratic) {
        // Exact global gradient: v - mean of targets.
        ParamVector grad(v.size(), 0.0);
        const double w = 1.0 / static_cast<double>(spec.targets.size());
        for (const auto& target : spec.targets)
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += w * (v[i] - target[i]);
        return sgd_step(v, grad, eta);
    }
    DataBatch full = make_batch(dataset, full_indices);
    ParamVector grad;
    loss_and_gradient(spec, v, full, grad);
    return sgd_step(v, grad, eta);
}

double cf_difference(const ParamVector& u, const ParamVector& v_tilde) {
    if (u.size() != v_tilde.size()) throw ContractError("cf_difference: dimension mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v_tilde[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

RunResult run_mob_hierfavg(const HFLConfig& config, const PartitionPlan& plan,
                           const ModelSpec& spec, const LabeledDataset& dataset,
                           const LabeledDataset* test_dataset, const RunHooks& hooks) {
    const int m_count = config.num_vehicles;
    const int n_count = config.num_edges;
    if (m_count < 1 || n_count < 1 || m_count < n_count)
        throw ConfigError("run: need M >= N >= 1");
    if (config.tau_l < 1 || config.tau_e < 1 || config.cloud_epochs < 1)
        throw ConfigError("run: periods must be at least 1");
    if (!(config.eta > 0.0)) throw ConfigError("run: learning rate must be positive");
    if (static_cast<int>(plan.shards.size()) != m_count)
        throw ConfigError("run: plan has " + std::to_string(plan.shards.size()) +
                          " shards for " + std::to_string(m_count) + " vehicles");
    for (const auto& shard : plan.shards)
        if (shard.empty()) throw ConfigError("run: empty shard in partition plan");
    const bool quadratic = spec.kind == ModelKind::MeanQuadratic;
    if (quadratic && static_cast<int>(spec.targets.size()) != m_count)
        throw ConfigError("run: quadratic task needs one target per vehicle");
    if (config.scenario == Scenario::Markov && config.transition.n != n_count)
        throw ConfigError("run: transition matrix size does not match edge count");

    const auto shard_sizes = shard_sizes_of(plan);
    const auto alpha = vehicle_weights(shard_sizes);
    const long total_edge_epochs = static_cast<long>(config.cloud_epochs) * config.tau_e;

    if (config.scenario == Scenario::Trace) {
        if (config.trace.num_vehicles != m_count)
            throw TraceError("run: trace covers " + std::to_string(config.trace.num_vehicles) +
                             " vehicles, config has " + std::to_string(m_count));
        if (config.trace.num_edges > n_count)
            throw TraceError("run: trace references more edges than configured");
        if (config.trace.max_step < total_edge_epochs)
            throw TraceError("run: trace ends at step " + std::to_string(config.trace.max_step) +
                             ", run needs " + std::to_string(total_edge_epochs));
    }

    // Initial placement: the plan's ownership map when present, otherwise
    // contiguous blocks of M/N vehicles per edge.
    MobilityState state;
    if (config.scenario == Scenario::Trace) {
        state = assignments_at(config.trace, 0);
    } else if (!plan.edge_assignment.empty()) {
        state.assignment = plan.edge_assignment;
        for (int e : state.assignment)
            if (e < 0 || e >= n_count) throw ConfigError("run: plan edge assignment out of range");
    } else {
        state.assignment.resize(m_count);
        for (int m = 0; m < m_count; ++m)
            state.assignment[m] = static_cast<int>(static_cast<long>(m) * n_count / m_count);
    }

    // Models: cloud, edges, fleet all start from the same seeded init.
    ParamVector cloud_model = init_params(spec, config.seed);
    std::vector<ParamVector> edge_models(n_count, cloud_model);
    std::vector<ParamVector> fleet(m_count, cloud_model);

    // Virtual trajectories.
    ParamVector v = cloud_model;
    std::vector<int> full_indices;
    DataBatch full_batch; // cached union-of-shards batch for the exact gradient
    if (!quadratic) {
        for (const auto& shard : plan.shards)
            full_indices.insert(full_indices.end(), shard.begin(), shard.end());
        if (config.track_virtual) full_batch = make_batch(dataset, full_indices);
    }
    ParamVector w_star; // quadratic optimum: alpha-weighted mean target
    if (quadratic) {
        w_star.assign(spec.targets.front().size(), 0.0);
        for (int m = 0; m < m_count; ++m)
            for (std::size_t i = 0; i < w_star.size(); ++i)
                w_star[i] += alpha[m] * spec.targets[m][i];
    }

    // Per-shard class counts for the live probability-difference metric.
    std::vector<std::vector<long>> shard_class_counts;
    std::vector<double> global_dist;
    if (!quadratic) {
        shard_class_counts.assign(m_count, std::vector<long>(dataset.num_classes, 0));
        std::vector<long> global_counts(dataset.num_classes, 0);
        long total = 0;
        for (int m = 0; m < m_count; ++m)
            for (int i : plan.shards[m]) {
                ++shard_class_counts[m][dataset.labels[i]];
                ++global_counts[dataset.labels[i]];
                ++total;
            }
        global_dist.resize(dataset.num_classes);
        for (int c = 0; c < dataset.num_classes; ++c)
            global_dist[c] = static_cast<double>(global_counts[c]) / static_cast<double>(total);
    }

    auto avg_prob_difference = [&](const MobilityState& s) -> double {
        if (quadratic) return 0.0;
        double sum = 0.0;
        int counted = 0;
        std::vector<long> pool(dataset.num_classes);
        for (int n = 0; n < n_count; ++n) {
            std::fill(pool.begin(), pool.end(), 0L);
            long total = 0;
            for (int m = 0; m < m_count; ++m)
                if (s.assignment[m] == n) {
                    for (int c = 0; c < dataset.num_classes; ++c)
                        pool[c] += shard_class_counts[m][c];
                    total += static_cast<long>(shard_sizes[m]);
                }
            if (total == 0) continue; // empty edge has no pool distribution
            double l1 = 0.0;
            for (int c = 0; c < dataset.num_classes; ++c)
                l1 += std::abs(global_dist[c] - static_cast<double>(pool[c]) / total);
            sum += l1;
            ++counted;
        }
        return counted > 0 ? sum / counted : 0.0;
    };

    LocalUpdater updater(spec, dataset, plan, config.eta, config.batch_size, config.seed,
                         config.workers);

    RunResult result;
    result.membership_series.push_back(state);
    if (config.track_virtual && quadratic) result.v_dist_to_opt.push_back(cf_difference(v, w_star));

    FleetState fleet_state;
    fleet_state.mobility = state;

    double last_accuracy = 0.0;
    if (test_dataset && !quadratic)
        last_accuracy = evaluate_accuracy(spec, cloud_model, *test_dataset);

    long tau = 0;
    const long boundary = static_cast<long>(config.tau_l) * config.tau_e;
    long edge_epoch = 0; // global j

    for (int k = 1; k <= config.cloud_epochs; ++k) {
        for (int e = 1; e <= config.tau_e; ++e) {
            edge_distribute(edge_models, state, fleet);

            double round_loss_sum = 0.0;
            long round_loss_count = 0;
            for (int t = 1; t <= config.tau_l; ++t) {
                ++tau;
                round_loss_sum += updater.round(fleet);
                ++round_loss_count;

                if (config.track_virtual) {
                    ParamVector v_tilde;
                    if (quadratic) {
                        // Exact global gradient v - w* with the data-size weights.
                        v_tilde.resize(v.size());
                        for (std::size_t i = 0; i < v.size(); ++i)
                            v_tilde[i] = v[i] - config.eta * (v[i] - w_star[i]);
                    } else {
                        ParamVector grad;
                        loss_and_gradient(spec, v, full_batch, grad);
                        v_tilde = sgd_step(v, grad, config.eta);
                    }
                    if (tau % boundary == 0) {
                        ParamVector u = virtual_cloud(fleet, shard_sizes);
                        const double cf = cf_difference(u, v_tilde);
                        result.cf_at_boundaries.push_back(cf);
                        if (hooks.on_cf_measured) {
                            VirtualModels vm{u, v_tilde};
                            hooks.on_cf_measured(k, cf, vm);
                        }
                        if (quadratic && k < config.cloud_epochs)
                            result.v_dist_to_opt.push_back(cf_difference(v_tilde, w_star));
                        v = std::move(u); // resync
                    } else {
                        v = std::move(v_tilde);
                    }
                }
                if (hooks.on_local) {
                    fleet_state.params = fleet;
                    fleet_state.mobility = state;
                    fleet_state.tau = tau;
                    hooks.on_local(fleet_state);
                }
            }

            // One mobility step per edge epoch, then aggregate over the
            // refreshed covering sets: movers upload to their new edge.
            ++edge_epoch;
            if (config.scenario == Scenario::Markov) {
                state = step_assignments(state, config.transition, config.seed,
                                         static_cast<std::uint64_t>(edge_epoch));
            } else if (config.scenario == Scenario::Trace) {
                state = assignments_at(config.trace, static_cast<int>(edge_epoch));
            }
            result.membership_series.push_back(state);

            edge_models = edge_aggregate(fleet, state, shard_sizes, n_count, edge_models,
                                         config.empty_edge);

            if (hooks.on_edge_agg) {
                fleet_state.params = fleet;
                fleet_state.mobility = state;
                fleet_state.tau = tau;
                hooks.on_edge_agg(static_cast<int>(edge_epoch), fleet_state, edge_models);
            }

            RoundRecord rec;
            rec.tau = tau;
            rec.cloud_epoch = k;
            rec.edge_round = e;
            rec.event = EventKind::EdgeAgg;
            rec.test_accuracy = last_accuracy;
            rec.train_loss = round_loss_count ? round_loss_sum / round_loss_count : 0.0;
            rec.cf_difference =
                result.cf_at_boundaries.empty() ? 0.0 : result.cf_at_boundaries.back();
            rec.avg_prob_difference = avg_prob_difference(state);
            rec.theta = edge_weights(state, shard_sizes, n_count);
            result.records.push_back(std::move(rec));
        }

        const auto theta = edge_weights(state, shard_sizes, n_count);
        cloud_model = cloud_aggregate(edge_models, theta);
        for (auto& em : edge_models) em = cloud_model;

        if (test_dataset && !quadratic)
            last_accuracy = evaluate_accuracy(spec, cloud_model, *test_dataset);

        if (hooks.on_cloud_agg) {
            VirtualModels vm{virtual_cloud(fleet, shard_sizes), v};
            hooks.on_cloud_agg(k, cloud_model, vm);
        }

        RoundRecord rec;
        rec.tau = tau;
        rec.cloud_epoch = k;
        rec.edge_round = config.tau_e;
        rec.event = EventKind::CloudAgg;
        rec.test_accuracy = last_accuracy;
        rec.train_loss = result.records.empty() ? 0.0 : result.records.back().train_loss;
        rec.cf_difference =
            result.cf_at_boundaries.empty() ? 0.0 : result.cf_at_boundaries.back();
        rec.avg_prob_difference = avg_prob_difference(state);
        rec.theta = theta;
        result.records.push_back(std::move(rec));
    }

    result.final_cloud_model = std::move(cloud_model);
    return result;
}

} // namespace mobhfl
