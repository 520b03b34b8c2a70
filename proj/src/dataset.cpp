#include "mobhfl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "mobhfl/errors.hpp"
#include "mobhfl/rng.hpp"

namespace mobhfl {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_distribution(const LabelDistribution& d, const char* who) {
    double sum = 0.0;
    for (double p : d.probs) {
        if (p < 0.0) throw ContractError(std::string(who) + ": negative probability entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw ContractError(std::string(who) + ": probabilities sum to " + std::to_string(sum));
}

} // namespace

LabeledDataset generate_synthetic(int num_classes, int input_dim, int per_class,
                                  double separation, std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
    if (input_dim < 2) throw ConfigError("generate_synthetic: need input_dim >= 2");
    if (per_class < 1) throw ConfigError("generate_synthetic: need per_class >= 1");
    if (!(separation > 0.0)) throw ConfigError("generate_synthetic: separation must be positive");

    // Class means sit on a circle in the first two feature dimensions with
    // adjacent means exactly `separation` apart; all other pairs are farther.
    const double radius = separation / (2.0 * std::sin(kPi / num_classes));

    LabeledDataset ds;
    ds.num_classes = num_classes;
    ds.input_dim = input_dim;
    ds.num_samples = num_classes * per_class;
    ds.inputs.resize(static_cast<std::size_t>(ds.num_samples) * input_dim);
    ds.labels.resize(ds.num_samples);

    std::size_t at = 0;
    int row = 0;
    for (int c = 0; c < num_classes; ++c) {
        const double angle = 2.0 * kPi * c / num_classes;
        const double mx = radius * std::cos(angle);
        const double my = radius * std::sin(angle);
        StreamRng stream(seed, static_cast<std::uint64_t>(c), 0x5a5a);
        for (int s = 0; s < per_class; ++s, ++row) {
            ds.labels[row] = c;
            for (int f = 0; f < input_dim; ++f, ++at) {
                double mean = f == 0 ? mx : (f == 1 ? my : 0.0);
                ds.inputs[at] = mean + stream.next_gaussian();
            }
        }
    }
    return ds;
}

PartitionPlan partition_iid(const LabeledDataset& dataset, int num_vehicles, std::uint64_t seed) {
    const int s = dataset.num_samples;
    if (num_vehicles < 1) throw ConfigError("partition_iid: need at least one vehicle");
    if (num_vehicles > s)
        throw ConfigError("partition_iid: more vehicles (" + std::to_string(num_vehicles) +
                          ") than samples (" + std::to_string(s) + ")");

    std::vector<int> order(s);
    std::iota(order.begin(), order.end(), 0);
    StreamRng stream(seed, 0x11d);
    stream.shuffle(order);

    PartitionPlan plan;
    plan.shards.resize(num_vehicles);
    const int base = s / num_vehicles;
    const int extra = s % num_vehicles; // first `extra` shards take one more
    int pos = 0;
    for (int m = 0; m < num_vehicles; ++m) {
        int size = base + (m < extra ? 1 : 0);
        plan.shards[m].assign(order.begin() + pos, order.begin() + pos + size);
        pos += size;
    }
    plan.edge_assignment.clear();
    return plan;
}

PartitionPlan partition_local_niid(const LabeledDataset& dataset, int num_vehicles,
                                   int classes_per_vehicle, std::uint64_t seed) {
    const int c = dataset.num_classes;
    const int m = num_vehicles;
    const int l = classes_per_vehicle;
    if (m < 1 || l < 1) throw ConfigError("partition_local_niid: need vehicles >= 1 and l >= 1");
    if (l > c) throw ConfigError("partition_local_niid: l exceeds the class count");
    if ((static_cast<long>(m) * l) % c != 0)
        throw ConfigError("partition_local_niid: M*l must be divisible by C (M*l=" +
                          std::to_string(static_cast<long>(m) * l) + ", C=" + std::to_string(c) +
                          ")");

    const int chunks_per_class = m * l / c;

    // Per-class index pools, shuffled so different seeds yield different chunks.
    std::vector<std::vector<int>> by_class(c);
    for (int i = 0; i < dataset.num_samples; ++i) by_class[dataset.labels[i]].push_back(i);
    for (int cls = 0; cls < c; ++cls) {
        if (by_class[cls].empty())
            throw ConfigError("partition_local_niid: class " + std::to_string(cls) +
                              " has no samples");
        StreamRng stream(seed, 0x10c, static_cast<std::uint64_t>(cls));
        stream.shuffle(by_class[cls]);
    }

    // Column-major dealing of the label-sorted chunk sequence: slot j of
    // vehicle m takes chunk (j*M + m). Because M >= chunks_per_class this
    // yields exactly l distinct classes per vehicle.
    std::vector<int> next_chunk(c, 0);
    PartitionPlan plan;
    plan.shards.resize(m);
    for (int slot = 0; slot < l; ++slot) {
        for (int veh = 0; veh < m; ++veh) {
            const long flat = static_cast<long>(slot) * m + veh;
            const int cls = static_cast<int>(flat / chunks_per_class);
            const int chunk = next_chunk[cls]++;
            const auto& pool = by_class[cls];
            const std::size_t total = pool.size();
            const std::size_t lo = chunk * total / chunks_per_class;
            const std::size_t hi = (chunk + 1) * total / chunks_per_class;
            plan.shards[veh].insert(plan.shards[veh].end(), pool.begin() + lo, pool.begin() + hi);
        }
    }
    plan.edge_assignment.clear();
    return plan;
}

PartitionPlan partition_edge_niid(const LabeledDataset& dataset, int num_edges, int num_vehicles,
                                  int classes_per_edge, std::uint64_t seed) {
    const int c = dataset.num_classes;
    const int n = num_edges;
    const int m = num_vehicles;
    const int l = classes_per_edge;
    if (n < 1 || m < 1 || l < 1)
        throw ConfigError("partition_edge_niid: need edges, vehicles and l all >= 1");
    if (m % n != 0)
        throw ConfigError("partition_edge_niid: M must be divisible by N (M=" + std::to_string(m) +
                          ", N=" + std::to_string(n) + ")");
    const int used = n * l;
    if (used > c)
        throw ConfigError("partition_edge_niid: N*l=" + std::to_string(used) +
                          " exceeds the class count C=" + std::to_string(c));
    if (c % used != 0)
        throw ConfigError("partition_edge_niid: C must be divisible by N*l (C=" +
                          std::to_string(c) + ", N*l=" + std::to_string(used) + ")");
    if (used < c)
        std::cerr << "warning: partition_edge_niid leaves " << (c - used)
                  << " of " << c << " classes unassigned\n";

    // Sorted round-robin: class i of the first N*l classes goes to edge i mod N.
    std::vector<std::vector<int>> edge_pool(n);
    for (int cls = 0; cls < used; ++cls) {
        const int edge = cls % n;
        for (int i = 0; i < dataset.num_samples; ++i)
            if (dataset.labels[i] == cls) edge_pool[edge].push_back(i);
    }

    const int per_edge = m / n;
    PartitionPlan plan;
    plan.shards.resize(m);
    plan.edge_assignment.resize(m);
    for (int edge = 0; edge < n; ++edge) {
        auto& pool = edge_pool[edge];
        if (pool.empty())
            throw ConfigError("partition_edge_niid: edge " + std::to_string(edge) +
                              " received no samples");
        StreamRng stream(seed, 0xed6e, static_cast<std::uint64_t>(edge));
        stream.shuffle(pool);
        const std::size_t total = pool.size();
        for (int v = 0; v < per_edge; ++v) {
            const int vehicle = edge * per_edge + v;
            const std::size_t lo = static_cast<std::size_t>(v) * total / per_edge;
            const std::size_t hi = static_cast<std::size_t>(v + 1) * total / per_edge;
            plan.shards[vehicle].assign(pool.begin() + lo, pool.begin() + hi);
            plan.edge_assignment[vehicle] = edge;
        }
    }
    return plan;
}

LabelDistribution label_distribution(const LabeledDataset& dataset, std::span<const int> indices) {
    if (indices.empty()) throw ContractError("label_distribution: empty index set");
    LabelDistribution d;
    d.probs.assign(dataset.num_classes, 0.0);
    for (int i : indices) d.probs[dataset.labels[i]] += 1.0;
    for (double& p : d.probs) p /= static_cast<double>(indices.size());
    check_distribution(d, "label_distribution");
    return d;
}

LabelDistribution label_distribution(const LabeledDataset& dataset) {
    if (dataset.num_samples == 0) throw ContractError("label_distribution: empty dataset");
    LabelDistribution d;
    d.probs.assign(dataset.num_classes, 0.0);
    for (int label : dataset.labels) d.probs[label] += 1.0;
    for (double& p : d.probs) p /= static_cast<double>(dataset.num_samples);
    return d;
}

double probability_difference(const LabelDistribution& p, const LabelDistribution& q) {
    if (p.probs.size() != q.probs.size())
        throw ContractError("probability_difference: distributions over different class counts");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.probs.size(); ++i) sum += std::abs(p.probs[i] - q.probs[i]);
    return sum;
}

void save_dataset_csv(const LabeledDataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("save_dataset_csv: cannot open " + path);
    for (int f = 0; f < dataset.input_dim; ++f) out << 'f' << f << ',';
    out << "label\n";
    char buf[32];
    for (int i = 0; i < dataset.num_samples; ++i) {
        auto row = dataset.row(i);
        for (int f = 0; f < dataset.input_dim; ++f) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[f]);
            out << buf << ',';
        }
        out << dataset.labels[i] << '\n';
    }
}

LabeledDataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("load_dataset_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("load_dataset_csv: empty file " + path);

    int input_dim = 0;
    {
        std::stringstream header(line);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(header, col, ',')) cols.push_back(col);
        if (cols.empty() || cols.back() != "label")
            throw ConfigError("load_dataset_csv: last header column must be 'label'");
        input_dim = static_cast<int>(cols.size()) - 1;
        if (input_dim < 1) throw ConfigError("load_dataset_csv: no feature columns");
    }

    LabeledDataset ds;
    ds.input_dim = input_dim;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        for (int f = 0; f < input_dim; ++f) {
            if (!std::getline(ss, field, ','))
                throw ConfigError("load_dataset_csv: line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(input_dim + 1) + " fields");
            try {
                ds.inputs.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw ConfigError("load_dataset_csv: line " + std::to_string(line_no) +
                                  ": bad number '" + field + "'");
            }
        }
        if (!std::getline(ss, field, ','))
            throw ConfigError("load_dataset_csv: line " + std::to_string(line_no) +
                              ": missing label");
        try {
            ds.labels.push_back(std::stoi(field));
        } catch (const std::exception&) {
            throw ConfigError("load_dataset_csv: line " + std::to_string(line_no) +
                              ": bad label '" + field + "'");
        }
        if (ds.labels.back() < 0)
            throw ConfigError("load_dataset_csv: line " + std::to_string(line_no) +
                              ": negative label");
        ++ds.num_samples;
    }
    if (ds.num_samples == 0) throw ConfigError("load_dataset_csv: no data rows in " + path);
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
    return ds;
}

} // namespace mobhfl
