#include "mobhfl/mobility.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mobhfl/errors.hpp"

namespace mobhfl {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRowSumTol = 1e-12;

void check_rows(const TransitionMatrix& q, const char* who) {
    for (int i = 0; i < q.n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < q.n; ++j) {
            double e = q.at(i, j);
            if (e < 0.0)
                throw ContractError(std::string(who) + ": negative entry at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
            sum += e;
        }
        if (std::abs(sum - 1.0) > kRowSumTol)
            throw ContractError(std::string(who) + ": row " + std::to_string(i) + " sums to " +
                                std::to_string(sum));
    }
}

// Strong connectivity of the support graph by forward+backward reachability.
bool irreducible(const TransitionMatrix& q) {
    auto reach = [&](bool forward) {
        std::vector<bool> seen(q.n, false);
        std::vector<int> stack = {0};
        seen[0] = true;
        while (!stack.empty()) {
            int u = stack.back();
            stack.pop_back();
            for (int v = 0; v < q.n; ++v) {
                double e = forward ? q.at(u, v) : q.at(v, u);
                if (e > 0.0 && !seen[v]) {
                    seen[v] = true;
                    stack.push_back(v);
                }
            }
        }
        return seen;
    };
    auto fwd = reach(true);
    auto bwd = reach(false);
    for (int i = 0; i < q.n; ++i)
        if (!fwd[i] || !bwd[i]) return false;
    return true;
}

} // namespace

TransitionMatrix TransitionMatrix::identity(int n) {
    TransitionMatrix q;
    q.n = n;
    q.entries.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) q.at(i, i) = 1.0;
    return q;
}

TransitionMatrix TransitionMatrix::from_rows(int n, std::vector<double> entries) {
    if (n < 1 || entries.size() != static_cast<std::size_t>(n) * n)
        throw ContractError("TransitionMatrix: entry count does not match n*n");
    TransitionMatrix q;
    q.n = n;
    q.entries = std::move(entries);
    check_rows(q, "TransitionMatrix");
    return q;
}

TransitionMatrix ring_transition(const RingParams& params) {
    const int n = params.n_edges;
    const double p = params.sojourn_prob;
    if (n < 2) throw ConfigError("ring_transition: need at least 2 edges");
    if (p < 0.0 || p > 1.0)
        throw ConfigError("ring_transition: sojourn probability outside [0, 1]");

    TransitionMatrix q;
    q.n = n;
    q.entries.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        q.at(i, i) = p;
        // For n == 2 both ring neighbours are the same edge; the two
        // half-probabilities merge.
        q.at(i, (i + 1) % n) += (1.0 - p) / 2.0;
        q.at(i, (i + n - 1) % n) += (1.0 - p) / 2.0;
    }
    return q;
}

std::vector<double> eigenvalues_ring(const RingParams& params) {
    const int n = params.n_edges;
    if (n < 2) throw ConfigError("eigenvalues_ring: need at least 2 edges");
    std::vector<double> values(n);
    for (int k = 0; k < n; ++k)
        values[k] = params.sojourn_prob +
                    (1.0 - params.sojourn_prob) * std::cos(2.0 * kPi * k / n);
    return values;
}

double lambda_star(const TransitionMatrix& q) {
    check_rows(q, "lambda_star");
    if (q.n < 2) throw ContractError("lambda_star: need at least a 2-state chain");

    Eigen::MatrixXd m(q.n, q.n);
    for (int i = 0; i < q.n; ++i)
        for (int j = 0; j < q.n; ++j) m(i, j) = q.at(i, j);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(m, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success)
        throw NumericError("lambda_star: eigenvalue computation failed");

    std::vector<std::complex<double>> eigs(q.n);
    for (int i = 0; i < q.n; ++i) eigs[i] = solver.eigenvalues()(i);

    // Drop exactly one copy of the Perron root (the eigenvalue closest to 1).
    std::size_t perron = 0;
    double best = std::abs(eigs[0] - std::complex<double>(1.0, 0.0));
    for (std::size_t i = 1; i < eigs.size(); ++i) {
        double d = std::abs(eigs[i] - std::complex<double>(1.0, 0.0));
        if (d < best) {
            best = d;
            perron = i;
        }
    }
    eigs.erase(eigs.begin() + static_cast<std::ptrdiff_t>(perron));

    double runner_up = 0.0;
    for (const auto& e : eigs) runner_up = std::max(runner_up, std::abs(e));

    if (runner_up >= 1.0 - 1e-9)
        throw NonMixingError("lambda_star: runner-up eigenvalue modulus " +
                             std::to_string(runner_up) + " does not mix");
    if (!irreducible(q)) throw StructureError("lambda_star: transition matrix is reducible");
    return runner_up;
}

MobilityState step_assignments(const MobilityState& state, const TransitionMatrix& q,
                               std::uint64_t seed, std::uint64_t step) {
    check_rows(q, "step_assignments");
    MobilityState next;
    next.assignment.resize(state.assignment.size());
    for (std::size_t m = 0; m < state.assignment.size(); ++m) {
        const int cur = state.assignment[m];
        if (cur < 0 || cur >= q.n)
            throw ContractError("step_assignments: vehicle " + std::to_string(m) +
                                " assigned to edge " + std::to_string(cur));
        StreamRng stream(seed, static_cast<std::uint64_t>(m) | (0x6d0ull << 40), step);
        const double u = stream.next_double();
        double cdf = 0.0;
        int dest = q.n - 1;
        for (int j = 0; j < q.n; ++j) {
            cdf += q.at(cur, j);
            if (u < cdf) {
                dest = j;
                break;
            }
        }
        next.assignment[m] = dest;
    }
    return next;
}

std::vector<LabelDistribution> label_evolution(const std::vector<LabelDistribution>& dists,
                                               const TransitionMatrix& q,
                                               std::vector<double>& theta) {
    const int n = q.n;
    if (static_cast<int>(dists.size()) != n || static_cast<int>(theta.size()) != n)
        throw ContractError("label_evolution: need one distribution and weight per edge");
    double tsum = 0.0;
    for (double t : theta) tsum += t;
    if (std::abs(tsum - 1.0) > 1e-9)
        throw ContractError("label_evolution: theta sums to " + std::to_string(tsum));
    const std::size_t classes = dists.front().probs.size();
    for (const auto& d : dists)
        if (d.probs.size() != classes)
            throw ContractError("label_evolution: distributions over different class counts");

    std::vector<double> theta_next(n, 0.0);
    for (int dst = 0; dst < n; ++dst)
        for (int src = 0; src < n; ++src) theta_next[dst] += theta[src] * q.at(src, dst);

    std::vector<LabelDistribution> next(n);
    for (int dst = 0; dst < n; ++dst) {
        if (theta_next[dst] <= 0.0)
            throw DegenerateEdgeError("label_evolution: edge " + std::to_string(dst) +
                                      " has zero weight after the step");
        next[dst].probs.assign(classes, 0.0);
        for (int src = 0; src < n; ++src) {
            const double w = theta[src] * q.at(src, dst) / theta_next[dst];
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < classes; ++c)
                next[dst].probs[c] += w * dists[src].probs[c];
        }
    }
    theta = std::move(theta_next);
    return next;
}

double sojourn_from_speed(double speed_mps, double side_m, double interval_s, double slope,
                          double intercept) {
    if (speed_mps < 0.0) throw ConfigError("sojourn_from_speed: negative speed");
    if (!(side_m > 0.0)) throw ConfigError("sojourn_from_speed: side length must be positive");
    if (!(interval_s > 0.0)) throw ConfigError("sojourn_from_speed: interval must be positive");
    double p = intercept - slope * speed_mps * interval_s / side_m;
    return std::clamp(p, 0.0, 1.0);
}

TrajectoryTrace load_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TraceError("load_trace: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "step,vehicle,edge")
        throw TraceError("load_trace: line 1: expected header 'step,vehicle,edge'");

    TrajectoryTrace trace;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        int values[3];
        for (int f = 0; f < 3; ++f) {
            if (!std::getline(ss, field, ','))
                throw TraceError("load_trace: line " + std::to_string(line_no) +
                                 ": expected 3 comma-separated integers");
            try {
                values[f] = std::stoi(field);
            } catch (const std::exception&) {
                throw TraceError("load_trace: line " + std::to_string(line_no) + ": bad integer '" +
                                 field + "'");
            }
        }
        if (std::getline(ss, field, ','))
            throw TraceError("load_trace: line " + std::to_string(line_no) + ": trailing fields");
        if (values[0] < 0 || values[1] < 0 || values[2] < 0)
            throw TraceError("load_trace: line " + std::to_string(line_no) + ": negative value");
        trace.rows.push_back({values[0], values[1], values[2]});
        trace.num_vehicles = std::max(trace.num_vehicles, values[1] + 1);
        trace.num_edges = std::max(trace.num_edges, values[2] + 1);
        trace.max_step = std::max(trace.max_step, values[0]);
    }
    if (trace.rows.empty()) throw TraceError("load_trace: no data rows in " + path);

    // Reject duplicate (step, vehicle) rows.
    std::map<std::pair<int, int>, int> seen;
    for (const auto& row : trace.rows) {
        auto key = std::make_pair(row.step, row.vehicle);
        if (seen.count(key))
            throw TraceError("load_trace: duplicate row for step " + std::to_string(row.step) +
                             ", vehicle " + std::to_string(row.vehicle));
        seen[key] = row.edge;
    }
    return trace;
}

MobilityState assignments_at(const TrajectoryTrace& trace, int step) {
    MobilityState state;
    state.assignment.assign(trace.num_vehicles, -1);
    for (const auto& row : trace.rows)
        if (row.step == step) state.assignment[row.vehicle] = row.edge;
    for (int m = 0; m < trace.num_vehicles; ++m)
        if (state.assignment[m] < 0)
            throw TraceError("assignments_at: step " + std::to_string(step) +
                             " is missing vehicle " + std::to_string(m));
    return state;
}

TransitionMatrix empirical_transition(const TrajectoryTrace& trace) {
    const int n = trace.num_edges;
    std::vector<double> counts(static_cast<std::size_t>(n) * n, 0.0);

    // (step, vehicle) -> edge lookup, then count consecutive-step moves.
    std::map<std::pair<int, int>, int> at;
    for (const auto& row : trace.rows) at[{row.step, row.vehicle}] = row.edge;
    for (const auto& [key, edge] : at) {
        auto next = at.find({key.first + 1, key.second});
        if (next != at.end()) counts[static_cast<std::size_t>(edge) * n + next->second] += 1.0;
    }

    TransitionMatrix q;
    q.n = n;
    q.entries.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < n; ++j) row_sum += counts[static_cast<std::size_t>(i) * n + j];
        if (row_sum == 0.0) {
            q.at(i, i) = 1.0; // never observed leaving: self-loop
        } else {
            for (int j = 0; j < n; ++j)
                q.at(i, j) = counts[static_cast<std::size_t>(i) * n + j] / row_sum;
        }
    }
    check_rows(q, "empirical_transition");
    return q;
}

void save_trace(const TrajectoryTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw TraceError("save_trace: cannot open " + path);
    out << "step,vehicle,edge\n";
    for (const auto& row : trace.rows)
        out << row.step << ',' << row.vehicle << ',' << row.edge << '\n';
}

} // namespace mobhfl
