#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mobhfl/bounds.hpp"
#include "mobhfl/dataset.hpp"
#include "mobhfl/engine.hpp"
#include "mobhfl/experiment.hpp"
#include "mobhfl/mobility.hpp"
#include "mobhfl/model.hpp"

namespace py = pybind11;
using namespace mobhfl;

PYBIND11_MODULE(_mobhfl, m) {
    m.doc() = "Hierarchical federated learning simulator with vehicle mobility";

    // --- data ---------------------------------------------------------
    py::class_<LabeledDataset>(m, "LabeledDataset")
        .def(py::init<>())
        .def_readwrite("inputs", &LabeledDataset::inputs)
        .def_readwrite("labels", &LabeledDataset::labels)
        .def_readwrite("num_samples", &LabeledDataset::num_samples)
        .def_readwrite("input_dim", &LabeledDataset::input_dim)
        .def_readwrite("num_classes", &LabeledDataset::num_classes);

    py::class_<PartitionPlan>(m, "PartitionPlan")
        .def_readonly("shards", &PartitionPlan::shards)
        .def_readonly("edge_assignment", &PartitionPlan::edge_assignment);

    py::class_<LabelDistribution>(m, "LabelDistribution")
        .def(py::init([](std::vector<double> probs) {
            LabelDistribution d;
            d.probs = std::move(probs);
            return d;
        }))
        .def_readonly("probs", &LabelDistribution::probs);

    m.def("generate_synthetic", &generate_synthetic, py::arg("num_classes"),
          py::arg("input_dim"), py::arg("per_class"), py::arg("separation"), py::arg("seed"));
    m.def("partition_iid", &partition_iid, py::arg("dataset"), py::arg("num_vehicles"),
          py::arg("seed"));
    m.def("partition_local_niid", &partition_local_niid, py::arg("dataset"),
          py::arg("num_vehicles"), py::arg("classes_per_vehicle"), py::arg("seed"));
    m.def("partition_edge_niid", &partition_edge_niid, py::arg("dataset"), py::arg("num_edges"),
          py::arg("num_vehicles"), py::arg("classes_per_edge"), py::arg("seed"));
    m.def(
        "label_distribution",
        [](const LabeledDataset& ds, const std::vector<int>& idx) {
            return label_distribution(ds, idx);
        },
        py::arg("dataset"), py::arg("indices"));
    m.def("probability_difference", &probability_difference, py::arg("p"), py::arg("q"));

    // --- models ---------------------------------------------------------
    py::class_<ModelSpec>(m, "ModelSpec")
        .def_static("softmax_linear", &ModelSpec::softmax_linear, py::arg("input_dim"),
                    py::arg("num_classes"))
        .def_static("mlp", &ModelSpec::mlp, py::arg("input_dim"), py::arg("num_classes"),
                    py::arg("hidden_dims"))
        .def_static("mean_quadratic", &ModelSpec::mean_quadratic, py::arg("targets"))
        .def("param_dim", &ModelSpec::param_dim);

    py::class_<DataBatch>(m, "DataBatch")
        .def(py::init<>())
        .def_readwrite("inputs", &DataBatch::inputs)
        .def_readwrite("labels", &DataBatch::labels)
        .def_readwrite("batch_size", &DataBatch::batch_size)
        .def_readwrite("input_dim", &DataBatch::input_dim)
        .def_readwrite("shard_index", &DataBatch::shard_index);

    m.def("forward_loss", &forward_loss);
    m.def("gradient", &gradient);
    m.def("sgd_step", &sgd_step, py::arg("params"), py::arg("grad"), py::arg("eta"));
    m.def("evaluate_accuracy", &evaluate_accuracy);
    m.def("finite_diff_check", &finite_diff_check, py::arg("spec"), py::arg("params"),
          py::arg("batch"), py::arg("step"));
    m.def("init_params", &init_params, py::arg("spec"), py::arg("seed"));

    // --- mobility ---------------------------------------------------------
    py::class_<RingParams>(m, "RingParams")
        .def(py::init<int, double>(), py::arg("n_edges"), py::arg("sojourn_prob"))
        .def_readwrite("n_edges", &RingParams::n_edges)
        .def_readwrite("sojourn_prob", &RingParams::sojourn_prob);

    py::class_<TransitionMatrix>(m, "TransitionMatrix")
        .def_static("identity", &TransitionMatrix::identity)
        .def_static("from_rows", &TransitionMatrix::from_rows, py::arg("n"), py::arg("entries"))
        .def_readonly("n", &TransitionMatrix::n)
        .def_readonly("entries", &TransitionMatrix::entries)
        .def("at", py::overload_cast<int, int>(&TransitionMatrix::at, py::const_));

    py::class_<MobilityState>(m, "MobilityState")
        .def(py::init([](std::vector<int> assignment) {
            return MobilityState{std::move(assignment)};
        }))
        .def_readonly("assignment", &MobilityState::assignment);

    m.def("ring_transition", &ring_transition);
    m.def("eigenvalues_ring", &eigenvalues_ring);
    m.def("lambda_star", &lambda_star);
    m.def("step_assignments", &step_assignments, py::arg("state"), py::arg("q"), py::arg("seed"),
          py::arg("step"));
    m.def(
        "label_evolution",
        [](const std::vector<LabelDistribution>& dists, const TransitionMatrix& q,
           std::vector<double> theta) {
            auto next = label_evolution(dists, q, theta);
            return py::make_tuple(next, theta);
        },
        py::arg("dists"), py::arg("q"), py::arg("theta"),
        "Returns (next_distributions, next_theta).");
    m.def("sojourn_from_speed", &sojourn_from_speed, py::arg("speed_mps"), py::arg("side_m"),
          py::arg("interval_s"), py::arg("slope") = 1.0, py::arg("intercept") = 1.0);

    // --- bounds ---------------------------------------------------------
    py::class_<SmoothnessParams>(m, "SmoothnessParams")
        .def(py::init<>())
        .def_readwrite("beta", &SmoothnessParams::beta)
        .def_readwrite("rho", &SmoothnessParams::rho);

    py::class_<HeterogeneityEstimates>(m, "HeterogeneityEstimates")
        .def(py::init<>())
        .def_readwrite("delta_m", &HeterogeneityEstimates::delta_m)
        .def_readwrite("delta", &HeterogeneityEstimates::delta)
        .def_readwrite("Delta_series", &HeterogeneityEstimates::Delta_series)
        .def_readwrite("G", &HeterogeneityEstimates::G)
        .def_readwrite("L", &HeterogeneityEstimates::L)
        .def_readwrite("lambda_star", &HeterogeneityEstimates::lambda);

    py::class_<BoundInputs>(m, "BoundInputs")
        .def(py::init<>())
        .def_readwrite("eta", &BoundInputs::eta)
        .def_readwrite("tau_l", &BoundInputs::tau_l)
        .def_readwrite("tau_e", &BoundInputs::tau_e)
        .def_readwrite("cloud_epochs", &BoundInputs::cloud_epochs)
        .def_readwrite("n_edges", &BoundInputs::n_edges)
        .def_readwrite("smoothness", &BoundInputs::smoothness)
        .def_readwrite("heterogeneity", &BoundInputs::heterogeneity)
        .def_readwrite("epsilon", &BoundInputs::epsilon)
        .def_readwrite("phi", &BoundInputs::phi);

    py::enum_<DistributionCase>(m, "DistributionCase")
        .value("IID", DistributionCase::Iid)
        .value("EDGE_IID", DistributionCase::EdgeIid)
        .value("EDGE_NIID", DistributionCase::EdgeNiid);

    m.def("r_term", &r_term, py::arg("tau"), py::arg("eta"), py::arg("delta"), py::arg("beta"));
    m.def("h_func", &h_func, py::arg("t"), py::arg("tau_l"), py::arg("eta"), py::arg("beta"));
    m.def("H_func", &H_func, py::arg("tau_l"), py::arg("tau_e"), py::arg("eta"), py::arg("beta"));
    m.def("u_static", &u_static, py::arg("inputs"), py::arg("Delta"));
    m.def(
        "u_mobile",
        [](const BoundInputs& in, int k, const std::vector<double>& series) {
            return u_mobile(in, k, series);
        },
        py::arg("inputs"), py::arg("k"), py::arg("Delta_series"));
    m.def("mobility_factor", &mobility_factor, py::arg("u_nomob"), py::arg("u_mob"),
          py::arg("tau_l"), py::arg("tau_e"));
    m.def(
        "mobility_factor_expanded",
        [](const BoundInputs& in, int k, const std::vector<double>& series) {
            return mobility_factor_expanded(in, k, series);
        },
        py::arg("inputs"), py::arg("k"), py::arg("Delta_series"));
    m.def("mobility_factor_closed", &mobility_factor_closed, py::arg("case"), py::arg("inputs"),
          py::arg("k"));
    m.def("mobility_factor_ring", &mobility_factor_ring, py::arg("inputs"), py::arg("k"),
          py::arg("ring"), py::arg("literal_variant") = false);
    m.def("delta_bound", &delta_bound, py::arg("j"), py::arg("G"), py::arg("n_edges"),
          py::arg("L"), py::arg("lambda_star"));

    // --- experiments ---------------------------------------------------------
    py::enum_<PartitionCase>(m, "PartitionCase")
        .value("IID", PartitionCase::Iid)
        .value("LOCAL_NIID", PartitionCase::LocalNiid)
        .value("EDGE_NIID", PartitionCase::EdgeNiid);

    py::enum_<MobilitySource>(m, "MobilitySource")
        .value("STATIC", MobilitySource::Static)
        .value("RING", MobilitySource::Ring)
        .value("SPEED", MobilitySource::Speed)
        .value("MATRIX_FILE", MobilitySource::MatrixFile)
        .value("TRACE_FILE", MobilitySource::TraceFile);

    py::enum_<EventKind>(m, "EventKind")
        .value("LOCAL", EventKind::Local)
        .value("EDGE_AGG", EventKind::EdgeAgg)
        .value("CLOUD_AGG", EventKind::CloudAgg);

    py::class_<RoundRecord>(m, "RoundRecord")
        .def_readonly("tau", &RoundRecord::tau)
        .def_readonly("cloud_epoch", &RoundRecord::cloud_epoch)
        .def_readonly("edge_round", &RoundRecord::edge_round)
        .def_readonly("event", &RoundRecord::event)
        .def_readonly("test_accuracy", &RoundRecord::test_accuracy)
        .def_readonly("train_loss", &RoundRecord::train_loss)
        .def_readonly("cf_difference", &RoundRecord::cf_difference)
        .def_readonly("avg_prob_difference", &RoundRecord::avg_prob_difference)
        .def_readonly("theta", &RoundRecord::theta);

    py::class_<ExperimentConfig>(m, "ExperimentConfig")
        .def(py::init<>())
        .def_readwrite("task", &ExperimentConfig::task)
        .def_readwrite("classes", &ExperimentConfig::classes)
        .def_readwrite("input_dim", &ExperimentConfig::input_dim)
        .def_readwrite("per_class", &ExperimentConfig::per_class)
        .def_readwrite("test_per_class", &ExperimentConfig::test_per_class)
        .def_readwrite("separation", &ExperimentConfig::separation)
        .def_readwrite("hidden_dims", &ExperimentConfig::hidden_dims)
        .def_readwrite("quad_dim", &ExperimentConfig::quad_dim)
        .def_readwrite("partition", &ExperimentConfig::partition)
        .def_readwrite("skew_classes", &ExperimentConfig::skew_classes)
        .def_readwrite("vehicles", &ExperimentConfig::vehicles)
        .def_readwrite("edges", &ExperimentConfig::edges)
        .def_readwrite("tau_l", &ExperimentConfig::tau_l)
        .def_readwrite("tau_e", &ExperimentConfig::tau_e)
        .def_readwrite("cloud_epochs", &ExperimentConfig::cloud_epochs)
        .def_readwrite("eta", &ExperimentConfig::eta)
        .def_readwrite("batch_size", &ExperimentConfig::batch_size)
        .def_readwrite("workers", &ExperimentConfig::workers)
        .def_readwrite("mobility", &ExperimentConfig::mobility)
        .def_readwrite("p_s", &ExperimentConfig::p_s)
        .def_readwrite("speed_mps", &ExperimentConfig::speed_mps)
        .def_readwrite("track_bounds", &ExperimentConfig::track_bounds)
        .def_readwrite("seeds", &ExperimentConfig::seeds)
        .def_readwrite("output_dir", &ExperimentConfig::output_dir)
        .def("resolved_p_s", &ExperimentConfig::resolved_p_s);

    py::class_<SeedOutcome>(m, "SeedOutcome")
        .def_readonly("seed", &SeedOutcome::seed)
        .def_readonly("final_accuracy", &SeedOutcome::final_accuracy)
        .def_readonly("final_train_loss", &SeedOutcome::final_train_loss)
        .def_readonly("records", &SeedOutcome::records)
        .def_readonly("ok", &SeedOutcome::ok);

    m.def("parse_config", &parse_config, py::arg("path"));
    m.def("parse_config_text", &parse_config_text, py::arg("text"),
          py::arg("origin") = "<string>");
    m.def("resolved_config_text", &resolved_config_text);
    m.def("run_single", &run_single, py::arg("config"), py::arg("seed"),
          py::call_guard<py::gil_scoped_release>());
    m.def(
        "run_experiment",
        [](const ExperimentConfig& cfg) {
            py::gil_scoped_release release;
            auto result = run_experiment(cfg);
            return result.exit_code;
        },
        py::arg("config"), "Runs all seeds, writes outputs, returns the exit code.");
    m.def(
        "epochs_to_accuracy",
        [](const std::vector<RoundRecord>& rows, const std::vector<double>& targets) {
            return epochs_to_accuracy(rows, targets);
        },
        py::arg("rows"), py::arg("targets"));
}
