#pragma once

#include <cstdint>
#include <vector>

#include "mobhfl/dataset.hpp"

namespace mobhfl {

/// Flat model parameters. All model kinds train on the same representation
/// so vehicles, edges, the cloud and the virtual trajectories can be mixed
/// freely.
using ParamVector = std::vector<double>;

enum class ModelKind {
    SoftmaxLinear, // linear logits + softmax cross-entropy
    Mlp,           // tanh hidden layers, softmax cross-entropy output
    MeanQuadratic, // f_m(w) = 0.5 * ||w - target_m||^2, analytic test task
};

/// Task description. The parameter dimension follows from the fields
/// alone; see param_dim().
struct ModelSpec {
    ModelKind kind = ModelKind::SoftmaxLinear;
    int input_dim = 0;
    int num_classes = 0;              // >= 2 for classifier kinds
    std::vector<int> hidden_dims;     // Mlp only; one or two entries
    std::vector<ParamVector> targets; // MeanQuadratic only; one per shard

    int param_dim() const;

    static ModelSpec softmax_linear(int input_dim, int num_classes);
    static ModelSpec mlp(int input_dim, int num_classes, std::vector<int> hidden_dims);
    static ModelSpec mean_quadratic(std::vector<ParamVector> targets);
};

/// A minibatch view. `shard_index` selects the quadratic target for the
/// MeanQuadratic kind and is ignored by classifier kinds.
struct DataBatch {
    std::vector<double> inputs; // batch_size x input_dim, row-major
    std::vector<int> labels;
    int batch_size = 0;
    int input_dim = 0;
    int shard_index = 0;
};

/// Gather dataset rows into a batch.
DataBatch make_batch(const LabeledDataset& dataset, std::span<const int> indices,
                     int shard_index = 0);

/// Mean sample loss over the batch: cross-entropy for classifier kinds,
/// 0.5*||w - b||^2 for MeanQuadratic.
double forward_loss(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch);

/// Exact gradient of forward_loss with respect to params.
ParamVector gradient(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch);

/// Single fused pass; the returned value is the loss, `grad_out` receives
/// the gradient. Used by the training loop to avoid a second forward pass.
double loss_and_gradient(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch,
                         ParamVector& grad_out);

/// One gradient-descent update: params - eta * grad. eta must be positive.
ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double eta);

/// Fraction of argmax-correct predictions; ties resolve to the lowest class
/// index. Classifier kinds only.
double evaluate_accuracy(const ModelSpec& spec, const ParamVector& params,
                         const LabeledDataset& dataset);

/// Max over coordinates of |analytic - central difference| / (|analytic| + step).
double finite_diff_check(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch,
                         double step);

/// Deterministic seeded initialization, uniform in [-0.05, 0.05].
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

} // namespace mobhfl
