#include "mobhfl/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mobhfl/errors.hpp"
#include "mobhfl/rng.hpp"

namespace mobhfl {

namespace {

void check_batch(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch) {
    if (static_cast<int>(params.size()) != spec.param_dim())
        throw ContractError("model: params have dim " + std::to_string(params.size()) +
                            ", spec requires " + std::to_string(spec.param_dim()));
    if (spec.kind == ModelKind::MeanQuadratic) {
        if (batch.shard_index < 0 || batch.shard_index >= static_cast<int>(spec.targets.size()))
            throw ContractError("model: shard index " + std::to_string(batch.shard_index) +
                                " outside the target list");
        return;
    }
    if (batch.batch_size < 1) throw ContractError("model: empty batch");
    if (batch.input_dim != spec.input_dim)
        throw ContractError("model: batch input_dim " + std::to_string(batch.input_dim) +
                            " does not match spec input_dim " + std::to_string(spec.input_dim));
    for (int label : batch.labels)
        if (label < 0 || label >= spec.num_classes)
            throw ContractError("model: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(spec.num_classes) + ")");
}

// Layer sizes of the packed parameter vector, input first, logits last.
std::vector<int> layer_sizes(const ModelSpec& spec) {
    std::vector<int> sizes;
    sizes.push_back(spec.input_dim);
    if (spec.kind == ModelKind::Mlp)
        for (int h : spec.hidden_dims) sizes.push_back(h);
    sizes.push_back(spec.num_classes);
    return sizes;
}

// -log softmax(logits)[label], with the gradient written into dlogits as
// softmax - onehot. Numerically stabilized by max subtraction.
double cross_entropy(std::vector<double>& logits, int label, std::vector<double>& dlogits) {
    const int c = static_cast<int>(logits.size());
    double mx = logits[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (int i = 0; i < c; ++i) {
        dlogits[i] = std::exp(logits[i] - mx);
        z += dlogits[i];
    }
    for (int i = 0; i < c; ++i) dlogits[i] /= z;
    double loss = -(logits[label] - mx - std::log(z));
    dlogits[label] -= 1.0;
    return loss;
}

double quadratic_loss_grad(const ModelSpec& spec, const ParamVector& params, int shard,
                           ParamVector* grad) {
    const ParamVector& target = spec.targets[shard];
    double loss = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double diff = params[i] - target[i];
        loss += 0.5 * diff * diff;
        if (grad) (*grad)[i] = diff;
    }
    return loss;
}

// Forward/backward pass over a stack of affine layers with tanh on all but
// the last, cross-entropy on the logits. Covers SoftmaxLinear (no hidden
// layers) and Mlp. Gradient accumulation order is fixed: sample by sample,
// layer by layer.
double network_loss_grad(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch,
                         ParamVector* grad) {
    const auto sizes = layer_sizes(spec);
    const int layers = static_cast<int>(sizes.size()) - 1;

    // Offsets of W_i / b_i inside the packed vector.
    std::vector<std::size_t> w_off(layers), b_off(layers);
    std::size_t at = 0;
    for (int i = 0; i < layers; ++i) {
        w_off[i] = at;
        at += static_cast<std::size_t>(sizes[i + 1]) * sizes[i];
        b_off[i] = at;
        at += static_cast<std::size_t>(sizes[i + 1]);
    }

    std::vector<std::vector<double>> act(layers + 1); // activations per layer
    for (int i = 0; i <= layers; ++i) act[i].resize(sizes[i]);
    std::vector<std::vector<double>> delta(layers + 1);
    for (int i = 0; i <= layers; ++i) delta[i].resize(sizes[i]);

    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    const double inv_b = 1.0 / batch.batch_size;
    double total_loss = 0.0;

    for (int s = 0; s < batch.batch_size; ++s) {
        const double* x = batch.inputs.data() + static_cast<std::size_t>(s) * batch.input_dim;
        for (int f = 0; f < sizes[0]; ++f) act[0][f] = x[f];

        for (int i = 0; i < layers; ++i) {
            const int in = sizes[i], out = sizes[i + 1];
            const double* w = params.data() + w_off[i];
            const double* b = params.data() + b_off[i];
            for (int o = 0; o < out; ++o) {
                double z = b[o];
                const double* wrow = w + static_cast<std::size_t>(o) * in;
                for (int f = 0; f < in; ++f) z += wrow[f] * act[i][f];
                act[i + 1][o] = (i + 1 == layers) ? z : std::tanh(z);
            }
        }

        total_loss += cross_entropy(act[layers], batch.labels[s], delta[layers]);

        if (grad) {
            for (int i = layers - 1; i >= 0; --i) {
                const int in = sizes[i], out = sizes[i + 1];
                double* gw = grad->data() + w_off[i];
                double* gb = grad->data() + b_off[i];
                const double* w = params.data() + w_off[i];
                for (int o = 0; o < out; ++o) {
                    const double d = delta[i + 1][o] * inv_b;
                    double* gwrow = gw + static_cast<std::size_t>(o) * in;
                    for (int f = 0; f < in; ++f) gwrow[f] += d * act[i][f];
                    gb[o] += d;
                }
                if (i > 0) {
                    for (int f = 0; f < in; ++f) {
                        double acc = 0.0;
                        for (int o = 0; o < out; ++o)
                            acc += w[static_cast<std::size_t>(o) * in + f] * delta[i + 1][o];
                        // tanh'(z) = 1 - a^2
                        delta[i][f] = acc * (1.0 - act[i][f] * act[i][f]);
                    }
                }
            }
        }
    }
    return total_loss * inv_b;
}

} // namespace

int ModelSpec::param_dim() const {
    switch (kind) {
        case ModelKind::MeanQuadratic:
            if (targets.empty()) throw ContractError("ModelSpec: quadratic task needs targets");
            return static_cast<int>(targets.front().size());
        case ModelKind::SoftmaxLinear:
            return num_classes * input_dim + num_classes;
        case ModelKind::Mlp: {
            int dim = 0;
            int prev = input_dim;
            for (int h : hidden_dims) {
                dim += h * prev + h;
                prev = h;
            }
            dim += num_classes * prev + num_classes;
            return dim;
        }
    }
    throw ContractError("ModelSpec: unknown kind");
}

ModelSpec ModelSpec::softmax_linear(int input_dim, int num_classes) {
    if (num_classes < 2) throw ConfigError("ModelSpec: classifier needs at least 2 classes");
    if (input_dim < 1) throw ConfigError("ModelSpec: input_dim must be positive");
    ModelSpec spec;
    spec.kind = ModelKind::SoftmaxLinear;
    spec.input_dim = input_dim;
    spec.num_classes = num_classes;
    return spec;
}

ModelSpec ModelSpec::mlp(int input_dim, int num_classes, std::vector<int> hidden_dims) {
    if (num_classes < 2) throw ConfigError("ModelSpec: classifier needs at least 2 classes");
    if (input_dim < 1) throw ConfigError("ModelSpec: input_dim must be positive");
    if (hidden_dims.empty() || hidden_dims.size() > 2)
        throw ConfigError("ModelSpec: mlp takes one or two hidden layers");
    for (int h : hidden_dims)
        if (h < 1) throw ConfigError("ModelSpec: hidden layer sizes must be positive");
    ModelSpec spec;
    spec.kind = ModelKind::Mlp;
    spec.input_dim = input_dim;
    spec.num_classes = num_classes;
    spec.hidden_dims = std::move(hidden_dims);
    return spec;
}

ModelSpec ModelSpec::mean_quadratic(std::vector<ParamVector> targets) {
    if (targets.empty()) throw ConfigError("ModelSpec: quadratic task needs at least one target");
    const std::size_t dim = targets.front().size();
    if (dim == 0) throw ConfigError("ModelSpec: quadratic targets must be non-empty");
    for (const auto& t : targets)
        if (t.size() != dim) throw ConfigError("ModelSpec: quadratic targets differ in dimension");
    ModelSpec spec;
    spec.kind = ModelKind::MeanQuadratic;
    spec.targets = std::move(targets);
    return spec;
}

DataBatch make_batch(const LabeledDataset& dataset, std::span<const int> indices,
                     int shard_index) {
    DataBatch batch;
    batch.batch_size = static_cast<int>(indices.size());
    batch.input_dim = dataset.input_dim;
    batch.shard_index = shard_index;
    batch.inputs.reserve(indices.size() * dataset.input_dim);
    batch.labels.reserve(indices.size());
    for (int i : indices) {
        auto row = dataset.row(i);
        batch.inputs.insert(batch.inputs.end(), row.begin(), row.end());
        batch.labels.push_back(dataset.labels[i]);
    }
    return batch;
}

double forward_loss(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch) {
    check_batch(spec, params, batch);
    double loss;
    if (spec.kind == ModelKind::MeanQuadratic)
        loss = quadratic_loss_grad(spec, params, batch.shard_index, nullptr);
    else
        loss = network_loss_grad(spec, params, batch, nullptr);
    if (!std::isfinite(loss)) throw NumericError("forward_loss: non-finite loss");
    return loss;
}

double loss_and_gradient(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch,
                         ParamVector& grad_out) {
    check_batch(spec, params, batch);
    grad_out.resize(params.size());
    double loss;
    if (spec.kind == ModelKind::MeanQuadratic)
        loss = quadratic_loss_grad(spec, params, batch.shard_index, &grad_out);
    else
        loss = network_loss_grad(spec, params, batch, &grad_out);
    if (!std::isfinite(loss)) throw NumericError("gradient: non-finite loss");
    for (std::size_t i = 0; i < grad_out.size(); ++i)
        if (!std::isfinite(grad_out[i]))
            throw NumericError("gradient: non-finite entry at index " + std::to_string(i));
    return loss;
}

ParamVector gradient(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch) {
    ParamVector grad;
    loss_and_gradient(spec, params, batch, grad);
    return grad;
}

ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double eta) {
    if (!(eta > 0.0)) throw ConfigError("sgd_step: learning rate must be positive");
    if (params.size() != grad.size())
        throw ContractError("sgd_step: gradient dim does not match params");
    ParamVector next(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) next[i] = params[i] - eta * grad[i];
    return next;
}

double evaluate_accuracy(const ModelSpec& spec, const ParamVector& params,
                         const LabeledDataset& dataset) {
    if (spec.kind == ModelKind::MeanQuadratic)
        throw UnsupportedError("evaluate_accuracy: not defined for the quadratic task");
    if (dataset.num_samples == 0) throw ContractError("evaluate_accuracy: empty dataset");

    std::size_t correct = 0;
    DataBatch one;
    one.batch_size = 1;
    one.input_dim = dataset.input_dim;
    one.labels = {0};
    // Reuse the forward machinery one sample at a time; argmax ties resolve
    // to the lowest class index via strict comparison.
    const auto sizes = layer_sizes(spec);
    const int layers = static_cast<int>(sizes.size()) - 1;
    std::vector<std::vector<double>> act(layers + 1);
    for (int i = 0; i <= layers; ++i) act[i].resize(sizes[i]);

    std::vector<std::size_t> w_off(layers), b_off(layers);
    std::size_t at = 0;
    for (int i = 0; i < layers; ++i) {
        w_off[i] = at;
        at += static_cast<std::size_t>(sizes[i + 1]) * sizes[i];
        b_off[i] = at;
        at += static_cast<std::size_t>(sizes[i + 1]);
    }
    if (params.size() != at) throw ContractError("evaluate_accuracy: params dim mismatch");
    if (dataset.input_dim != spec.input_dim)
        throw ContractError("evaluate_accuracy: dataset input_dim mismatch");

    for (int s = 0; s < dataset.num_samples; ++s) {
        auto row = dataset.row(s);
        for (int f = 0; f < sizes[0]; ++f) act[0][f] = row[f];
        for (int i = 0; i < layers; ++i) {
            const int in = sizes[i], out = sizes[i + 1];
            const double* w = params.data() + w_off[i];
            const double* b = params.data() + b_off[i];
            for (int o = 0; o < out; ++o) {
                double z = b[o];
                const double* wrow = w + static_cast<std::size_t>(o) * in;
                for (int f = 0; f < in; ++f) z += wrow[f] * act[i][f];
                act[i + 1][o] = (i + 1 == layers) ? z : std::tanh(z);
            }
        }
        int best = 0;
        for (int c = 1; c < sizes[layers]; ++c)
            if (act[layers][c] > act[layers][best]) best = c;
        if (best == dataset.labels[s]) ++correct;
    }
    return static_cast<double>(correct) / dataset.num_samples;
}

double finite_diff_check(const ModelSpec& spec, const ParamVector& params, const DataBatch& batch,
                         double step) {
    if (!(step > 0.0)) throw ConfigError("finite_diff_check: step must be positive");
    ParamVector analytic = gradient(spec, params, batch);
    ParamVector probe = params;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + step;
        double up = forward_loss(spec, probe, batch);
        probe[i] = params[i] - step;
        double down = forward_loss(spec, probe, batch);
        probe[i] = params[i];
        double fd = (up - down) / (2.0 * step);
        double rel = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + step);
        worst = std::max(worst, rel);
    }
    return worst;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    ParamVector params(spec.param_dim());
    StreamRng stream(seed, 0x1217);
    for (double& p : params) p = stream.next_in(-0.05, 0.05);
    return params;
}

} // namespace mobhfl
