#include <doctest.h>

#include <cmath>
#include <vector>

#include "mobhfl/errors.hpp"
#include "mobhfl/model.hpp"
#include "mobhfl/rng.hpp"

using namespace mobhfl;

namespace {

DataBatch random_batch(const ModelSpec& spec, int batch_size, StreamRng& rng) {
    DataBatch batch;
    batch.batch_size = batch_size;
    batch.input_dim = spec.input_dim;
    batch.inputs.resize(static_cast<std::size_t>(batch_size) * spec.input_dim);
    batch.labels.resize(batch_size);
    for (auto& x : batch.inputs) x = rng.next_gaussian();
    for (auto& y : batch.labels) y = static_cast<int>(rng.next_below(spec.num_classes));
    return batch;
}

ParamVector random_params(const ModelSpec& spec, StreamRng& rng, double scale = 0.5) {
    ParamVector p(spec.param_dim());
    for (auto& x : p) x = scale * rng.next_gaussian();
    return p;
}

} // namespace

TEST_CASE("quadratic task losses and gradients are exact") {
    auto spec = ModelSpec::mean_quadratic({{1.0, 0.0}, {0.0, 2.0}});
    DataBatch batch;
    batch.shard_index = 0;

    SUBCASE("loss at its own target is zero") {
        ParamVector w = {1.0, 0.0};
        CHECK(forward_loss(spec, w, batch) == 0.0);
        auto g = gradient(spec, w, batch);
        CHECK(g[0] == 0.0);
        CHECK(g[1] == 0.0);
    }
    SUBCASE("hand value 0.5*||(-1,0)||^2") {
        ParamVector w = {0.0, 0.0};
        CHECK(forward_loss(spec, w, batch) == doctest::Approx(0.5).epsilon(1e-15));
        auto g = gradient(spec, w, batch);
        CHECK(g[0] == -1.0);
        CHECK(g[1] == 0.0);
    }
    SUBCASE("shard index selects the target") {
        batch.shard_index = 1;
        ParamVector w = {0.0, 2.0};
        CHECK(forward_loss(spec, w, batch) == 0.0);
    }
    SUBCASE("out-of-range shard index is a contract error") {
        batch.shard_index = 5;
        ParamVector w = {0.0, 0.0};
        CHECK_THROWS_AS(forward_loss(spec, w, batch), ContractError);
    }
}

TEST_CASE("all-zero softmax-linear gives the uniform-prediction loss ln C") {
    auto spec = ModelSpec::softmax_linear(4, 8);
    ParamVector w(spec.param_dim(), 0.0);
    StreamRng rng(11, 0);
    auto batch = random_batch(spec, 5, rng);
    CHECK(forward_loss(spec, w, batch) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("softmax-linear gradient matches central finite differences") {
    auto spec = ModelSpec::softmax_linear(4, 3);
    StreamRng rng(17, 0);
    auto w = random_params(spec, rng);
    auto batch = random_batch(spec, 3, rng);
    CHECK(finite_diff_check(spec, w, batch, 1e-4) <= 1e-5);
}

TEST_CASE("dimension mismatch is a contract error") {
    auto spec = ModelSpec::softmax_linear(4, 3);
    ParamVector w(spec.param_dim() + 1, 0.0);
    StreamRng rng(1, 1);
    auto batch = random_batch(spec, 2, rng);
    CHECK_THROWS_AS(forward_loss(spec, w, batch), ContractError);

    ParamVector ok(spec.param_dim(), 0.0);
    batch.labels[0] = 99;
    CHECK_THROWS_AS(forward_loss(spec, ok, batch), ContractError);
}

TEST_CASE("sgd_step") {
    SUBCASE("linear update") {
        ParamVector w = {0.0, 0.0};
        ParamVector g = {-1.0, 0.0};
        auto next = sgd_step(w, g, 0.1);
        CHECK(next[0] == doctest::Approx(0.1).epsilon(1e-15));
        CHECK(next[1] == 0.0);
    }
    SUBCASE("zero gradient is a fixed point") {
        ParamVector w = {0.3, -0.7};
        ParamVector g = {0.0, 0.0};
        CHECK(sgd_step(w, g, 0.5) == w);
    }
    SUBCASE("two quadratic steps from the origin") {
        auto spec = ModelSpec::mean_quadratic({{1.0, 0.0}});
        DataBatch batch;
        ParamVector w = {0.0, 0.0};
        for (int i = 0; i < 2; ++i) w = sgd_step(w, gradient(spec, w, batch), 0.1);
        CHECK(w[0] == doctest::Approx(0.19).epsilon(1e-14));
        CHECK(w[1] == 0.0);
    }
    SUBCASE("nonpositive learning rate is a config error") {
        CHECK_THROWS_AS(sgd_step({0.0}, {1.0}, 0.0), ConfigError);
        CHECK_THROWS_AS(sgd_step({0.0}, {1.0}, -0.1), ConfigError);
    }
    SUBCASE("update is affine in the gradient") {
        StreamRng rng(23, 0);
        for (int trial = 0; trial < 20; ++trial) {
            ParamVector w(6), g1(6), g2(6), g12(6);
            for (int i = 0; i < 6; ++i) {
                w[i] = rng.next_gaussian();
                g1[i] = rng.next_gaussian();
                g2[i] = rng.next_gaussian();
                g12[i] = g1[i] + g2[i];
            }
            auto once = sgd_step(w, g12, 0.07);
            auto twice = sgd_step(sgd_step(w, g1, 0.07), g2, 0.07);
            for (int i = 0; i < 6; ++i)
                CHECK(once[i] == doctest::Approx(twice[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("evaluate_accuracy") {
    auto spec = ModelSpec::softmax_linear(2, 3);

    SUBCASE("a single correctly classified sample scores 1") {
        // Weight row 1 aligned with the sample; others zero.
        ParamVector w(spec.param_dim(), 0.0);
        w[2] = 1.0; // class 1, feature 0
        LabeledDataset ds;
        ds.num_samples = 1;
        ds.input_dim = 2;
        ds.num_classes = 3;
        ds.inputs = {5.0, 0.0};
        ds.labels = {1};
        CHECK(evaluate_accuracy(spec, w, ds) == 1.0);
    }
    SUBCASE("all-zero params predict class 0 by the tie rule") {
        ParamVector w(spec.param_dim(), 0.0);
        LabeledDataset ds;
        ds.input_dim = 2;
        ds.num_classes = 3;
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i) {
                ds.inputs.push_back(static_cast<double>(i));
                ds.inputs.push_back(static_cast<double>(c));
                ds.labels.push_back(c);
                ++ds.num_samples;
            }
        // Exactly the fraction labeled class 0.
        CHECK(evaluate_accuracy(spec, w, ds) == doctest::Approx(4.0 / 12.0).epsilon(1e-15));
    }
    SUBCASE("empty dataset is an error") {
        ParamVector w(spec.param_dim(), 0.0);
        LabeledDataset ds;
        ds.input_dim = 2;
        ds.num_classes = 3;
        CHECK_THROWS_AS(evaluate_accuracy(spec, w, ds), ContractError);
    }
    SUBCASE("quadratic task is unsupported") {
        auto quad = ModelSpec::mean_quadratic({{0.0}});
        LabeledDataset ds;
        ds.num_samples = 1;
        ds.input_dim = 2;
        ds.num_classes = 2;
        ds.inputs = {0.0, 0.0};
        ds.labels = {0};
        CHECK_THROWS_AS(evaluate_accuracy(quad, {0.0}, ds), UnsupportedError);
    }
}

TEST_CASE("finite difference agreement per model kind") {
    StreamRng rng(31, 0);

    SUBCASE("quadratic gradient is exactly linear") {
        auto spec = ModelSpec::mean_quadratic({{0.4, -1.2, 3.0}});
        DataBatch batch;
        ParamVector w = {1.0, 2.0, -0.5};
        CHECK(finite_diff_check(spec, w, batch, 1e-4) <= 1e-10);
    }
    SUBCASE("softmax-linear within 1e-5") {
        auto spec = ModelSpec::softmax_linear(5, 3);
        auto w = random_params(spec, rng);
        auto batch = random_batch(spec, 4, rng);
        CHECK(finite_diff_check(spec, w, batch, 1e-4) <= 1e-5);
    }
    SUBCASE("one-hidden-layer mlp within 1e-4") {
        auto spec = ModelSpec::mlp(4, 3, {5});
        auto w = random_params(spec, rng);
        auto batch = random_batch(spec, 4, rng);
        CHECK(finite_diff_check(spec, w, batch, 1e-4) <= 1e-4);
    }
    SUBCASE("two-hidden-layer mlp within 1e-4") {
        auto spec = ModelSpec::mlp(4, 3, {6, 5});
        auto w = random_params(spec, rng);
        auto batch = random_batch(spec, 4, rng);
        CHECK(finite_diff_check(spec, w, batch, 1e-4) <= 1e-4);
    }
}

TEST_CASE("gradient/finite-difference agreement over random pairs" * doctest::timeout(120)) {
    struct KindCase {
        ModelSpec spec;
        const char* name;
    };
    std::vector<KindCase> kinds;
    kinds.push_back({ModelSpec::softmax_linear(5, 3), "softmax-linear"});
    kinds.push_back({ModelSpec::mlp(4, 3, {5}), "mlp"});
    kinds.push_back({ModelSpec::mean_quadratic({{0.0, 0.0, 0.0, 0.0}}), "mean-quadratic"});

    for (auto& kc : kinds) {
        CAPTURE(kc.name);
        StreamRng rng(101, static_cast<std::uint64_t>(kc.spec.param_dim()));
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            ParamVector w = random_params(kc.spec, rng);
            DataBatch batch;
            if (kc.spec.kind != ModelKind::MeanQuadratic)
                batch = random_batch(kc.spec, 3, rng);
            worst = std::max(worst, finite_diff_check(kc.spec, w, batch, 1e-4));
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("quadratic analytics: beta=1, constant difference, minimizer") {
    // f_m(w) = 0.5||w - b_m||^2 with equal weights.
    std::vector<ParamVector> targets = {{1.0, 0.0}, {0.0, 1.0}, {2.0, 2.0}, {-1.0, 0.5}};
    auto spec = ModelSpec::mean_quadratic(targets);
    ParamVector bbar(2, 0.0);
    for (const auto& b : targets)
        for (int i = 0; i < 2; ++i) bbar[i] += 0.25 * b[i];

    StreamRng rng(7, 7);
    for (int trial = 0; trial < 25; ++trial) {
        ParamVector w = {rng.next_gaussian(), rng.next_gaussian()};
        ParamVector w2 = {rng.next_gaussian(), rng.next_gaussian()};
        // beta = 1 exactly: grad difference equals parameter difference.
        for (int m = 0; m < 4; ++m) {
            DataBatch batch;
            batch.shard_index = m;
            auto g1 = gradient(spec, w, batch);
            auto g2 = gradient(spec, w2, batch);
            for (int i = 0; i < 2; ++i)
                CHECK(g1[i] - g2[i] == doctest::Approx(w[i] - w2[i]).epsilon(1e-14));
        }
        // grad f_m - grad F = bbar - b_m independent of w.
        ParamVector global(2, 0.0);
        for (int m = 0; m < 4; ++m) {
            DataBatch batch;
            batch.shard_index = m;
            auto g = gradient(spec, w, batch);
            for (int i = 0; i < 2; ++i) global[i] += 0.25 * g[i];
        }
        for (int m = 0; m < 4; ++m) {
            DataBatch batch;
            batch.shard_index = m;
            auto g = gradient(spec, w, batch);
            for (int i = 0; i < 2; ++i)
                CHECK(g[i] - global[i] ==
                      doctest::Approx(bbar[i] - targets[m][i]).epsilon(1e-12));
        }
        // minimizer is bbar: global gradient vanishes there.
        ParamVector at_opt(2, 0.0);
        for (int m = 0; m < 4; ++m) {
            DataBatch batch;
            batch.shard_index = m;
            auto g = gradient(spec, bbar, batch);
            for (int i = 0; i < 2; ++i) at_opt[i] += 0.25 * g[i];
        }
        for (int i = 0; i < 2; ++i) CHECK(std::abs(at_opt[i]) <= 1e-15);
    }
}

TEST_CASE("seeded initialization is deterministic and bounded") {
    auto spec = ModelSpec::softmax_linear(6, 4);
    auto a = init_params(spec, 99);
    auto b = init_params(spec, 99);
    CHECK(a == b);
    auto c = init_params(spec, 100);
    CHECK(a != c);
    for (double v : a) {
        CHECK(v >= -0.05);
        CHECK(v <= 0.05);
    }
}
