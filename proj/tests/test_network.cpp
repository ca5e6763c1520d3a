#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "topocnn/dataset.hpp"
#include "topocnn/network.hpp"

using namespace topocnn;
using namespace topocnn::testing;

namespace {

// sum_l (weights + bias) with conv/tconv k*k*in*out + out and dense in*out + out.
std::size_t analytic_count(std::size_t side, std::size_t n, std::size_t c1, std::size_t c2, std::size_t c3) {
    const std::size_t flat = (side / 20) * (side / 20) * c3;
    std::size_t total = 0;
    total += 2 * 2 * 1 * c1 + c1;
    total += 2 * 2 * c1 * c2 + c2;
    total += 5 * 5 * c2 * c3 + c3;
    if (n == 0) {
        total += flat * flat + flat;
    } else {
        total += flat * n + n;
        total += n * flat + flat;
    }
    total += 2 * 2 * c3 * c2 + c2;
    total += 5 * 5 * c2 * c1 + c1;
    total += 2 * 2 * c1 * 1 + 1;
    return total;
}

}  // namespace

TEST(BuildModel, BaseArchitectureLayers) {
    const auto layers = build_architecture(0, 100);
    ASSERT_EQ(layers.size(), 12u);
    const auto& dense = std::get<DenseLayer>(layers[7].params);
    EXPECT_EQ(dense.in, 12800u);
    EXPECT_EQ(dense.out, 12800u);
    EXPECT_EQ(weight_shape(layers[7]), (Shape{12800, 1, 1, 12800}));
    EXPECT_EQ(layers.back().activation, Activation::ReLU);
}

TEST(BuildModel, AdaptiveBottleneck) {
    const auto layers = build_architecture(8000, 100);
    ASSERT_EQ(layers.size(), 13u);
    EXPECT_EQ(std::get<DenseLayer>(layers[7].params).out, 8000u);
    EXPECT_EQ(std::get<DenseLayer>(layers[8].params).in, 8000u);
    EXPECT_EQ(std::get<DenseLayer>(layers[8].params).out, 12800u);
}

TEST(BuildModel, RejectsIndivisibleSide) {
    EXPECT_THROW(build_architecture(0, 30), ShapeError);
    EXPECT_THROW(build_architecture(0, 0), ShapeError);
}

TEST(BuildModel, PaperShapeChain) {
    Model m;
    m.layers = build_architecture(0, 100);
    m.input_h = m.input_w = 100;
    const auto chain = shape_chain(m);
    const std::vector<Shape> expected{
        {1, 100, 100, 128}, {1, 50, 50, 128}, {1, 50, 50, 256}, {1, 25, 25, 256}, {1, 25, 25, 512}, {1, 5, 5, 512},
        {1, 1, 1, 12800},   {1, 1, 1, 12800}, {1, 5, 5, 512},   {1, 10, 10, 256}, {1, 50, 50, 128}, {1, 100, 100, 1},
    };
    EXPECT_EQ(chain, expected);
}

TEST(BuildModel, DeskScaleFlattenAndForwardShape) {
    const Model m = build_model(0, 40, {8, 16, 32}, 1);
    EXPECT_EQ(std::get<DenseLayer>(m.layers[7].params).in, 128u);
    Rng rng(2);
    const ForwardResult r = forward(m, random_tensor({3, 40, 40, 1}, rng, 0, 1));
    EXPECT_EQ(r.output.shape(), (Shape{3, 40, 40, 1}));
    EXPECT_EQ(r.cache.size(), m.layers.size());
}

TEST(ParameterCount, BaseModelExact) {
    const auto layers = build_architecture(0, 100);
    const std::size_t count = parameter_count(layers);
    EXPECT_EQ(count, analytic_count(100, 0, 128, 256, 512));
    EXPECT_EQ(count, 168606465u);
    EXPECT_GT(count, 164'000'000u);
    EXPECT_EQ(parameter_count(layers[0]), 640u);
    EXPECT_EQ(parameter_count(layers[7]), 12800u * 12800u + 12800u);
    EXPECT_GT(2 * parameter_count(layers[7]), count);
}

TEST(ParameterCount, AdaptiveMatchesFormula) {
    for (std::size_t n : {0u, 1u, 64u, 128u, 8000u}) {
        EXPECT_EQ(parameter_count(build_architecture(n, 100)), analytic_count(100, n, 128, 256, 512)) << n;
        EXPECT_EQ(parameter_count(build_architecture(n, 40, {8, 16, 32})), analytic_count(40, n, 8, 16, 32)) << n;
    }
}

TEST(Init, HeUniformBoundsAndZeroBias) {
    const Model m = build_model(16, 40, {8, 16, 32}, 5);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        if (m.params[i].size() == 0) continue;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(m.layers[i])));
        double maxabs = 0.0;
        for (double w : m.params[i].weights.data()) maxabs = std::max(maxabs, std::abs(w));
        EXPECT_LE(maxabs, bound);
        EXPECT_GT(maxabs, 0.5 * bound);
        for (double b : m.params[i].bias) EXPECT_EQ(b, 0.0);
    }
    EXPECT_EQ(fan_in(m.layers[0]), 4u);
    // tconv k2 s2: each output pixel receives one kernel tap per input channel.
    EXPECT_EQ(fan_in(m.layers[10]), 32u);
}

TEST(Init, SeedDeterminesWeights) {
    const Model a = build_model(0, 20, {2, 4, 8}, 9);
    const Model b = build_model(0, 20, {2, 4, 8}, 9);
    const Model c = build_model(0, 20, {2, 4, 8}, 10);
    EXPECT_EQ(a.params, b.params);
    EXPECT_NE(a.params, c.params);
}

TEST(Forward, ZeroWeightsGiveZeroOutput) {
    Model m = build_model(0, 20, {2, 4, 8}, 1);
    for (auto& p : m.params) {
        for (double& w : p.weights.data()) w = 0.0;
    }
    Rng rng(1);
    const Tensor y = forward(m, random_tensor({2, 20, 20, 1}, rng)).output;
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, EqualsManualComposition) {
    const Model m = build_model(4, 20, {2, 3, 4}, 3);
    Rng rng(4);
    const Tensor x = random_tensor({2, 20, 20, 1}, rng, 0, 1);
    Tensor h = x;
    auto act = [](const Tensor& t) { return relu(t); };
    const auto& P = m.params;
    auto conv_p = [&](std::size_t i) { return std::get<ConvLayer>(m.layers[i].params).params; };
    auto tconv_p = [&](std::size_t i) { return std::get<TConvLayer>(m.layers[i].params).params; };
    h = act(conv2d_forward(h, P[0].weights, P[0].bias, conv_p(0)));
    h = maxpool_forward(h, PoolParams::square(2)).output;
    h = act(conv2d_forward(h, P[2].weights, P[2].bias, conv_p(2)));
    h = maxpool_forward(h, PoolParams::square(2)).output;
    h = act(conv2d_forward(h, P[4].weights, P[4].bias, conv_p(4)));
    h = maxpool_forward(h, PoolParams::square(5)).output;
    h = flatten(h);
    h = act(dense_forward(h, P[7].weights, P[7].bias));
    h = act(dense_forward(h, P[8].weights, P[8].bias));
    h = reshape(h, 1, 1, 4);
    h = act(tconv2d_forward(h, P[10].weights, P[10].bias, tconv_p(10)));
    h = act(tconv2d_forward(h, P[11].weights, P[11].bias, tconv_p(11)));
    h = act(tconv2d_forward(h, P[12].weights, P[12].bias, tconv_p(12)));
    EXPECT_EQ(forward(m, x).output, h);
}

TEST(Forward, RejectsWrongInputShape) {
    const Model m = build_model(0, 20, {2, 4, 8}, 1);
    EXPECT_THROW(forward(m, Tensor({1, 40, 40, 1})), ShapeError);
}

TEST(MseLoss, TrivialAndNaive) {
    Rng rng(6);
    const Tensor a = random_tensor({2, 3, 3, 1}, rng);
    EXPECT_EQ(mse_loss(a, a).loss, 0.0);
    Tensor b = a;
    for (double& v : b.data()) v -= 1.0;
    EXPECT_NEAR(mse_loss(a, b).loss, 1.0, 1e-15);

    const Tensor c = random_tensor(a.shape(), rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - c[i]) * (a[i] - c[i]);
    const LossResult r = mse_loss(a, c);
    EXPECT_NEAR(r.loss, acc / 18.0, 1e-15);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(r.grad[i], 2.0 * (a[i] - c[i]) / 18.0, 1e-16);
    EXPECT_THROW(mse_loss(a, Tensor({1, 3, 3, 1})), ShapeError);
}

TEST(Backward, WholeModelFiniteDifferences) {
    Model m = build_model(0, 20, {2, 4, 8}, 21);
    Rng rng(22);
    const Tensor x = random_tensor({2, 20, 20, 1}, rng, 0, 1);
    const Tensor t = random_tensor({2, 20, 20, 1}, rng, 0, 1);
    const ForwardResult fr = forward(m, x);
    const LossResult lr = mse_loss(fr.output, t);
    const auto grads = backward(m, fr.cache, lr.grad);

    std::vector<std::pair<std::size_t, std::size_t>> slots;  // (layer, flat index incl. bias)
    for (std::size_t l = 0; l < m.params.size(); ++l)
        for (std::size_t k = 0; k < m.params[l].size(); ++k) slots.emplace_back(l, k);
    rng.shuffle(std::span(slots));

    std::vector<double> analytic, numeric;
    for (std::size_t s = 0; s < 50; ++s) {
        const auto [l, k] = slots[s];
        ParamBlob& p = m.params[l];
        double& w = k < p.weights.size() ? p.weights[k] : p.bias[k - p.weights.size()];
        const double g = k < p.weights.size() ? grads[l].weights[k] : grads[l].bias[k - p.weights.size()];
        const double saved = w, h = 1e-6;
        w = saved + h;
        const double fp = mse_loss(forward(m, x).output, t).loss;
        w = saved - h;
        const double fm = mse_loss(forward(m, x).output, t).loss;
        w = saved;
        analytic.push_back(g);
        numeric.push_back((fp - fm) / (2 * h));
    }
    EXPECT_LT(relative_error(analytic, numeric), 1e-4);
}

TEST(Adam, ZeroGradientLeavesParams) {
    std::vector<double> p{0.5, -1.0}, g{0.0, 0.0}, m(2, 0.0), v(2, 0.0);
    adam_update(p, g, m, v, {}, 1);
    EXPECT_EQ(p, (std::vector<double>{0.5, -1.0}));
}

TEST(Adam, FirstStepClosedForm) {
    // t=1: mhat = g, vhat = g^2, so delta = -lr g / (|g| + eps).
    for (double g : {0.3, -2.0, 1e-3}) {
        std::vector<double> p{1.0}, gr{g}, m{0.0}, v{0.0};
        const AdamHyper h{1e-3, 0.9, 0.999, 1e-7};
        adam_update(p, gr, m, v, h, 1);
        EXPECT_NEAR(p[0], 1.0 - 1e-3 * g / (std::abs(g) + 1e-7), 1e-15);
        EXPECT_NEAR(std::abs(p[0] - 1.0), 1e-3, 1e-6);
    }
}

TEST(Adam, ConstantGradientStepsStayNearLr) {
    std::vector<double> p{0.0}, g{0.7}, m{0.0}, v{0.0};
    double prev = 0.0;
    for (std::size_t t = 1; t <= 5; ++t) {
        adam_update(p, g, m, v, {}, t);
        EXPECT_NEAR(prev - p[0], 1e-3, 1e-9);
        prev = p[0];
    }
}

TEST(Adam, QuadraticDescends) {
    std::vector<double> w{1.0}, m{0.0}, v{0.0};
    const AdamHyper h{0.1, 0.9, 0.999, 1e-7};
    double prev = 1.0;
    for (std::size_t t = 1; t <= 10; ++t) {
        const std::vector<double> g{2.0 * w[0]};
        adam_update(w, g, m, v, h, t);
        EXPECT_LT(std::abs(w[0]), prev) << "step " << t;
        prev = std::abs(w[0]);
    }
}

TEST(Adam, StepCountsAndShapeMismatch) {
    Model m = build_model(0, 20, {2, 4, 8}, 1);
    AdamState s = make_adam(m);
    EXPECT_EQ(s.step, 0u);
    auto grads = make_adam(m).m;
    adam_step(s, m.params, grads);
    EXPECT_EQ(s.step, 1u);
    grads[0].bias.push_back(0.0);
    EXPECT_THROW(adam_step(s, m.params, grads), ShapeError);
}

TEST(Train, FirstEpochLossEqualsInitialLoss) {
    Model m = build_model(0, 20, {2, 4, 8}, 7);
    Rng rng(8);
    const Tensor x = random_tensor({4, 20, 20, 1}, rng, 0, 1);
    const Tensor t = random_tensor({4, 20, 20, 1}, rng, 0, 1);
    const double initial = mse_loss(forward(m, x).output, t).loss;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 3;
    const TrainLog log = train(m, x, t, cfg);
    ASSERT_EQ(log.epoch_loss.size(), 1u);
    // Same samples in a permuted order: equal up to summation order.
    EXPECT_NEAR(log.epoch_loss[0], initial, 1e-14 * initial);
}

TEST(Train, ZeroLearningRateKeepsLossConstant) {
    Model m = build_model(0, 20, {2, 4, 8}, 7);
    Rng rng(8);
    const Tensor x = random_tensor({4, 20, 20, 1}, rng, 0, 1);
    const Tensor t = random_tensor({4, 20, 20, 1}, rng, 0, 1);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 4;
    cfg.lr = 0.0;
    const TrainLog log = train(m, x, t, cfg);
    for (double l : log.epoch_loss) EXPECT_NEAR(l, log.epoch_loss[0], 1e-14);
}

TEST(Train, DeterministicUnderSeed) {
    Rng rng(8);
    const Tensor x = random_tensor({5, 20, 20, 1}, rng, 0, 1);
    const Tensor t = random_tensor({5, 20, 20, 1}, rng, 0, 1);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 2;
    cfg.seed = 99;
    Model a = build_model(0, 20, {2, 4, 8}, 7), b = build_model(0, 20, {2, 4, 8}, 7);
    const TrainLog la = train(a, x, t, cfg), lb = train(b, x, t, cfg);
    EXPECT_EQ(la.epoch_loss, lb.epoch_loss);
    EXPECT_EQ(a.params, b.params);
}

TEST(Train, MemorisesSingleSample) {
    // Target is a 20x20 solver design, input its scattered V_f image.
    data::DatasetMeta meta;
    meta.nx = meta.ny = 20;
    meta.rmin = 1.5;
    const Tensor target = data::image_to_tensor(data::field_to_image(simp::optimize(data::problem_for(meta, 0.5)).rho));
    const Tensor input = data::image_to_tensor(data::gen_input_image(0.5, 20, 20, data::sample_seed(0, 0.5)));
    Model m = build_model(0, 20, {4, 8, 16}, 2);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 1;
    const TrainLog log = train(m, input, target, cfg);
    EXPECT_LT(log.epoch_loss.back(), 1e-3 * log.epoch_loss.front());
    EXPECT_LT(mse_loss(predict(m, input), target).loss, 1e-3);
}

TEST(Train, RejectsBadConfig) {
    Model m = build_model(0, 20, {2, 4, 8}, 7);
    const Tensor x({2, 20, 20, 1}), t({2, 20, 20, 1});
    TrainConfig cfg;
    cfg.batch_size = 3;
    EXPECT_THROW(train(m, x, t, cfg), std::invalid_argument);
    cfg.batch_size = 1;
    cfg.epochs = 0;
    EXPECT_THROW(train(m, x, t, cfg), std::invalid_argument);
}

TEST(Train, NonFiniteLossAborts) {
    Model m = build_model(0, 20, {2, 4, 8}, 7);
    Tensor x({1, 20, 20, 1}, 0.5), t({1, 20, 20, 1}, 0.5);
    t[0] = std::numeric_limits<double>::infinity();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 1;
    try {
        train(m, x, t, cfg);
        FAIL() << "expected TrainingDiverged";
    } catch (const TrainingDiverged& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("norms"), std::string::npos);
    }
}

TEST(Predict, ClampsToUnitInterval) {
    Model m = build_model(0, 20, {2, 4, 8}, 1);
    // Large final bias drives raw output above 1.
    m.params.back().bias[0] = 1.3;
    Rng rng(3);
    const Tensor x = random_tensor({2, 20, 20, 1}, rng, 0, 1);
    const Tensor raw = forward(m, x).output;
    const Tensor p = predict(m, x);
    bool saw_clamp = false;
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_GE(p[i], 0.0);
        EXPECT_LE(p[i], 1.0);
        if (raw[i] > 1.0) {
            EXPECT_EQ(p[i], 1.0);
            saw_clamp = true;
        }
    }
    EXPECT_TRUE(saw_clamp);
}

TEST(Predict, BaseAndAdaptiveOutputShapes) {
    for (std::size_t n : {0u, 6u}) {
        const Model m = build_model(n, 40, {2, 2, 4}, 1);
        EXPECT_EQ(predict(m, Tensor({1, 40, 40, 1}, 0.5)).shape(), (Shape{1, 40, 40, 1}));
    }
}

TEST(Summary, CountsAndTotal) {
    Model m;
    m.layers = build_architecture(0, 100);
    m.input_h = m.input_w = 100;
    const std::string s = summary(m);
    EXPECT_NE(s.find("Total params: 168606465"), std::string::npos);
    EXPECT_NE(s.find("(None, 100, 100, 128)"), std::string::npos);
    EXPECT_NE(s.find("640"), std::string::npos);
    EXPECT_NE(s.find("163852800"), std::string::npos);

    const Model empty;
    const std::string e = summary(empty);
    EXPECT_NE(e.find("Total params: 0"), std::string::npos);
}
