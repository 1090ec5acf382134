#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "odelab/models/amplification.hpp"
#include "odelab/models/checkpoint.hpp"
#include "odelab/models/classifier.hpp"
#include "odelab/netcore/lipschitz.hpp"

using namespace odelab;

namespace {

VectorField scalar_identity_field() {
  return VectorField({DenseLayer(Tensor::matrix(1, 1, {1.0}), Tensor::vector({0.0}), Activation::Identity)},
                     TimeMode::Ignore);
}

DenseLayer two_class_head(std::size_t d) {
  Tensor w({2, d});
  for (std::size_t c = 0; c < d; ++c) {
    w[c] = 1.0;
    w[d + c] = -1.0;
  }
  return DenseLayer(w, Tensor({2}), Activation::Identity);
}

SolverConfig node_solver() {
  SolverConfig c;
  c.method = Method::DOPRI5;
  c.rtol = 1e-6;
  c.atol = 1e-6;
  return c;
}

Tensor random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t({n});
  for (double& v : t.values()) v = nd(rng);
  return t;
}

double logit_dot(const Classifier& m, const Tensor& x, const Tensor& u, const ForwardOptions& opts) {
  return vec::dot(classifier_forward(m, x, nullptr, opts).data(), u.data());
}

}  // namespace

TEST(ClassifierForward, ZeroParametersGiveZeroLogits) {
  ArchitectureSpec arch;
  arch.blocks = {ResidualBlock{1.0, 3}, NeuralOdeBlock{node_solver()}};
  Classifier m = build_classifier(arch, 7);
  for (Tensor* p : m.parameters()) p->fill(0.0);
  const Tensor logits = classifier_forward(m, Tensor::vector({0.3, -1.2}));
  EXPECT_EQ(logits, Tensor({2}));
  const Prediction p = predict(m, Tensor::vector({0.3, -1.2}));
  EXPECT_DOUBLE_EQ(p.probabilities[0], 0.5);
  EXPECT_DOUBLE_EQ(p.probabilities[1], 0.5);
}

TEST(ClassifierForward, ResidualDoubling) {
  Classifier m(1, 1, {BlockSpec{ResidualBlock{1.0, 2}, {scalar_identity_field()}}}, two_class_head(1));
  ClassifierTape tape;
  const Tensor logits = classifier_forward(m, Tensor::vector({1.0}), &tape);
  EXPECT_EQ(tape.head_input[0], 4.0);
  EXPECT_EQ(logits[0], 4.0);
  EXPECT_EQ(logits[1], -4.0);
}

TEST(ClassifierForward, ZeroFieldNeuralOdeIsHeadOfInput) {
  std::mt19937_64 rng(3);
  VectorField f = VectorField::mlp(2, 8, TimeMode::AppendScalar, rng);
  for (DenseLayer& l : f.layers()) {
    l.weights().fill(0.0);
    l.bias().fill(0.0);
  }
  const DenseLayer head = glorot_layer(2, 3, Activation::Identity, rng);
  Classifier m(2, 2, {BlockSpec{NeuralOdeBlock{node_solver()}, {f}}}, head);
  const Tensor x = Tensor::vector({0.7, -0.4});
  EXPECT_EQ(classifier_forward(m, x), head.apply(x));
}

TEST(ClassifierForward, RejectsWrongInputDimension) {
  Classifier m(1, 1, {BlockSpec{ResidualBlock{1.0, 1}, {scalar_identity_field()}}}, two_class_head(1));
  EXPECT_THROW(classifier_forward(m, Tensor::vector({1.0, 2.0})), DimensionError);
}

TEST(ClassifierForward, SolverErrorsCarryBlockIndex) {
  SolverConfig c = node_solver();
  c.max_steps = 1;
  std::mt19937_64 rng(1);
  Classifier m(2, 2,
               {BlockSpec{ResidualBlock{1.0, 1}, {VectorField::mlp(2, 4, TimeMode::Ignore, rng)}},
                BlockSpec{NeuralOdeBlock{c}, {VectorField::mlp(2, 4, TimeMode::AppendScalar, rng)}}},
               two_class_head(2));
  try {
    classifier_forward(m, Tensor::vector({1.0, 1.0}));
    FAIL() << "expected a budget error";
  } catch (const BudgetError& e) {
    EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos) << e.what();
  }
}

TEST(ClassifierConstruction, ValidatesBlocks) {
  std::mt19937_64 rng(2);
  EXPECT_THROW(Classifier(1, 1, {BlockSpec{ResidualBlock{0.0, 1}, {scalar_identity_field()}}}, two_class_head(1)),
               ContractError);
  SolverConfig fixed;
  fixed.method = Method::RK4;
  EXPECT_THROW(Classifier(2, 2, {BlockSpec{NeuralOdeBlock{fixed}, {VectorField::mlp(2, 4, TimeMode::AppendScalar, rng)}}},
                          two_class_head(2)),
               ContractError);
  EXPECT_THROW(Classifier(3, 3,
                          {BlockSpec{RevBlock{1},
                                     {VectorField::mlp(1, 4, TimeMode::Ignore, rng),
                                      VectorField::mlp(1, 4, TimeMode::Ignore, rng)}}},
                          two_class_head(3)),
               DimensionError);
  EXPECT_THROW(Classifier(2, 2, {BlockSpec{PolyBlock{1}, {VectorField::mlp(2, 4, TimeMode::AppendScalar, rng)}}},
                          two_class_head(2)),
               ContractError);
}

TEST(Predict, SoftmaxExamples) {
  const Tensor p = softmax(Tensor::vector({0.0, 0.0}));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_EQ(argmax(Tensor::vector({0.0, 0.0})), 0);
  const Tensor q = softmax(Tensor::vector({1.0, 3.0}));
  const double e1 = std::exp(1.0), e3 = std::exp(3.0);
  EXPECT_NEAR(q[0], e1 / (e1 + e3), 1e-15);
  EXPECT_NEAR(q[1], e3 / (e1 + e3), 1e-15);
  EXPECT_NEAR(q[0], 0.1192, 1e-4);
  EXPECT_EQ(argmax(Tensor::vector({1.0, 3.0})), 1);
}

TEST(Predict, ShiftInvarianceAndNormalisation) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor z = random_vector(5, rng, 3.0);
    Tensor shifted = z;
    const double c = u(rng);
    for (double& v : shifted.values()) v += c;
    const Tensor a = softmax(z), b = softmax(shifted);
    double sum = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-12);
      sum += a[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(argmax(z), argmax(shifted));
  }
}

TEST(Amplification, ZeroFieldIsExactlyOne) {
  // Dyadic perturbations keep y0 + eps - y0 == eps in floating point.
  SolverConfig c;
  c.method = Method::Euler;
  c.h = 0.1;
  EXPECT_EQ(amplification(FunctionField::zero(2), c, Tensor::vector({1.0, 2.0}), Tensor::vector({0.125, 0.0})), 1.0);
  c.method = Method::DOPRI5;
  EXPECT_EQ(amplification(FunctionField::zero(2), c, Tensor::vector({1.0, 2.0}), Tensor::vector({0.0, -0.375})), 1.0);
}

TEST(Amplification, LinearFieldApproachesExponential) {
  SolverConfig c;
  c.method = Method::Euler;
  c.h = 1e-3;
  const double r = amplification(FunctionField::linear(1, 0.5), c, Tensor::vector({1.0}), Tensor::vector({1e-2}));
  EXPECT_LE(r, std::exp(0.5));
  EXPECT_NEAR(r, std::exp(0.5), 1e-3);
  c.h = 1e-2;
  const double coarse = amplification(FunctionField::linear(1, 0.5), c, Tensor::vector({1.0}), Tensor::vector({1e-2}));
  EXPECT_LT(coarse, r);
}

TEST(Amplification, SineFieldBoundedByE) {
  SolverConfig c;
  c.method = Method::Euler;
  c.h = 1e-3;
  for (double y0 : {-2.0, 0.0, 0.5, 3.0}) {
    const double r = amplification(FunctionField::sine(1), c, Tensor::vector({y0}), Tensor::vector({0.01}));
    EXPECT_LE(r, std::exp(1.0)) << y0;
  }
}

TEST(Amplification, ZeroPerturbationRejected) {
  SolverConfig c;
  c.method = Method::Euler;
  EXPECT_THROW(amplification(FunctionField::zero(1), c, Tensor::vector({1.0}), Tensor::vector({0.0})), ContractError);
}

TEST(Amplification, RandomFieldsRespectStepwiseAndExponentialBounds) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> hdist(0.01, 0.5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t d = 2 + trial % 3;
    const VectorField f = VectorField::mlp(d, 8, TimeMode::Ignore, rng);
    const double k = lipschitz_upper_bound(f).bound;
    SolverConfig c;
    c.method = Method::Euler;
    c.t1 = 1.0;
    c.h = hdist(rng);
    const long n = c.fixed_step_count();
    const Tensor y0 = random_vector(d, rng);
    const Tensor eps = random_vector(d, rng, 0.05);
    const double ratio = amplification(f, c, y0, eps);
    // Steps shorter than h only tighten the recursion.
    const double stepwise = std::pow(1.0 + c.h * k, static_cast<double>(n));
    EXPECT_LE(ratio, stepwise * (1.0 + 1e-12));
    EXPECT_LE(std::pow(1.0 + (c.t1 - c.t0) / n * k, static_cast<double>(n)), std::exp((c.t1 - c.t0) * k) * (1.0 + 1e-12));
  }
}

TEST(Amplification, ClassifierRatioMatchesBlockOracle) {
  ArchitectureSpec arch;
  arch.blocks = {ResidualBlock{0.5, 4}};
  const Classifier m = build_classifier(arch, 5);
  SolverConfig c;
  c.method = Method::Euler;
  c.h = 0.5;
  c.t1 = 2.0;
  const Tensor x = Tensor::vector({0.2, 0.9});
  const Tensor eps = Tensor::vector({1e-3, -2e-3});
  EXPECT_DOUBLE_EQ(amplification(m, x, eps), amplification(m.blocks()[0].fields[0], c, x, eps));
}

TEST(ModelInvariants, ResidualMatchesFixedEulerBitwise) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const double h = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    const int depth = 1 + trial % 6;
    ArchitectureSpec arch;
    arch.augment_dims = trial % 3;
    arch.blocks = {ResidualBlock{h, depth}};
    const Classifier m = build_classifier(arch, 100 + trial);
    const Tensor x = random_vector(2, rng);
    ClassifierTape tape;
    classifier_forward(m, x, &tape);
    Tensor y0({arch.state_dim()});
    y0[0] = x[0];
    y0[1] = x[1];
    SolverConfig c;
    c.method = Method::Euler;
    c.h = h;
    c.t1 = h * depth;
    const Trajectory traj = integrate_fixed(m.blocks()[0].fields[0], c, y0);
    ASSERT_EQ(traj.steps(), static_cast<std::size_t>(depth));
    EXPECT_EQ(traj.final_state().values(), tape.head_input) << "trial " << trial;
  }
}

TEST(ModelInvariants, RevBlocksReconstructInputs) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    ArchitectureSpec arch;
    arch.augment_dims = 2 * (trial % 2);
    arch.blocks = {RevBlock{1 + trial % 4}};
    const Classifier m = build_classifier(arch, 300 + trial);
    const Tensor x = random_vector(2, rng, 2.0);
    ClassifierTape tape;
    classifier_forward(m, x, &tape);
    const BlockSpec& b = m.blocks()[0];
    const std::size_t half = m.state_dim() / 2;
    const auto& states = tape.blocks[0].states;
    std::vector<double> y = states.back();
    for (std::size_t n = states.size() - 1; n > 0; --n) {
      const std::vector<double> xs(y.begin(), y.begin() + half), ys(y.begin() + half, y.end());
      const auto [xp, yp] = revnet_invert(b.fields[0], b.fields[1], Tensor::vector(xs), Tensor::vector(ys));
      std::copy(xp.data().begin(), xp.data().end(), y.begin());
      std::copy(yp.data().begin(), yp.data().end(), y.begin() + half);
    }
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], states.front()[i], 1e-9);
  }
}

class ClassifierGradient : public ::testing::TestWithParam<int> {};

TEST_P(ClassifierGradient, MatchesFiniteDifferences) {
  const int which = GetParam();
  ArchitectureSpec arch;
  arch.augment_dims = 2;
  arch.width = 6;
  arch.class_count = 3;
  switch (which) {
    case 0: arch.blocks = {ResidualBlock{0.5, 3}}; break;
    case 1: arch.blocks = {NeuralOdeBlock{node_solver()}}; break;
    case 2: arch.blocks = {PolyBlock{2}}; break;
    case 3: arch.blocks = {FractalBlock{3}}; break;
    case 4: arch.blocks = {RevBlock{2}}; break;
    default: arch.blocks = {ResidualBlock{1.0, 2}, NeuralOdeBlock{node_solver()}, RevBlock{1}}; break;
  }
  Classifier m = build_classifier(arch, 40 + which);
  std::mt19937_64 rng(90 + which);
  for (Tensor* p : m.parameters()) {
    for (double& v : p->values()) v += std::normal_distribution<double>(0.0, 0.05)(rng);
  }
  const Tensor x = random_vector(2, rng);
  const Tensor u = random_vector(3, rng);

  for (OdeMode mode : {OdeMode::Adaptive, OdeMode::FixedGrid}) {
    ForwardOptions opts;
    opts.ode_mode = mode;
    ClassifierTape tape;
    classifier_forward(m, x, &tape, opts);
    const Gradients g = classifier_backward(m, tape, u);
    ForwardOptions replay = opts;
    replay.grid_source = mode == OdeMode::Adaptive ? &tape : nullptr;

    const double step = 1e-6;
    int checked = 0, bad = 0;
    auto check = [&](double analytic, double numeric) {
      ++checked;
      if (std::abs(analytic - numeric) > 1e-5 * std::max(1.0, std::abs(numeric))) ++bad;
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
      Tensor xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      check(g.input[i], (logit_dot(m, xp, u, replay) - logit_dot(m, xm, u, replay)) / (2 * step));
    }
    auto params = m.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (std::size_t i = 0; i < params[p]->size(); ++i) {
        const double orig = (*params[p])[i];
        (*params[p])[i] = orig + step;
        const double fp = logit_dot(m, x, u, replay);
        (*params[p])[i] = orig - step;
        const double fm = logit_dot(m, x, u, replay);
        (*params[p])[i] = orig;
        check(g.params[p][i], (fp - fm) / (2 * step));
      }
    }
    EXPECT_GT(checked, 50);
    // Central differences straddling a ReLU kink are the only allowed misses.
    EXPECT_LE(bad, checked / 100) << "block set " << which << ", " << bad << " of " << checked;
  }
}

INSTANTIATE_TEST_SUITE_P(AllBlocks, ClassifierGradient, ::testing::Range(0, 6));

TEST(ClassifierBackward, RequiresRecordedTape) {
  ArchitectureSpec arch;
  arch.blocks = {ResidualBlock{1.0, 1}};
  const Classifier m = build_classifier(arch, 1);
  EXPECT_THROW(classifier_backward(m, ClassifierTape{}, Tensor::vector({1.0, 0.0})), StateError);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  ArchitectureSpec arch;
  arch.augment_dims = 2;
  SolverConfig c = node_solver();
  c.t1 = 0.75;
  arch.blocks = {ResidualBlock{0.3, 2}, NeuralOdeBlock{c}, PolyBlock{1}, FractalBlock{2}, RevBlock{2}};
  const Classifier m = build_classifier(arch, 1234);
  const std::string text = checkpoint_dump(m);
  const Classifier back = checkpoint_parse(text);
  EXPECT_EQ(back.seed(), 1234u);
  EXPECT_EQ(checkpoint_dump(back), text);
  const auto a = m.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i], *b[i]);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const Tensor x = random_vector(2, rng);
    EXPECT_EQ(classifier_forward(m, x), classifier_forward(back, x));
  }
}

TEST(Checkpoint, InfiniteStepCapSerialisesAsNull) {
  ArchitectureSpec arch;
  arch.blocks = {NeuralOdeBlock{node_solver()}};
  const nlohmann::json j = checkpoint_to_json(build_classifier(arch, 1));
  EXPECT_TRUE(j["blocks"][0]["solver"]["h_max"].is_null());
  EXPECT_TRUE(std::isinf(std::get<NeuralOdeBlock>(checkpoint_from_json(j).blocks()[0].kind).solver.h_max));
}

TEST(Checkpoint, MalformedDocumentsAreFormatErrors) {
  EXPECT_THROW(checkpoint_parse("{not json"), FormatError);
  EXPECT_THROW(checkpoint_parse("{}"), FormatError);
  ArchitectureSpec arch;
  arch.blocks = {ResidualBlock{1.0, 1}};
  nlohmann::json j = checkpoint_to_json(build_classifier(arch, 1));
  j["format_version"] = 99;
  EXPECT_THROW(checkpoint_from_json(j), FormatError);
  j = checkpoint_to_json(build_classifier(arch, 1));
  j["blocks"][0]["kind"] = "dense";
  EXPECT_THROW(checkpoint_from_json(j), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.json"), IoError);
}
