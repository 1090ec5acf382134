#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "odelab/stabilitylab/certify.hpp"
#include "odelab/stabilitylab/experiments.hpp"
#include "odelab/stabilitylab/survey.hpp"

using namespace odelab;

namespace {

SolverConfig euler(double h, double t1 = 1.0) {
  SolverConfig c;
  c.method = Method::Euler;
  c.h = h;
  c.t1 = t1;
  return c;
}

}  // namespace

TEST(CertifyBound, SineFieldHolds) {
  const BoundCertificate c =
      certify_bound(FunctionField::sine(3), euler(1e-3), Tensor::vector({0.5, -1.0, 2.0}), 0.01, 20, 1);
  EXPECT_EQ(c.K, 1.0);
  EXPECT_DOUBLE_EQ(c.c, std::exp(1.0));
  EXPECT_TRUE(c.holds);
  EXPECT_LE(c.empirical_max_deviation, std::exp(1.0) * 0.01);
  EXPECT_EQ(c.trial_deviations.size(), 20u);
  EXPECT_LE(c.stepwise_bound, c.c);
  EXPECT_NEAR(c.stepwise_bound, std::pow(1.001, 1000), 1e-9);
}

TEST(CertifyBound, LinearFieldMatchesVariationalSolution) {
  const double eps = 0.01;
  const BoundCertificate c = certify_bound(FunctionField::linear(2, 0.5), euler(1e-4), Tensor::vector({1.0, -2.0}),
                                           eps, 5, 3);
  EXPECT_NEAR(c.empirical_max_deviation, std::exp(0.5) * eps, 1e-6);
  EXPECT_NEAR(c.amplification(), std::exp(0.5), 1e-4);
  EXPECT_TRUE(c.holds);
}

TEST(CertifyBound, ZeroPerturbationForbidden) {
  EXPECT_THROW(certify_bound(FunctionField::sine(1), euler(0.1), Tensor::vector({0.0}), 0.0, 3, 1), ContractError);
}

TEST(CertifyBound, HoldsForRandomFieldsAndAnyFixedStep) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 24; ++trial) {
    const VectorField f = VectorField::mlp(3, 8, TimeMode::Ignore, rng);
    SolverConfig c = euler(std::vector<double>{1.0, 0.5, 0.1, 0.01}[trial % 4], 2.0);
    c.method = std::vector<Method>{Method::Euler, Method::Heun, Method::RK4}[trial % 3];
    const BoundCertificate cert = certify_bound(f, c, random_direction(3, rng), 0.05, 10, trial);
    EXPECT_TRUE(cert.holds) << trial;
    EXPECT_GE(cert.c, 1.0);
    EXPECT_LE(cert.empirical_max_deviation, cert.stepwise_bound * cert.epsilon_norm * (1 + 1e-12));
    EXPECT_LE(cert.stepwise_bound, cert.c * (1 + 1e-12));
  }
}

TEST(CertifyBound, AdaptiveCertificatesHold) {
  std::mt19937_64 rng(32);
  for (Method m : {Method::RKF45, Method::DOPRI5}) {
    for (int trial = 0; trial < 8; ++trial) {
      const VectorField f = VectorField::mlp(2, 8, TimeMode::AppendScalar, rng);
      SolverConfig c;
      c.method = m;
      c.rtol = c.atol = 1e-6;
      const BoundCertificate cert = certify_bound(f, c, random_direction(2, rng), 1e-3, 10, trial);
      EXPECT_TRUE(cert.holds);
      EXPECT_GE(cert.K_step, cert.K);
    }
  }
}

TEST(CertifyBound, ExportsCarryEveryField) {
  const BoundCertificate c = certify_bound(FunctionField::sine(1), euler(0.1), Tensor::vector({1.0}), 0.1, 2, 1);
  const nlohmann::json j = certificate_json(c);
  EXPECT_EQ(j["holds"], true);
  EXPECT_EQ(j["interval"][1], 1.0);
  std::ostringstream os;
  write_certificate_csv(os, {c});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')),
            "epsilon_norm,K,K_step,t0,b,c,stepwise_bound,empirical_max_deviation,amplification,trials,steps,holds");
}

TEST(ReluSurvey, ZeroModelIsTrivial) {
  ArchitectureSpec arch;
  arch.blocks = {ResidualBlock{1.0, 2}, NeuralOdeBlock{SolverConfig{}}};
  Classifier m = build_classifier(arch, 1);
  for (Tensor* p : m.parameters()) p->fill(0.0);
  const auto rows = relu_bound_survey(m, make_two_moons(10, 0.1, 1), 50, 2);
  ASSERT_EQ(rows.size(), 2u);
  for (const LayerSurveyRow& r : rows) {
    EXPECT_EQ(r.holds_fraction, 1.0);
    EXPECT_EQ(r.mean_tightness, 0.0);
  }
}

TEST(ReluSurvey, IdentityLayerTightness) {
  const DenseLayer id(Tensor::identity(3), Tensor({3}), Activation::ReLU);
  const ContractivityCheck tight = relu_contractivity_check(id, Tensor::vector({1.0, 2.0, 0.5}),
                                                            Tensor::vector({0.1, 0.2, 0.3}));
  EXPECT_NEAR(tight.lhs / tight.rhs, 1.0, 1e-12);
  const ContractivityCheck loose = relu_contractivity_check(id, Tensor::vector({1.0, -2.0, 0.5}),
                                                            Tensor::vector({0.1, 0.2, 0.3}));
  EXPECT_LT(loose.lhs / loose.rhs, 1.0);
}

TEST(ReluSurvey, TrainedModelHoldsEverywhere) {
  const Dataset d = make_two_moons(200, 0.1, 3);
  ArchitectureSpec arch;
  arch.augment_dims = 2;
  arch.blocks = {ResidualBlock{1.0, 2}, NeuralOdeBlock{SolverConfig{}}, RevBlock{1}};
  Classifier m = build_classifier(arch, 4);
  TrainConfig c;
  c.epochs = 5;
  train(m, d, c);
  const auto rows = relu_bound_survey(m, d.slice(0, 40), 1000, 9);
  ASSERT_EQ(rows.size(), 4u);
  for (const LayerSurveyRow& r : rows) {
    EXPECT_EQ(r.holds_fraction, 1.0);
    EXPECT_GT(r.mean_tightness, 0.0);
    EXPECT_LE(r.mean_tightness, 1.0);
  }
}

namespace {

SweepSpec small_sweep(std::vector<double> hs) {
  SweepSpec s;
  s.architecture.width = 8;
  s.depth = 2;
  s.step_sizes = std::move(hs);
  s.eps = {0.1, 0.3};
  s.budget.epochs = 3;
  s.budget.optimizer = AdamConfig{1e-2};
  s.model_seed = 5;
  return s;
}

}  // namespace

TEST(StepSizeSweep, BaselineRowAndReproducibility) {
  const Dataset train_data = make_two_moons(100, 0.1, 1);
  const Dataset test_data = make_two_moons(40, 0.1, 2);
  ArchitectureSpec arch;
  arch.blocks = {ResidualBlock{1.0, 1}};
  const Classifier sur = build_classifier(arch, 1);
  const ClipRange clip{-2.0, 3.0};
  const SweepResult a = step_size_sweep(small_sweep({1.0}), train_data, test_data, sur, clip);
  ASSERT_EQ(a.rows.size(), 1u);
  EXPECT_EQ(a.rows[0].h, 1.0);
  EXPECT_EQ(a.rows[0].adversarial_accuracy.size(), 2u);
  EXPECT_EQ(a.chance, 0.5);
  const SweepResult b = step_size_sweep(small_sweep({1.0, 1e-3}), train_data, test_data, sur, clip);
  const SweepResult c = step_size_sweep(small_sweep({1.0, 1e-3}), train_data, test_data, sur, clip);
  std::ostringstream sb, sc;
  write_sweep_csv(sb, b);
  write_sweep_csv(sc, c);
  EXPECT_EQ(sb.str(), sc.str());
  for (const SweepRow& r : b.rows) {
    EXPECT_EQ(r.converged, r.clean_accuracy >= 0.6);
    for (double acc : r.adversarial_accuracy) EXPECT_TRUE(acc >= 0.0 && acc <= 1.0);
  }
  EXPECT_THROW(step_size_sweep(small_sweep({0.1, 1.0}), train_data, test_data, sur, clip), ContractError);
  EXPECT_THROW(step_size_sweep(small_sweep({}), train_data, test_data, sur, clip), ContractError);
}

TEST(RobustnessGap, IdenticalModelsHaveZeroGap) {
  ArchitectureSpec arch;
  arch.blocks = {ResidualBlock{1.0, 1}};
  const Classifier m = build_classifier(arch, 3);
  AttackConfig fg, pg;
  fg.kind = FgsmConfig{0.2};
  pg.kind = PgdConfig{0.2, 0.05, 5, true};
  fg.clip = pg.clip = {-2.0, 3.0};
  const auto rows = robustness_gap(m, m, make_two_moons(30, 0.1, 1), {fg, pg}, 4);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].attack, "clean");
  EXPECT_EQ(rows[0].eps, 0.0);
  for (const GapRow& r : rows) EXPECT_EQ(r.gap(), 0.0);
  std::ostringstream os;
  write_gap_csv(os, rows, "node", "resnet");
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "attack,gradient,eps,node_acc,resnet_acc,gap");
}
