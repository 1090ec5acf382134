#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "odelab/models/checkpoint.hpp"
#include "odelab/training/dataset.hpp"
#include "odelab/training/loss.hpp"
#include "odelab/training/optimizer.hpp"
#include "odelab/training/trainer.hpp"

using namespace odelab;
namespace fs = std::filesystem;

namespace {

void put_be32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

struct IdxFiles {
  fs::path images, labels;
};

IdxFiles write_idx(const std::string& stem, std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                   std::uint32_t label_count, std::uint32_t image_magic = 0x803, std::size_t drop_bytes = 0) {
  const fs::path dir = fs::temp_directory_path() / "odelab_idx_test";
  fs::create_directories(dir);
  IdxFiles f{dir / (stem + "-images.idx"), dir / (stem + "-labels.idx")};
  std::string img;
  {
    std::ostringstream os;
    put_be32(os, image_magic);
    put_be32(os, count);
    put_be32(os, rows);
    put_be32(os, cols);
    for (std::uint32_t i = 0; i < count; ++i) {
      for (std::uint32_t p = 0; p < rows * cols; ++p) os.put(static_cast<char>((i * 7 + p * 13) % 256));
    }
    img = os.str();
  }
  img.resize(img.size() - drop_bytes);
  std::ofstream(f.images, std::ios::binary) << img;
  std::ofstream lab(f.labels, std::ios::binary);
  put_be32(lab, 0x801);
  put_be32(lab, label_count);
  for (std::uint32_t i = 0; i < label_count; ++i) lab.put(static_cast<char>(i % 10));
  return f;
}

Dataset separable_toy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Dataset d;
  while (d.size() < n) {
    const double x = u(rng), y = u(rng);
    if (std::abs(x + 0.5 * y) < 0.2) continue;
    d.inputs.push_back(Tensor::vector({x, y}));
    d.labels.push_back(x + 0.5 * y > 0 ? 1 : 0);
  }
  d.value_range = {-1.0, 1.0};
  return d;
}

class ThreadsEnv {
 public:
  explicit ThreadsEnv(const char* v) { setenv(kThreadsEnv, v, 1); }
  ~ThreadsEnv() { unsetenv(kThreadsEnv); }
};

}  // namespace

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(Tensor({10}), 3), std::log(10.0), 1e-12);
  EXPECT_LE(cross_entropy(Tensor::vector({100.0, 0.0}), 0), 1e-12);
  EXPECT_GE(cross_entropy(Tensor::vector({100.0, 0.0}), 0), 0.0);
  const double p0 = std::exp(1.0) / (std::exp(1.0) + std::exp(3.0));
  EXPECT_NEAR(cross_entropy(Tensor::vector({1.0, 3.0}), 0), -std::log(p0), 1e-12);
  EXPECT_NEAR(cross_entropy(Tensor::vector({1.0, 3.0}), 0), 2.1269, 1e-4);
  EXPECT_TRUE(std::isfinite(cross_entropy(Tensor::vector({1000.0, -1000.0}), 1)));
}

TEST(CrossEntropy, RejectsBadLabel) {
  EXPECT_THROW(cross_entropy(Tensor::vector({1.0, 2.0}), 2), ContractError);
  EXPECT_THROW(cross_entropy(Tensor::vector({1.0, 2.0}), -1), ContractError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z({4});
    for (double& v : z.values()) v = nd(rng);
    const int label = trial % 4;
    const Tensor g = cross_entropy_gradient(z, label);
    for (std::size_t i = 0; i < 4; ++i) {
      Tensor zp = z, zm = z;
      zp[i] += 1e-6;
      zm[i] -= 1e-6;
      EXPECT_NEAR(g[i], (cross_entropy(zp, label) - cross_entropy(zm, label)) / 2e-6, 1e-8);
    }
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor w = Tensor::vector({0.5, -0.5});
  std::vector<Tensor*> params{&w};
  std::vector<Tensor> grads{Tensor::vector({1.0, -1.0})};
  AdamState s;
  adam_step(params, grads, s, AdamConfig{}, 1e-3);
  EXPECT_NEAR(w[0] - 0.5, -1e-3, 1e-10);
  EXPECT_NEAR(w[1] + 0.5, 1e-3, 1e-10);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, ZeroGradientKeepsParametersAndDecaysMoments) {
  Tensor w = Tensor::vector({0.25});
  std::vector<Tensor*> params{&w};
  AdamState s;
  adam_step(params, std::vector<Tensor>{Tensor::vector({2.0})}, s, AdamConfig{}, 1e-3);
  const double after_first = w[0];
  const double m = s.m[0][0], v = s.v[0][0];
  adam_step(params, std::vector<Tensor>{Tensor::vector({0.0})}, s, AdamConfig{}, 1e-3);
  EXPECT_EQ(w[0], after_first);
  EXPECT_DOUBLE_EQ(s.m[0][0], 0.9 * m);
  EXPECT_DOUBLE_EQ(s.v[0][0], 0.999 * v);

  Tensor fresh = Tensor::vector({1.0, 2.0});
  std::vector<Tensor*> fp{&fresh};
  AdamState s2;
  adam_step(fp, std::vector<Tensor>{Tensor({2})}, s2, AdamConfig{}, 1e-3);
  EXPECT_EQ(fresh, Tensor::vector({1.0, 2.0}));
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  Tensor w = Tensor::vector({0.0});
  std::vector<Tensor*> params{&w};
  AdamState s;
  double prev = 0.0, delta = 0.0;
  for (int i = 0; i < 5000; ++i) {
    adam_step(params, std::vector<Tensor>{Tensor::vector({0.3})}, s, AdamConfig{}, 1e-3);
    delta = prev - w[0];
    prev = w[0];
  }
  EXPECT_NEAR(delta, 1e-3, 1e-9);
}

TEST(Adam, ShapeMismatch) {
  Tensor w({2});
  std::vector<Tensor*> params{&w};
  AdamState s;
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{Tensor({3})}, s, AdamConfig{}, 1e-3), DimensionError);
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{}, s, AdamConfig{}, 1e-3), DimensionError);
}

TEST(Sgd, PlainGradientStep) {
  Tensor w = Tensor::vector({1.0, 1.0});
  std::vector<Tensor*> params{&w};
  sgd_step(params, std::vector<Tensor>{Tensor::vector({2.0, -4.0})}, 0.25);
  EXPECT_EQ(w, Tensor::vector({0.5, 2.0}));
  EXPECT_THROW(Optimizer(SgdConfig{0.0}), ConfigError);
}

TEST(TwoMoons, NoiselessPointsLieOnArcs) {
  const Dataset d = make_two_moons(400, 0.0, 3);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d.inputs[i][0], y = d.inputs[i][1];
    if (d.labels[i] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
      EXPECT_GE(y, 0.0);
    } else {
      EXPECT_NEAR((x - 1.0) * (x - 1.0) + (y - 0.5) * (y - 0.5), 1.0, 1e-12);
      EXPECT_LE(y, 0.5);
    }
  }
}

TEST(TwoMoons, BalancedDeterministicAndInRange) {
  const Dataset a = make_two_moons(1000, 0.1, 9);
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 0), 500);
  EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), 1), 500);
  EXPECT_NO_THROW(a.validate());
  const Dataset b = make_two_moons(1000, 0.1, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.inputs[i], b.inputs[i]);
  const Dataset c = make_two_moons(1000, 0.1, 10);
  EXPECT_FALSE(a.inputs[0] == c.inputs[0]);
  EXPECT_THROW(make_two_moons(999, 0.1, 1), ContractError);
}

TEST(Circles, RadiiAndBalance) {
  const Dataset d = make_circles(200, 0.0, 0.5, 1);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_NEAR(norm2(d.inputs[i]), d.labels[i] == 0 ? 1.0 : 0.5, 1e-12);
  }
  EXPECT_EQ(std::count(d.labels.begin(), d.labels.end(), 1), 100);
  EXPECT_THROW(make_circles(201, 0.0, 0.5, 1), ContractError);
}

TEST(LoadIdx, ReadsAndScales) {
  const IdxFiles f = write_idx("small", 5, 2, 3, 5);
  const Dataset d = load_idx(f.images, f.labels, std::nullopt, {-1.0, 1.0});
  ASSERT_EQ(d.size(), 5u);
  EXPECT_EQ(d.input_dim(), 6u);
  EXPECT_EQ(d.labels[3], 3);
  // Pixel (i=2, p=4) is (14 + 52) % 256 = 66.
  EXPECT_NEAR(d.inputs[2][4], -1.0 + 2.0 * 66.0 / 255.0, 1e-15);
  EXPECT_NO_THROW(d.validate());
  EXPECT_EQ(load_idx(f.images, f.labels, 0).size(), 0u);
  EXPECT_EQ(load_idx(f.images, f.labels, 2).size(), 2u);
}

TEST(LoadIdx, StandardSizedFileWithLimit) {
  const IdxFiles f = write_idx("t10k", 10000, 28, 28, 10000);
  // Header fields checked independently of the loader.
  std::ifstream in(f.images, std::ios::binary);
  unsigned char h[16];
  in.read(reinterpret_cast<char*>(h), 16);
  EXPECT_EQ(h[2], 0x08);
  EXPECT_EQ(h[3], 0x03);
  EXPECT_EQ((h[4] << 24) | (h[5] << 16) | (h[6] << 8) | h[7], 10000);
  EXPECT_EQ(h[11], 28);
  const Dataset d = load_idx(f.images, f.labels, 2000);
  ASSERT_EQ(d.size(), 2000u);
  for (const Tensor& x : d.inputs) {
    ASSERT_EQ(x.size(), 784u);
    for (double v : x.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(LoadIdx, Errors) {
  const IdxFiles bad_magic = write_idx("magic", 3, 2, 2, 3, 0x802);
  EXPECT_THROW(load_idx(bad_magic.images, bad_magic.labels), FormatError);
  const IdxFiles mismatch = write_idx("mismatch", 3, 2, 2, 4);
  EXPECT_THROW(load_idx(mismatch.images, mismatch.labels), FormatError);
  const IdxFiles truncated = write_idx("trunc", 3, 2, 2, 3, 0x803, 3);
  EXPECT_THROW(load_idx(truncated.images, truncated.labels), IoError);
  EXPECT_THROW(load_idx("/nonexistent/a", "/nonexistent/b"), IoError);
}

TEST(Shuffle, ReproducibleFromSeed) {
  const auto a = shuffle_permutation(100, 42, 3);
  EXPECT_EQ(a, shuffle_permutation(100, 42, 3));
  EXPECT_NE(a, shuffle_permutation(100, 42, 4));
  EXPECT_NE(a, shuffle_permutation(100, 43, 3));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  ArchitectureSpec arch;
  arch.blocks = {ResidualBlock{1.0, 2}};
  Classifier m = build_classifier(arch, 3);
  const std::string before = checkpoint_dump(m);
  TrainConfig c;
  c.epochs = 0;
  EXPECT_TRUE(train(m, make_two_moons(100, 0.1, 1), c).empty());
  EXPECT_EQ(checkpoint_dump(m), before);
}

TEST(Train, LossDecreasesOnSeparableToySet) {
  ArchitectureSpec arch;
  arch.width = 8;
  arch.blocks = {ResidualBlock{1.0, 1}};
  Classifier m = build_classifier(arch, 17);
  TrainConfig c;
  c.optimizer = AdamConfig{1e-2};
  c.epochs = 20;
  c.seed = 5;
  const History h = train(m, separable_toy(256, 2), c);
  ASSERT_EQ(h.size(), 20u);
  for (std::size_t e = 1; e < h.size(); ++e) EXPECT_LT(h[e].loss, h[e - 1].loss) << "epoch " << h[e].epoch;
  EXPECT_GE(h.back().train_acc, 0.95);
}

TEST(Train, LearningRateHalvesEveryPeriod) {
  TrainConfig c;
  c.optimizer = AdamConfig{0.01};
  c.lr_halving_period = 3;
  EXPECT_EQ(c.lr_at(1), 0.01);
  EXPECT_EQ(c.lr_at(3), 0.01);
  EXPECT_EQ(c.lr_at(4), 0.005);
  EXPECT_EQ(c.lr_at(7), 0.0025);
  c.lr_halving_period = 0;
  EXPECT_EQ(c.lr_at(500), 0.01);
}

TEST(Train, DeterministicAcrossRunsAndThreadCounts) {
  ArchitectureSpec arch;
  arch.blocks = {NeuralOdeBlock{SolverConfig{}}};
  const Dataset d = make_two_moons(64, 0.1, 4);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.seed = 11;
  std::string out[3];
  const char* threads[3] = {"1", "1", "3"};
  for (int r = 0; r < 3; ++r) {
    ThreadsEnv env(threads[r]);
    Classifier m = build_classifier(arch, 2);
    std::ostringstream os;
    write_history_csv(os, train(m, d, c, &d));
    out[r] = os.str() + checkpoint_dump(m);
  }
  EXPECT_EQ(out[0], out[1]);
  EXPECT_EQ(out[0], out[2]);
}

TEST(Train, SolverFailureNamesSample) {
  SolverConfig s;
  s.max_steps = 1;
  ArchitectureSpec arch;
  arch.blocks = {NeuralOdeBlock{s}};
  Classifier m = build_classifier(arch, 2);
  TrainConfig c;
  c.epochs = 1;
  try {
    train(m, make_two_moons(10, 0.1, 1), c);
    FAIL() << "expected a budget error";
  } catch (const BudgetError& e) {
    EXPECT_NE(std::string(e.what()).find("sample"), std::string::npos) << e.what();
  }
}

TEST(Train, HistoryCsvLayout) {
  History h{{1, 0.001, 0.5, 0.75, 0.5}, {2, 0.001, 0.25, 1.0, std::nullopt}};
  std::ostringstream os;
  write_history_csv(os, h);
  EXPECT_EQ(os.str(), "epoch,lr,loss,train_acc,test_acc\n1,0.001,0.5,0.75,0.5\n2,0.001,0.25,1,\n");
}
