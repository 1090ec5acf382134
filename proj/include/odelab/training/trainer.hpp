#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "odelab/models/classifier.hpp"
#include "odelab/netcore/parallel.hpp"
#include "odelab/training/dataset.hpp"
#include "odelab/training/loss.hpp"
#include "odelab/training/optimizer.hpp"

namespace odelab {

struct TrainConfig {
  OptimizerConfig optimizer = AdamConfig{};
  int epochs = 200;
  std::size_t batch_size = 32;
  int lr_halving_period = 50;  // 0 disables the schedule
  std::uint64_t seed = 0;
  ForwardOptions forward;

  void validate() const {
    odelab::validate(optimizer);
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr_halving_period < 0) throw ConfigError("lr_halving_period must be non-negative");
  }

  /// Learning rate in effect during `epoch` (1-based).
  double lr_at(int epoch) const {
    const double base = learning_rate(optimizer);
    if (lr_halving_period == 0) return base;
    return std::ldexp(base, -((epoch - 1) / lr_halving_period));
  }
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean per-sample loss over the epoch's batches
  double train_acc = 0.0;
  std::optional<double> test_acc;
};

using History = std::vector<EpochRecord>;

inline void write_history_csv(std::ostream& os, const History& h) {
  const auto old = os.precision(17);
  os << "epoch,lr,loss,train_acc,test_acc\n";
  for (const EpochRecord& r : h) {
    os << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.train_acc << ',';
    if (r.test_acc) os << *r.test_acc;
    os << '\n';
  }
  os.precision(old);
}

/// Sample order for one epoch; a pure function of (seed, epoch).
inline std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

inline std::vector<int> predict_labels(const Classifier& model, const Dataset& data, const ForwardOptions& opts = {}) {
  std::vector<int> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    try {
      out[i] = argmax(classifier_forward(model, data.inputs[i], nullptr, opts));
    } catch (Error& e) {
      e.add_context("sample " + std::to_string(i));
      throw;
    }
  });
  return out;
}

inline double accuracy(const Classifier& model, const Dataset& data, const ForwardOptions& opts = {}) {
  if (data.empty()) return 0.0;
  const std::vector<int> pred = predict_labels(model, data, opts);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

/// Mini-batch training with batch-averaged gradients. Per-sample gradients are
/// reduced in sample order, so results do not depend on the thread count.
inline History train(Classifier& model, const Dataset& data, const TrainConfig& config,
                     const Dataset* test = nullptr) {
  config.validate();
  data.validate();
  if (!data.empty() && data.input_dim() != model.input_dim()) {
    throw DimensionError("dataset has " + std::to_string(data.input_dim()) + " features, model expects " +
                         std::to_string(model.input_dim()));
  }
  History history;
  if (data.empty() || config.epochs == 0) return history;
  Optimizer opt(config.optimizer);
  const std::vector<Tensor*> params = model.parameters();
  std::vector<Tensor> sum = model.zero_gradients();
  std::vector<LossGradient> slots(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    const std::vector<std::size_t> perm = shuffle_permutation(data.size(), config.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
      const std::size_t bs = std::min(config.batch_size, perm.size() - start);
      parallel_for(bs, [&](std::size_t j) {
        const std::size_t idx = perm[start + j];
        try {
          slots[j] = loss_and_gradient(model, data.inputs[idx], data.labels[idx], config.forward);
        } catch (Error& e) {
          e.add_context("epoch " + std::to_string(epoch) + ", sample " + std::to_string(idx));
          throw;
        }
      });
      for (Tensor& t : sum) t.fill(0.0);
      for (std::size_t j = 0; j < bs; ++j) {
        loss_sum += slots[j].loss;
        for (std::size_t p = 0; p < sum.size(); ++p) vec::axpy(1.0, slots[j].grads.params[p].data(), sum[p].data());
      }
      const double scale = 1.0 / static_cast<double>(bs);
      for (Tensor& t : sum) {
        for (double& v : t.values()) v *= scale;
      }
      opt.step(params, sum, lr);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(data.size());
    rec.train_acc = accuracy(model, data, config.forward);
    if (test) rec.test_acc = accuracy(model, *test, config.forward);
    history.push_back(rec);
  }
  return history;
}

}  // namespace odelab
