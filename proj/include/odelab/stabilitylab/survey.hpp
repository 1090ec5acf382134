#pragma once

#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "odelab/models/classifier.hpp"
#include "odelab/netcore/dense.hpp"
#include "odelab/training/dataset.hpp"

namespace odelab {

struct LayerSurveyRow {
  std::size_t block = 0;
  std::size_t field = 0;
  std::size_t layer = 0;
  int trials = 0;
  double holds_fraction = 0.0;
  double mean_tightness = 0.0;  // mean of lhs / rhs, 0 when rhs is 0
};

/// Checks |g(x) - g(x + eps)| <= |W| |eps| for every ReLU layer of every field,
/// at inputs the layer actually sees when the model runs on `samples`.
/// Perturbations are Gaussian with norm scale * (1 + |x|).
inline std::vector<LayerSurveyRow> relu_bound_survey(const Classifier& model, const Dataset& samples, int trials,
                                                     std::uint64_t seed, double scale = 0.1) {
  if (trials < 1) throw ContractError("survey needs at least one trial");
  if (samples.empty()) throw ContractError("survey needs at least one sample");
  // Record the inputs seen by each layer of each field.
  struct Key {
    std::size_t block, field, layer;
  };
  std::vector<Key> keys;
  std::vector<std::vector<std::vector<double>>> seen;
  auto slot = [&](std::size_t b, std::size_t f, std::size_t l) -> std::vector<std::vector<double>>& {
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (keys[k].block == b && keys[k].field == f && keys[k].layer == l) return seen[k];
    }
    keys.push_back({b, f, l});
    seen.emplace_back();
    return seen.back();
  };
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    const BlockSpec& blk = model.blocks()[b];
    for (std::size_t f = 0; f < blk.fields.size(); ++f) {
      for (std::size_t l = 0; l < blk.fields[f].layers().size(); ++l) {
        if (blk.fields[f].layers()[l].activation() == Activation::ReLU) slot(b, f, l);
      }
    }
  }
  for (const Tensor& x : samples.inputs) {
    ClassifierTape tape;
    classifier_forward(model, x, &tape);
    for (std::size_t b = 0; b < tape.blocks.size(); ++b) {
      std::vector<const GradientTape*> evals;
      for (const GradientTape& g : tape.blocks[b].evals) evals.push_back(&g);
      for (const auto& stage : tape.blocks[b].solve.stages) {
        for (const GradientTape& g : stage) evals.push_back(&g);
      }
      for (const GradientTape* g : evals) {
        const BlockSpec& blk = model.blocks()[b];
        const std::size_t f = &g->field() == &blk.fields[0] ? 0 : 1;
        const auto& layers = g->field().layers();
        std::vector<double> in = g->input();
        for (std::size_t l = 0; l < layers.size(); ++l) {
          if (layers[l].activation() == Activation::ReLU) slot(b, f, l).push_back(in);
          in = g->pre_activations()[l];
          for (double& v : in) v = layers[l].activate(v);
        }
      }
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<LayerSurveyRow> rows;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const DenseLayer& layer = model.blocks()[keys[k].block].fields[keys[k].field].layers()[keys[k].layer];
    LayerSurveyRow row{keys[k].block, keys[k].field, keys[k].layer, trials, 0.0, 0.0};
    if (seen[k].empty()) seen[k].push_back(std::vector<double>(layer.in_dim(), 0.0));
    std::uniform_int_distribution<std::size_t> pick(0, seen[k].size() - 1);
    int holds = 0;
    double tight = 0.0;
    for (int t = 0; t < trials; ++t) {
      const Tensor x = Tensor::vector(seen[k][pick(rng)]);
      Tensor eps({layer.in_dim()});
      for (double& v : eps.values()) v = gauss(rng);
      const double target = scale * (1.0 + norm2(x)) / std::max(norm2(eps), 1e-300);
      for (double& v : eps.values()) v *= target;
      const ContractivityCheck c = relu_contractivity_check(layer, x, eps);
      holds += c.holds;
      tight += c.rhs > 0.0 ? c.lhs / c.rhs : 0.0;
    }
    row.holds_fraction = static_cast<double>(holds) / trials;
    row.mean_tightness = tight / trials;
    rows.push_back(row);
  }
  return rows;
}

inline void write_survey_csv(std::ostream& os, const std::vector<LayerSurveyRow>& rows) {
  const auto old = os.precision(17);
  os << "block,field,layer,trials,holds_fraction,mean_tightness\n";
  for (const LayerSurveyRow& r : rows) {
    os << r.block << ',' << r.field << ',' << r.layer << ',' << r.trials << ',' << r.holds_fraction << ','
       << r.mean_tightness << '\n';
  }
  os.precision(old);
}

}  // namespace odelab
