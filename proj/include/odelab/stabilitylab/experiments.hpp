#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odelab/attacks/report.hpp"
#include "odelab/models/classifier.hpp"
#include "odelab/training/trainer.hpp"

namespace odelab {

struct SweepRow {
  double h = 0.0;
  double clean_accuracy = 0.0;
  std::vector<double> adversarial_accuracy;  // one per eps
  double final_loss = 0.0;
  bool converged = false;
};

struct SweepResult {
  std::vector<double> eps;
  double chance = 0.5;
  std::vector<SweepRow> rows;
};

struct SweepSpec {
  ArchitectureSpec architecture;  // its blocks are replaced by Residual(h, depth)
  int depth = 4;
  std::vector<double> step_sizes;
  std::vector<double> eps;
  TrainConfig budget;
  std::uint64_t model_seed = 0;
};

/// Trains one residual model per step size under the same budget and scores
/// clean accuracy plus FGSM transferred from `surrogate`.
inline SweepResult step_size_sweep(const SweepSpec& spec, const Dataset& train_data, const Dataset& test_data,
                                   const Classifier& surrogate, const ClipRange& clip) {
  if (spec.step_sizes.empty()) throw ContractError("sweep needs at least one step size");
  for (std::size_t i = 0; i < spec.step_sizes.size(); ++i) {
    if (!(spec.step_sizes[i] > 0.0)) throw ContractError("sweep step sizes must be positive");
    if (i > 0 && !(spec.step_sizes[i] < spec.step_sizes[i - 1])) {
      throw ContractError("sweep step sizes must be strictly decreasing");
    }
  }
  SweepResult out;
  out.eps = spec.eps;
  out.chance = 1.0 / static_cast<double>(test_data.class_count);
  for (double h : spec.step_sizes) {
    ArchitectureSpec arch = spec.architecture;
    arch.blocks = {ResidualBlock{h, spec.depth}};
    Classifier model = build_classifier(arch, spec.model_seed);
    const History hist = train(model, train_data, spec.budget);
    SweepRow row;
    row.h = h;
    row.final_loss = hist.empty() ? 0.0 : hist.back().loss;
    row.clean_accuracy = accuracy(model, test_data);
    for (double e : spec.eps) {
      row.adversarial_accuracy.push_back(transfer_attack(surrogate, model, test_data, {e}, clip).adversarial_accuracy());
    }
    row.converged = row.clean_accuracy >= out.chance + 0.1;
    out.rows.push_back(std::move(row));
  }
  return out;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& r) {
  const auto old = os.precision(17);
  os << "h,clean_acc";
  for (double e : r.eps) os << ",adv_acc@" << e;
  os << ",converged,final_loss\n";
  for (const SweepRow& row : r.rows) {
    os << row.h << ',' << row.clean_accuracy;
    for (double a : row.adversarial_accuracy) os << ',' << a;
    os << ',' << (row.converged ? "true" : "false") << ',' << row.final_loss << '\n';
  }
  os.precision(old);
}

inline nlohmann::json sweep_json(const SweepResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const SweepRow& row : r.rows) {
    rows.push_back({{"h", row.h},
                    {"clean_accuracy", row.clean_accuracy},
                    {"adversarial_accuracy", row.adversarial_accuracy},
                    {"converged", row.converged},
                    {"final_loss", row.final_loss}});
  }
  return {{"eps", r.eps}, {"chance", r.chance}, {"rows", rows}};
}

struct GapRow {
  std::string attack;
  std::string gradient;
  double eps = 0.0;
  double accuracy_a = 0.0;
  double accuracy_b = 0.0;

  double gap() const { return accuracy_a - accuracy_b; }
};

/// Adversarial accuracy of two models under each attack, led by clean rows at eps = 0.
inline std::vector<GapRow> robustness_gap(const Classifier& a, const Classifier& b, const Dataset& data,
                                          const std::vector<AttackConfig>& attacks, std::uint64_t seed) {
  std::vector<GapRow> rows;
  rows.push_back({"clean", "", 0.0, accuracy(a, data), accuracy(b, data)});
  for (const AttackConfig& c : attacks) {
    const AttackReport ra = run_attack(a, data, c, seed, "a");
    const AttackReport rb = run_attack(b, data, c, seed, "b");
    rows.push_back({ra.attack, ra.gradient_mode, ra.eps, ra.adversarial_accuracy(), rb.adversarial_accuracy()});
  }
  return rows;
}

inline void write_gap_csv(std::ostream& os, const std::vector<GapRow>& rows, const std::string& name_a,
                          const std::string& name_b) {
  const auto old = os.precision(17);
  os << "attack,gradient,eps," << name_a << "_acc," << name_b << "_acc,gap\n";
  for (const GapRow& r : rows) {
    os << r.attack << ',' << r.gradient << ',' << r.eps << ',' << r.accuracy_a << ',' << r.accuracy_b << ',' << r.gap()
       << '\n';
  }
  os.precision(old);
}

}  // namespace odelab
