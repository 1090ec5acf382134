#pragma once

#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "odelab/attacks/boundary.hpp"
#include "odelab/attacks/gradient_attacks.hpp"
#include "odelab/models/classifier.hpp"
#include "odelab/netcore/parallel.hpp"
#include "odelab/training/dataset.hpp"

namespace odelab {

using AttackKind = std::variant<FgsmConfig, PgdConfig, Di2FgsmConfig, BoundaryConfig>;

inline std::string attack_name(const AttackKind& k) {
  struct Visitor {
    std::string operator()(const FgsmConfig&) const { return "fgsm"; }
    std::string operator()(const PgdConfig&) const { return "pgd"; }
    std::string operator()(const Di2FgsmConfig&) const { return "di2fgsm"; }
    std::string operator()(const BoundaryConfig&) const { return "boundary"; }
  };
  return std::visit(Visitor{}, k);
}

/// Nominal budget: eps for gradient attacks, 0 for the boundary attack.
inline double attack_eps(const AttackKind& k) {
  if (const auto* f = std::get_if<FgsmConfig>(&k)) return f->eps;
  if (const auto* p = std::get_if<PgdConfig>(&k)) return p->eps;
  if (const auto* d = std::get_if<Di2FgsmConfig>(&k)) return d->eps;
  return 0.0;
}

inline std::string to_string(OdeMode m) { return m == OdeMode::Adaptive ? "adaptive" : "fixed_grid"; }

inline OdeMode ode_mode_from_string(const std::string& s) {
  if (s == "adaptive") return OdeMode::Adaptive;
  if (s == "fixed_grid") return OdeMode::FixedGrid;
  throw ConfigError("unknown gradient mode '" + s + "' (expected adaptive or fixed_grid)");
}

struct AttackConfig {
  AttackKind kind = FgsmConfig{};
  ClipRange clip;
  /// How white-box gradients pass through NeuralODE blocks.
  OdeMode gradient_mode = OdeMode::Adaptive;
  int fixed_grid_steps = 20;

  void validate() const {
    std::visit([](const auto& k) { odelab::validate(k); }, kind);
    clip.validate();
    if (fixed_grid_steps < 1) throw ConfigError("fixed_grid_steps must be >= 1");
  }

  ForwardOptions gradient_options() const {
    ForwardOptions o;
    o.ode_mode = gradient_mode;
    o.fixed_grid_steps = fixed_grid_steps;
    return o;
  }
};

struct AttackRow {
  std::size_t index = 0;
  int true_label = 0;
  int clean_label = 0;
  int adversarial_label = 0;
  bool success = false;  // adversarial prediction differs from the true label
  double perturbation_norm = 0.0;  // L-inf for gradient attacks, L2 for boundary
  int steps = 0;  // gradient iterations or oracle queries
};

struct AttackReport {
  std::string model;
  std::string attack;
  std::string gradient_mode;
  double eps = 0.0;
  std::vector<AttackRow> rows;

  double clean_accuracy() const {
    if (rows.empty()) return 0.0;
    std::size_t n = 0;
    for (const AttackRow& r : rows) n += r.clean_label == r.true_label;
    return static_cast<double>(n) / static_cast<double>(rows.size());
  }

  /// Fraction of samples still correctly classified after the attack.
  double adversarial_accuracy() const {
    if (rows.empty()) return 0.0;
    std::size_t n = 0;
    for (const AttackRow& r : rows) n += r.adversarial_label == r.true_label;
    return static_cast<double>(n) / static_cast<double>(rows.size());
  }
};

inline constexpr const char* kAttackCsvHeader =
    "model,attack,gradient,eps,row,true_label,clean_label,adversarial_label,success,perturbation_norm,steps,"
    "clean_accuracy,adversarial_accuracy";

/// One row per sample, then an aggregate row carrying the accuracies. Several
/// reports can share one file by passing header = false after the first.
inline void write_attack_csv(std::ostream& os, const AttackReport& r, bool header = true) {
  const auto old = os.precision(17);
  if (header) os << kAttackCsvHeader << '\n';
  const std::string prefix = r.model + ',' + r.attack + ',' + r.gradient_mode + ',';
  double norm_sum = 0.0, steps_sum = 0.0;
  std::size_t successes = 0;
  for (const AttackRow& a : r.rows) {
    os << prefix << r.eps << ',' << a.index << ',' << a.true_label << ',' << a.clean_label << ','
       << a.adversarial_label << ',' << (a.success ? 1 : 0) << ',' << a.perturbation_norm << ',' << a.steps << ",,\n";
    norm_sum += a.perturbation_norm;
    steps_sum += a.steps;
    successes += a.success;
  }
  const double n = r.rows.empty() ? 1.0 : static_cast<double>(r.rows.size());
  os << prefix << r.eps << ",aggregate,,,," << successes << ',' << norm_sum / n << ',' << steps_sum / n << ','
     << r.clean_accuracy() << ',' << r.adversarial_accuracy() << '\n';
  os.precision(old);
}

inline nlohmann::json attack_summary_json(const AttackReport& r) {
  return {{"model", r.model},
          {"attack", r.attack},
          {"gradient", r.gradient_mode},
          {"eps", r.eps},
          {"samples", r.rows.size()},
          {"clean_accuracy", r.clean_accuracy()},
          {"adversarial_accuracy", r.adversarial_accuracy()}};
}

/// Per-sample generator derived from the run seed and the sample index.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

/// Crafts an adversarial input against `source` and returns it with its L-inf
/// or L2 distance and step count.
inline AttackRow craft_and_score(const Classifier& source, const Classifier& target, const Tensor& x, int label,
                                 const AttackConfig& config, std::mt19937_64& rng, std::size_t index) {
  AttackRow row;
  row.index = index;
  row.true_label = label;
  row.clean_label = argmax(classifier_forward(target, x));
  const ForwardOptions opts = config.gradient_options();
  Tensor adv;
  if (const auto* f = std::get_if<FgsmConfig>(&config.kind)) {
    adv = fgsm(source, x, label, *f, config.clip, opts);
    row.steps = 1;
  } else if (const auto* p = std::get_if<PgdConfig>(&config.kind)) {
    adv = pgd(source, x, label, *p, config.clip, rng, opts);
    row.steps = p->iters;
  } else if (const auto* d = std::get_if<Di2FgsmConfig>(&config.kind)) {
    adv = di2_fgsm(source, x, label, *d, config.clip, rng, opts);
    row.steps = d->iters;
  } else {
    const auto& b = std::get<BoundaryConfig>(config.kind);
    if (row.clean_label != label) {
      adv = x;
    } else {
      BoundaryResult res = boundary_attack(decision_oracle(source), x, label, b, config.clip, rng);
      adv = res.x_adv;
      row.steps = res.queries;
    }
  }
  row.adversarial_label = argmax(classifier_forward(target, adv));
  row.success = row.adversarial_label != label;
  const Tensor delta = adv - x;
  row.perturbation_norm = std::holds_alternative<BoundaryConfig>(config.kind) ? norm2(delta) : norm_inf(delta);
  return row;
}

/// Attacks `source` on every sample and scores the results on `target`.
inline AttackReport run_transfer(const Classifier& source, const Classifier& target, const Dataset& data,
                                 const AttackConfig& config, std::uint64_t seed, const std::string& model_name) {
  config.validate();
  if (source.input_dim() != target.input_dim()) throw DimensionError("surrogate and target input spaces differ");
  if (!data.empty() && data.input_dim() != target.input_dim()) {
    throw DimensionError("dataset does not match the model input dimension");
  }
  AttackReport report;
  report.model = model_name;
  report.attack = attack_name(config.kind);
  report.gradient_mode = to_string(config.gradient_mode);
  report.eps = attack_eps(config.kind);
  report.rows.resize(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    std::mt19937_64 rng = sample_rng(seed, i);
    try {
      report.rows[i] = craft_and_score(source, target, data.inputs[i], data.labels[i], config, rng, i);
    } catch (Error& e) {
      e.add_context("sample " + std::to_string(i));
      throw;
    }
  });
  return report;
}

inline AttackReport run_attack(const Classifier& model, const Dataset& data, const AttackConfig& config,
                               std::uint64_t seed, const std::string& model_name = "model") {
  return run_transfer(model, model, data, config, seed, model_name);
}

/// FGSM crafted on the surrogate, evaluated on the target.
inline AttackReport transfer_attack(const Classifier& surrogate, const Classifier& target, const Dataset& data,
                                    const FgsmConfig& fgsm_config, const ClipRange& clip,
                                    const std::string& model_name = "target") {
  AttackConfig c;
  c.kind = fgsm_config;
  c.clip = clip;
  AttackReport r = run_transfer(surrogate, target, data, c, 0, model_name);
  r.attack = "transfer_fgsm";
  return r;
}

}  // namespace odelab
