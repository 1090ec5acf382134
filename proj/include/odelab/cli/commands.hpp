#pragma once

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odelab/attacks/report.hpp"
#include "odelab/cli/artifacts.hpp"
#include "odelab/cli/experiment.hpp"
#include "odelab/cli/summary.hpp"
#include "odelab/models/checkpoint.hpp"
#include "odelab/stabilitylab/certify.hpp"
#include "odelab/stabilitylab/experiments.hpp"

namespace odelab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitContract = 1;
inline constexpr int kExitNumeric = 2;

struct RunRequest {
  std::string subcommand;
  std::string config_path;  // unused by report
  std::vector<std::string> overrides;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::string results_dir;  // report only
};

/// Provenance fields added to every JSON artifact.
inline nlohmann::json with_provenance(nlohmann::json j, const Experiment& ex) {
  j["run_seed"] = ex.seed();
  j["config"] = ex.echo();
  return j;
}

inline std::string json_text(const nlohmann::json& j) { return j.dump(1) + "\n"; }

/// A checkpointed model, or a fresh one trained per [train].
inline Classifier obtain_model(const Experiment& ex, const DataSplit& data, std::ostream& log) {
  const SectionView m = ex.section("model");
  const std::string path = m.str("checkpoint");
  if (!path.empty()) {
    Classifier model = load_checkpoint(path);
    if (model.input_dim() != data.test.input_dim() ||
        static_cast<int>(model.class_count()) != data.test.class_count) {
      throw DimensionError("checkpoint " + path + " does not match the dataset");
    }
    return model;
  }
  if (!ex.has("train")) throw ConfigError("[model] needs a checkpoint or the config needs a [train] section");
  Classifier model = build_classifier(build_architecture(ex, data.train), derive_seed(ex.seed(), "model.init"));
  log << "training " << m.str("name") << '\n';
  train(model, data.train, build_train_config(ex));
  return model;
}

inline void cmd_train(const Experiment& ex, ArtifactWriter& out, std::ostream& log) {
  ex.require({"dataset", "model", "train"});
  const DataSplit data = build_data(ex);
  const SectionView m = ex.section("model");
  Classifier model = m.str("checkpoint").empty()
                         ? build_classifier(build_architecture(ex, data.train), derive_seed(ex.seed(), "model.init"))
                         : load_checkpoint(m.str("checkpoint"));
  const TrainConfig cfg = build_train_config(ex);
  const History hist = train(model, data.train, cfg, &data.test);

  std::ostringstream csv;
  csv << csv_preamble(ex.seed(), ex.echo());
  write_history_csv(csv, hist);
  out.write("history.csv", csv.str());
  out.write("checkpoint.json", json_text(with_provenance(checkpoint_to_json(model), ex)));
  nlohmann::json summary = {{"model", m.str("name")},
                            {"epochs", hist.size()},
                            {"train_accuracy", accuracy(model, data.train)},
                            {"test_accuracy", accuracy(model, data.test)}};
  if (!hist.empty()) summary["final_loss"] = hist.back().loss;
  out.write("train.json", json_text(with_provenance(summary, ex)));
  log << "trained " << hist.size() << " epochs, test accuracy " << summary["test_accuracy"].get<double>() << '\n';
}

inline void cmd_attack(const Experiment& ex, ArtifactWriter& out, std::ostream& log) {
  ex.require({"dataset", "model"});
  const std::vector<SectionView> sections = ex.attacks();
  if (sections.empty()) throw ConfigError("attack needs at least one [attack] or [attack.<name>] section");
  const DataSplit data = build_data(ex);
  std::vector<AttackPlan> plans;
  for (const SectionView& s : sections) plans.push_back(build_attack_plan(s, data.test));
  const Classifier model = obtain_model(ex, data, log);
  const std::string name = ex.section("model").str("name");
  nlohmann::json summaries = nlohmann::json::array();
  for (const AttackPlan& plan : plans) {
    const Dataset subset = plan.samples ? data.test.slice(0, plan.samples) : data.test;
    std::ostringstream csv;
    csv << csv_preamble(ex.seed(), ex.echo());
    bool header = true;
    for (const AttackConfig& c : plan.configs) {
      const AttackReport r = run_attack(model, subset, c, derive_seed(ex.seed(), "attack." + plan.name), name);
      write_attack_csv(csv, r, header);
      header = false;
      nlohmann::json j = attack_summary_json(r);
      j["section"] = plan.name;
      summaries.push_back(j);
      log << plan.name << ' ' << r.gradient_mode << " eps " << r.eps << ": clean " << r.clean_accuracy() << ", adv "
          << r.adversarial_accuracy() << '\n';
    }
    out.write("attack_" + name + "_" + plan.name + ".csv", csv.str());
  }
  out.write("attack_" + name + ".json", json_text(with_provenance({{"reports", summaries}}, ex)));
}

inline void cmd_sweep(const Experiment& ex, ArtifactWriter& out, std::ostream& log) {
  ex.require({"dataset", "model", "train", "sweep"});
  const DataSplit data = build_data(ex);
  const SectionView s = ex.section("sweep");
  const TrainConfig budget = build_train_config(ex);
  ArchitectureSpec arch = build_architecture(ex, data.train);
  ArchitectureSpec sur_arch = arch;
  sur_arch.blocks.assign(static_cast<std::size_t>(s.integer("surrogate_blocks")),
                         ResidualBlock{s.number("surrogate_h"), 1});
  Classifier surrogate = build_classifier(sur_arch, derive_seed(ex.seed(), "sweep.surrogate"));
  log << "training surrogate\n";
  train(surrogate, data.train, budget);
  SweepSpec spec;
  spec.architecture = arch;
  spec.depth = static_cast<int>(s.integer("depth"));
  spec.step_sizes = s.numbers("step_sizes");
  spec.eps = s.numbers("eps");
  spec.budget = budget;
  spec.model_seed = derive_seed(ex.seed(), "sweep.model");
  const ClipRange clip{data.test.value_range.first, data.test.value_range.second};
  const SweepResult r = s.checked("step_sizes", [&](const std::string&) {
    return step_size_sweep(spec, data.train, data.test, surrogate, clip);
  });
  std::ostringstream csv;
  csv << csv_preamble(ex.seed(), ex.echo());
  write_sweep_csv(csv, r);
  out.write("sweep.csv", csv.str());
  out.write("sweep.json", json_text(with_provenance(sweep_json(r), ex)));
  for (const SweepRow& row : r.rows) log << "h " << row.h << ": clean " << row.clean_accuracy << '\n';
}

inline void cmd_certify(const Experiment& ex, ArtifactWriter& out, std::ostream& log) {
  ex.require({"certify"});
  const SectionView s = ex.section("certify");
  const std::size_t dim = s.u64("dim");
  if (dim < 1) throw ConfigError("key 'dim' in [certify]: must be >= 1");
  SolverConfig sc;
  sc.method = s.checked("method", method_from_string);
  sc.h = s.number("h");
  sc.t0 = s.number("t0");
  sc.t1 = s.number("t1");
  sc.rtol = s.number("rtol");
  sc.atol = s.number("atol");
  s.checked("method", [&](const std::string&) {
    sc.validate();
    return 0;
  });
  std::mt19937_64 rng(derive_seed(ex.seed(), "certify.init"));
  Tensor y0;
  if (s.str("y0").empty()) {
    y0 = random_direction(dim, rng);
  } else {
    y0 = Tensor::vector(s.numbers("y0"));
    if (y0.size() != dim) throw ConfigError("key 'y0' in [certify]: needs " + std::to_string(dim) + " values");
  }
  const std::vector<double> norms = s.numbers("eps_norms");
  if (norms.empty()) throw ConfigError("key 'eps_norms' in [certify]: needs at least one value");
  const int trials = static_cast<int>(s.integer("trials"));
  const std::string field = s.str("field");
  std::vector<BoundCertificate> certs;
  Trajectory clean;
  auto run = [&](const auto& f) {
    for (std::size_t i = 0; i < norms.size(); ++i) {
      certs.push_back(s.checked("eps_norms", [&](const std::string&) {
        return certify_bound(f, sc, y0, norms[i], trials, derive_seed(ex.seed(), "certify." + std::to_string(i)));
      }));
    }
    clean = integrate(f, sc, y0);
  };
  if (field == "sine") {
    run(FunctionField::sine(dim));
  } else if (field == "linear") {
    run(FunctionField::linear(dim, s.number("k")));
  } else if (field == "mlp") {
    run(VectorField::mlp(dim, s.u64("width"), TimeMode::Ignore, rng));
  } else {
    throw ConfigError("key 'field' in [certify]: unknown field '" + field + "' (expected sine, linear or mlp)");
  }
  bool holds = true;
  nlohmann::json list = nlohmann::json::array();
  for (const BoundCertificate& c : certs) {
    holds = holds && c.holds;
    list.push_back(certificate_json(c));
  }
  std::ostringstream csv;
  csv << csv_preamble(ex.seed(), ex.echo());
  write_certificate_csv(csv, certs);
  out.write("certificate.csv", csv.str());
  std::ostringstream traj;
  traj << csv_preamble(ex.seed(), ex.echo());
  write_trajectory_csv(traj, clean);
  out.write("trajectory.csv", traj.str());
  out.write("certificate.json", json_text(with_provenance({{"holds", holds}, {"certificates", list}}, ex)));
  log << "certificate " << (holds ? "holds" : "violated") << " for " << certs.size() << " perturbation norms\n";
}

inline void cmd_report(const std::filesystem::path& results, ArtifactWriter& out, std::ostream& log) {
  const ResultsSummary s = summarize_results(results);
  std::ostringstream table, plot, sweep;
  write_summary_csv(table, s);
  write_plot_csv(plot, s);
  write_sweep_summary_csv(sweep, s);
  out.write("summary.csv", table.str());
  out.write("plot_data.csv", plot.str());
  out.write("sweep_summary.csv", sweep.str());
  log << s.attacks.size() << " attack rows, " << s.sweeps.size() << " sweep rows\n";
}

/// Runs one subcommand and maps failures to exit codes: 1 for contract,
/// config, format and I/O errors, 2 for numeric and solver failures.
inline int run(const RunRequest& req, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  try {
    if (req.subcommand == "report") {
      const std::filesystem::path dir = req.results_dir;
      ArtifactWriter out(req.out ? std::filesystem::path(*req.out) : dir, "report");
      cmd_report(dir, out, log);
      return kExitOk;
    }
    if (req.subcommand != "train" && req.subcommand != "attack" && req.subcommand != "sweep-h" &&
        req.subcommand != "certify") {
      throw ConfigError("unknown subcommand '" + req.subcommand + "'");
    }
    ConfigDocument doc = ConfigDocument::load(req.config_path);
    for (const std::string& o : req.overrides) doc.apply_override(o);
    if (req.seed) doc.set("run", "seed", std::to_string(*req.seed));
    if (req.out) doc.set("run", "out", *req.out);
    const Experiment ex = Experiment::from_document(std::move(doc));
    ArtifactWriter out(ex.out_dir(), req.subcommand);
    if (req.subcommand == "train") cmd_train(ex, out, log);
    if (req.subcommand == "attack") cmd_attack(ex, out, log);
    if (req.subcommand == "sweep-h") cmd_sweep(ex, out, log);
    if (req.subcommand == "certify") cmd_certify(ex, out, log);
    return kExitOk;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitContract;
  }
}

}  // namespace odelab::cli
