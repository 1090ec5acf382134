#include <CLI11.hpp>

#include "odelab/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"odelab: stability experiments for ODE-style classifiers"};
  app.require_subcommand(1);
  odelab::cli::RunRequest req;
  std::uint64_t seed = 0;
  std::string out;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--set", req.overrides, "Override section.key=value (repeatable)");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seed", seed, "Root seed");
  };
  for (const char* name : {"train", "attack", "sweep-h", "certify"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", req.config_path, "Experiment config")->required();
    add_common(sub);
  }
  CLI::App* report = app.add_subcommand("report", "Merge attack and sweep CSVs into summary tables");
  report->add_option("results_dir", req.results_dir, "Directory of result CSVs")->required();
  report->add_option("--out", out, "Output directory (default: results_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : odelab::cli::kExitContract;
  }
  CLI::App* sub = app.get_subcommands().front();
  req.subcommand = sub->get_name();
  if (sub->count("--out")) req.out = out;
  if (req.subcommand != "report" && sub->count("--seed")) req.seed = seed;
  return odelab::cli::run(req);
}
