#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "odelab/attacks/report.hpp"
#include "odelab/cli/config.hpp"
#include "odelab/models/classifier.hpp"
#include "odelab/training/dataset.hpp"
#include "odelab/training/trainer.hpp"

namespace odelab::cli {

inline const std::vector<SectionSchema>& experiment_schema() {
  static const std::vector<SectionSchema> schema = {
      {"run", false, {{"seed", "0"}, {"out", "results"}}},
      {"dataset",
       false,
       {{"kind", "two_moons"},
        {"train_size", "1000"},
        {"test_size", "500"},
        {"noise", "0.1"},
        {"factor", "0.5"},
        {"train_images", ""},
        {"train_labels", ""},
        {"test_images", ""},
        {"test_labels", ""},
        {"train_limit", "0"},
        {"test_limit", "0"},
        {"scale_lo", "0"},
        {"scale_hi", "1"}}},
      {"model",
       false,
       {{"name", "model"},
        {"blocks", "neural_ode"},
        {"width", "16"},
        {"augment_dims", "0"},
        {"h", "1"},
        {"depth", "1"},
        {"columns", "2"},
        {"method", "dopri5"},
        {"t0", "0"},
        {"t1", "1"},
        {"solver_h", "0.1"},
        {"rtol", "1e-5"},
        {"atol", "1e-5"},
        {"max_steps", "1000000"},
        {"h_min", "1e-12"},
        {"h_max", "inf"},
        {"checkpoint", ""}}},
      {"train",
       false,
       {{"optimizer", "adam"},
        {"lr", "0.001"},
        {"beta1", "0.9"},
        {"beta2", "0.999"},
        {"eps_hat", "1e-8"},
        {"epochs", "200"},
        {"batch_size", "32"},
        {"lr_halving_period", "50"},
        {"ode_mode", "adaptive"},
        {"fixed_grid_steps", "20"}}},
      {"attack",
       true,
       {{"kind", "fgsm"},
        {"eps", "0.1"},
        {"eps_units", "data"},
        {"step", "0.01"},
        {"iters", "40"},
        {"random_start", "true"},
        {"transform_prob", "0.5"},
        {"pad_fraction", "0.1"},
        {"queries", "1000"},
        {"init_step", "0.1"},
        {"orth_step", "0.1"},
        {"max_init_draws", "100"},
        {"gradient", "adaptive"},
        {"fixed_grid_steps", "20"},
        {"samples", "0"},
        {"clip_lo", ""},
        {"clip_hi", ""}}},
      {"sweep",
       false,
       {{"step_sizes", "1, 0.1, 0.01, 0.001, 1e-4, 1e-6, 1e-8, 1e-10"},
        {"eps", "0.1, 0.3, 0.5"},
        {"depth", "4"},
        {"surrogate_blocks", "3"},
        {"surrogate_h", "1"}}},
      {"certify",
       false,
       {{"field", "sine"},
        {"dim", "3"},
        {"k", "0.5"},
        {"width", "16"},
        {"method", "euler"},
        {"h", "0.001"},
        {"t0", "0"},
        {"t1", "1"},
        {"rtol", "1e-6"},
        {"atol", "1e-6"},
        {"y0", "0.5, -1, 2"},
        {"eps_norms", "0.001, 0.01, 0.1"},
        {"trials", "100"}}},
  };
  return schema;
}

/// Parsed, strictly validated document with every default filled in. The
/// run section is always present.
struct Experiment {
  ConfigDocument resolved;

  static Experiment from_document(ConfigDocument doc) {
    doc.section("run");
    return {resolve(doc, experiment_schema())};
  }

  static Experiment from_text(const std::string& text, const std::vector<std::string>& overrides = {}) {
    ConfigDocument doc = ConfigDocument::parse(text);
    for (const std::string& o : overrides) doc.apply_override(o);
    return from_document(std::move(doc));
  }

  bool has(const std::string& section) const { return resolved.find(section) != nullptr; }

  SectionView section(const std::string& name) const {
    const ConfigSection* s = resolved.find(name);
    if (!s) throw ConfigError("missing section [" + name + "]");
    return SectionView(*s);
  }

  void require(std::initializer_list<const char*> names) const {
    for (const char* n : names) section(n);
  }

  std::uint64_t seed() const { return section("run").u64("seed"); }
  std::string out_dir() const { return section("run").str("out"); }

  /// Attack sections in document order.
  std::vector<SectionView> attacks() const {
    std::vector<SectionView> out;
    for (const ConfigSection& s : resolved.sections()) {
      if (s.name == "attack" || s.name.rfind("attack.", 0) == 0) out.emplace_back(s);
    }
    return out;
  }

  /// Resolved text, which parses back to the same resolved document.
  std::string echo() const { return resolved.dump(); }
};

/// Independent stream for one named component of a run.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view component) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : component) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  std::uint64_t z = root ^ h;
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Synthetic sets share one value range, the union of both splits, so test
/// points always lie inside the attack clip box.
inline DataSplit build_data(const Experiment& ex) {
  const SectionView s = ex.section("dataset");
  const std::string kind = s.str("kind");
  const std::uint64_t seed = ex.seed();
  DataSplit d;
  if (kind == "two_moons" || kind == "circles") {
    const std::size_t ntr = s.u64("train_size"), nte = s.u64("test_size");
    const double noise = s.number("noise");
    auto make = [&](const char* key, std::size_t n, const char* part) {
      const std::uint64_t sd = derive_seed(seed, part);
      return s.checked(key, [&](const std::string&) {
        return kind == "two_moons" ? make_two_moons(n, noise, sd) : make_circles(n, noise, s.number("factor"), sd);
      });
    };
    d.train = make("train_size", ntr, "dataset.train");
    d.test = make("test_size", nte, "dataset.test");
    std::vector<Tensor> all = d.train.inputs;
    all.insert(all.end(), d.test.inputs.begin(), d.test.inputs.end());
    d.train.value_range = d.test.value_range = data_range(all);
  } else if (kind == "idx") {
    const std::pair<double, double> scale{s.number("scale_lo"), s.number("scale_hi")};
    auto limit = [&](const char* key) -> std::optional<std::size_t> {
      const std::uint64_t v = s.u64(key);
      return v == 0 ? std::nullopt : std::optional<std::size_t>(v);
    };
    d.train = load_idx(s.str("train_images"), s.str("train_labels"), limit("train_limit"), scale);
    d.test = load_idx(s.str("test_images"), s.str("test_labels"), limit("test_limit"), scale);
  } else {
    throw ConfigError("key 'kind' in [dataset]: unknown dataset '" + kind + "' (expected two_moons, circles or idx)");
  }
  d.train.validate();
  d.test.validate();
  return d;
}

inline SolverConfig solver_config(const SectionView& s) {
  SolverConfig c;
  c.method = s.checked("method", method_from_string);
  c.t0 = s.number("t0");
  c.t1 = s.number("t1");
  c.h = s.number("solver_h");
  c.rtol = s.number("rtol");
  c.atol = s.number("atol");
  c.max_steps = s.integer("max_steps");
  c.h_min = s.number("h_min");
  c.h_max = s.number("h_max");
  s.checked("method", [&](const std::string&) {
    c.validate();
    return 0;
  });
  return c;
}

inline ArchitectureSpec build_architecture(const Experiment& ex, const Dataset& data) {
  const SectionView s = ex.section("model");
  ArchitectureSpec a;
  a.input_dim = data.input_dim();
  a.class_count = static_cast<std::size_t>(data.class_count);
  a.width = s.u64("width");
  a.augment_dims = s.u64("augment_dims");
  const int depth = static_cast<int>(s.integer("depth"));
  for (const std::string& kind : s.words("blocks")) {
    if (kind == "residual") {
      a.blocks.push_back(ResidualBlock{s.number("h"), depth});
    } else if (kind == "neural_ode") {
      a.blocks.push_back(NeuralOdeBlock{solver_config(s)});
    } else if (kind == "poly") {
      a.blocks.push_back(PolyBlock{depth});
    } else if (kind == "fractal") {
      a.blocks.push_back(FractalBlock{static_cast<int>(s.integer("columns"))});
    } else if (kind == "rev") {
      a.blocks.push_back(RevBlock{depth});
    } else {
      throw ConfigError("key 'blocks' in [model]: unknown block kind '" + kind + "'");
    }
  }
  if (a.width < 1) throw ConfigError("key 'width' in [model]: must be >= 1");
  if (depth < 1) throw ConfigError("key 'depth' in [model]: must be >= 1");
  return a;
}

inline TrainConfig build_train_config(const Experiment& ex) {
  const SectionView s = ex.section("train");
  TrainConfig c;
  const std::string opt = s.str("optimizer");
  if (opt == "adam") {
    c.optimizer = AdamConfig{s.number("lr"), s.number("beta1"), s.number("beta2"), s.number("eps_hat")};
  } else if (opt == "sgd") {
    c.optimizer = SgdConfig{s.number("lr")};
  } else {
    throw ConfigError("key 'optimizer' in [train]: unknown optimizer '" + opt + "' (expected adam or sgd)");
  }
  c.epochs = static_cast<int>(s.integer("epochs"));
  c.batch_size = s.u64("batch_size");
  c.lr_halving_period = static_cast<int>(s.integer("lr_halving_period"));
  c.seed = derive_seed(ex.seed(), "train.shuffle");
  c.forward.ode_mode = s.checked("ode_mode", ode_mode_from_string);
  c.forward.fixed_grid_steps = static_cast<int>(s.integer("fixed_grid_steps"));
  s.checked("epochs", [&](const std::string&) {
    c.validate();
    return 0;
  });
  return c;
}

/// One attack run: a section expanded over its eps list and gradient modes.
struct AttackPlan {
  std::string name;  // section suffix, or the attack kind for a bare [attack]
  std::vector<AttackConfig> configs;
  std::size_t samples = 0;  // 0: the whole test split
};

inline AttackPlan build_attack_plan(const SectionView& s, const Dataset& data) {
  AttackPlan plan;
  const std::string kind = s.str("kind");
  plan.name = s.name() == "attack" ? kind : s.name().substr(7);
  plan.samples = s.u64("samples");
  const std::string units = s.str("eps_units");
  if (units != "data" && units != "range") {
    throw ConfigError("key 'eps_units' in [" + s.name() + "]: expected data or range, got '" + units + "'");
  }
  const double scale = units == "range" ? data.range_width() : 1.0;
  ClipRange clip{data.value_range.first, data.value_range.second};
  if (!s.str("clip_lo").empty()) clip.lo = s.number("clip_lo");
  if (!s.str("clip_hi").empty()) clip.hi = s.number("clip_hi");
  std::vector<double> eps = s.numbers("eps");
  if (kind == "boundary") eps = {0.0};
  if (eps.empty()) throw ConfigError("key 'eps' in [" + s.name() + "]: needs at least one value");
  for (const std::string& mode : s.words("gradient")) {
    const OdeMode m = s.checked("gradient", [&](const std::string&) { return ode_mode_from_string(mode); });
    for (double e : eps) {
      AttackConfig c;
      c.clip = clip;
      c.gradient_mode = m;
      c.fixed_grid_steps = static_cast<int>(s.integer("fixed_grid_steps"));
      const double step = s.number("step") * scale;
      const int iters = static_cast<int>(s.integer("iters"));
      if (kind == "fgsm") {
        c.kind = FgsmConfig{e * scale};
      } else if (kind == "pgd") {
        c.kind = PgdConfig{e * scale, step, iters, s.flag("random_start")};
      } else if (kind == "di2fgsm") {
        c.kind = Di2FgsmConfig{e * scale, step, iters, s.number("transform_prob"), s.number("pad_fraction")};
      } else if (kind == "boundary") {
        c.kind = BoundaryConfig{static_cast<int>(s.integer("queries")), s.number("init_step"), s.number("orth_step"),
                                static_cast<int>(s.integer("max_init_draws"))};
      } else {
        throw ConfigError("key 'kind' in [" + s.name() + "]: unknown attack '" + kind + "'");
      }
      s.checked("kind", [&](const std::string&) {
        c.validate();
        return 0;
      });
      plan.configs.push_back(c);
    }
  }
  if (plan.configs.empty()) throw ConfigError("key 'gradient' in [" + s.name() + "]: needs at least one mode");
  return plan;
}

}  // namespace odelab::cli
