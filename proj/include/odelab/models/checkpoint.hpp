#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include "odelab/models/classifier.hpp"

namespace odelab {

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json solver_to_json(const SolverConfig& c) {
  return {{"method", to_string(c.method)}, {"t0", c.t0},
          {"t1", c.t1},                    {"h", c.h},
          {"rtol", c.rtol},                {"atol", c.atol},
          {"max_steps", c.max_steps},      {"h_min", c.h_min},
          {"h_max", std::isinf(c.h_max) ? nlohmann::json(nullptr) : nlohmann::json(c.h_max)}};
}

inline SolverConfig solver_from_json(const nlohmann::json& j) {
  SolverConfig c;
  c.method = method_from_string(j.at("method").get<std::string>());
  c.t0 = j.at("t0").get<double>();
  c.t1 = j.at("t1").get<double>();
  c.h = j.at("h").get<double>();
  c.rtol = j.at("rtol").get<double>();
  c.atol = j.at("atol").get<double>();
  c.max_steps = j.at("max_steps").get<long>();
  c.h_min = j.at("h_min").get<double>();
  c.h_max = j.at("h_max").is_null() ? std::numeric_limits<double>::infinity() : j.at("h_max").get<double>();
  return c;
}

inline nlohmann::json block_kind_to_json(const BlockKind& kind) {
  nlohmann::json j{{"kind", block_name(kind)}};
  if (const auto* r = std::get_if<ResidualBlock>(&kind)) {
    j["h"] = r->h;
    j["depth"] = r->depth;
  } else if (const auto* n = std::get_if<NeuralOdeBlock>(&kind)) {
    j["solver"] = solver_to_json(n->solver);
  } else if (const auto* p = std::get_if<PolyBlock>(&kind)) {
    j["depth"] = p->depth;
  } else if (const auto* f = std::get_if<FractalBlock>(&kind)) {
    j["columns"] = f->columns;
  } else if (const auto* v = std::get_if<RevBlock>(&kind)) {
    j["depth"] = v->depth;
  }
  return j;
}

inline BlockKind block_kind_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "residual") return ResidualBlock{j.at("h").get<double>(), j.at("depth").get<int>()};
  if (kind == "neural_ode") return NeuralOdeBlock{solver_from_json(j.at("solver"))};
  if (kind == "poly") return PolyBlock{j.at("depth").get<int>()};
  if (kind == "fractal") return FractalBlock{j.at("columns").get<int>()};
  if (kind == "rev") return RevBlock{j.at("depth").get<int>()};
  throw FormatError("unknown block kind '" + kind + "'");
}

inline nlohmann::json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"values", t.values()}}; }

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

inline nlohmann::json checkpoint_to_json(const Classifier& model) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const BlockSpec& b : model.blocks()) {
    nlohmann::json jb = block_kind_to_json(b.kind);
    nlohmann::json fields = nlohmann::json::array();
    for (const VectorField& f : b.fields) {
      nlohmann::json acts = nlohmann::json::array();
      for (const DenseLayer& l : f.layers()) acts.push_back(to_string(l.activation()));
      fields.push_back({{"time_mode", to_string(f.time_mode())}, {"activations", acts}});
    }
    jb["fields"] = fields;
    blocks.push_back(jb);
  }
  nlohmann::json tensors = nlohmann::json::object();
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < names.size(); ++i) tensors[names[i]] = tensor_to_json(*params[i]);
  return {{"format_version", kCheckpointFormatVersion},
          {"seed", model.seed()},
          {"input_dim", model.input_dim()},
          {"state_dim", model.state_dim()},
          {"class_count", model.class_count()},
          {"blocks", blocks},
          {"tensors", tensors}};
}

inline Classifier checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw FormatError("unsupported checkpoint format_version " + j.at("format_version").dump());
    }
    const nlohmann::json& tensors = j.at("tensors");
    auto tensor = [&](const std::string& name) { return tensor_from_json(tensors.at(name)); };
    std::vector<BlockSpec> blocks;
    const nlohmann::json& jblocks = j.at("blocks");
    for (std::size_t b = 0; b < jblocks.size(); ++b) {
      BlockSpec spec{block_kind_from_json(jblocks[b]), {}};
      const nlohmann::json& fields = jblocks[b].at("fields");
      for (std::size_t fi = 0; fi < fields.size(); ++fi) {
        std::vector<DenseLayer> layers;
        const nlohmann::json& acts = fields[fi].at("activations");
        for (std::size_t l = 0; l < acts.size(); ++l) {
          const std::string stem =
              "block" + std::to_string(b) + ".field" + std::to_string(fi) + ".layer" + std::to_string(l);
          layers.emplace_back(tensor(stem + ".weight"), tensor(stem + ".bias"),
                              activation_from_string(acts[l].get<std::string>()));
        }
        spec.fields.emplace_back(std::move(layers), time_mode_from_string(fields[fi].at("time_mode").get<std::string>()));
      }
      blocks.push_back(std::move(spec));
    }
    DenseLayer head(tensor("head.weight"), tensor("head.bias"), Activation::Identity);
    return Classifier(j.at("input_dim").get<std::size_t>(), j.at("state_dim").get<std::size_t>(), std::move(blocks),
                      std::move(head), j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline std::string checkpoint_dump(const Classifier& model) { return checkpoint_to_json(model).dump(1); }

inline Classifier checkpoint_parse(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return checkpoint_from_json(j);
}

inline Classifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_parse(ss.str());
}

}  // namespace odelab
