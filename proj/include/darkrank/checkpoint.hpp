#pragma once

// Network checkpoint files. Layout:
//
//   DRKNET1\n
//   <JSON document: {"spec": {...}, "layers": [{"rows", "cols", "weight", "bias"}]}>
//
// Parameters are stored as shortest round-trip decimal doubles, so a
// save/load cycle reproduces the state bit for bit.

#include "darkrank/errors.hpp"
#include "darkrank/network.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace darkrank {

inline constexpr const char* kCheckpointMagic = "DRKNET1";

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
  return {{"input_dim", spec.input_dim},     {"hidden_layers", spec.hidden_layers},
          {"embed_dim", spec.embed_dim},     {"num_classes", spec.num_classes},
          {"activation", to_string(spec.activation)}, {"seed", spec.seed}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.input_dim = j.at("input_dim").get<std::size_t>();
  spec.hidden_layers = j.at("hidden_layers").get<std::vector<std::size_t>>();
  spec.embed_dim = j.at("embed_dim").get<std::size_t>();
  spec.num_classes = j.at("num_classes").get<std::size_t>();
  spec.activation = activation_from_string(j.at("activation").get<std::string>());
  spec.seed = j.at("seed").get<std::uint64_t>();
  spec.validate();
  return spec;
}

inline std::string serialize_checkpoint(const NetworkState& state) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Dense& d : state.layers) {
    layers.push_back({{"rows", d.weight.rows()},
                      {"cols", d.weight.cols()},
                      {"weight", std::vector<double>(d.weight.data(),
                                                     d.weight.data() + d.weight.size())},
                      {"bias", std::vector<double>(d.bias.data(), d.bias.data() + d.bias.size())}});
  }
  nlohmann::json doc = {{"spec", spec_to_json(state.spec)}, {"layers", std::move(layers)}};
  return std::string(kCheckpointMagic) + "\n" + doc.dump() + "\n";
}

inline NetworkState parse_checkpoint(const std::string& text) {
  const auto newline = text.find('\n');
  if (newline == std::string::npos || text.compare(0, newline, kCheckpointMagic) != 0) {
    throw ParseError("missing DRKNET1 magic header", 1, 1);
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.substr(newline + 1));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint body: ") + e.what(), 2, e.byte);
  }
  try {
    NetworkState state = init(spec_from_json(doc.at("spec")));
    const auto& layers = doc.at("layers");
    if (layers.size() != state.layers.size()) {
      throw ParseError("layer count does not match spec", 2, 1);
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      Dense& d = state.layers[l];
      const auto rows = layers[l].at("rows").get<Eigen::Index>();
      const auto cols = layers[l].at("cols").get<Eigen::Index>();
      const auto w = layers[l].at("weight").get<std::vector<double>>();
      const auto b = layers[l].at("bias").get<std::vector<double>>();
      if (rows != d.weight.rows() || cols != d.weight.cols() ||
          w.size() != static_cast<std::size_t>(d.weight.size()) ||
          b.size() != static_cast<std::size_t>(d.bias.size())) {
        throw ParseError("layer " + std::to_string(l) + " shape does not match spec", 2, 1);
      }
      std::copy(w.begin(), w.end(), d.weight.data());
      std::copy(b.begin(), b.end(), d.bias.data());
      if (!d.weight.allFinite() || !d.bias.allFinite()) {
        throw ParseError("layer " + std::to_string(l) + " has non-finite parameters", 2, 1);
      }
    }
    return state;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid checkpoint document: ") + e.what(), 2, 1);
  } catch (const InputError& e) {
    throw ParseError(std::string("invalid network spec: ") + e.what(), 2, 1);
  }
}

inline void save_checkpoint(const NetworkState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << serialize_checkpoint(state);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline NetworkState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace darkrank
