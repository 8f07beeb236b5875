#pragma once

// Declarative description of a distillation run and its strict JSON form.
// Unknown keys are rejected so that a typo in a loss weight cannot silently
// fall back to a default.

#include "darkrank/dataset.hpp"
#include "darkrank/errors.hpp"
#include "darkrank/losses.hpp"
#include "darkrank/network.hpp"
#include "darkrank/ranking.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace darkrank {

inline constexpr int kConfigVersion = 1;

/// Which teacher-knowledge terms are added to the student objective.
struct TransferVariant {
  bool kd = false;
  bool fitnet = false;
  bool direct_match = false;
  bool soft = false;
  bool hard = false;

  bool any() const noexcept { return kd || fitnet || direct_match || soft || hard; }

  /// "none" or '+'-joined components, e.g. "kd+hard".
  static TransferVariant parse(std::string_view text) {
    TransferVariant v;
    if (text == "none") return v;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto plus = text.find('+', start);
      const auto token = text.substr(start, plus == std::string_view::npos ? text.npos : plus - start);
      bool* slot = token == "kd"             ? &v.kd
                   : token == "fitnet"       ? &v.fitnet
                   : token == "direct_match" ? &v.direct_match
                   : token == "soft"         ? &v.soft
                   : token == "hard"         ? &v.hard
                                             : nullptr;
      if (slot == nullptr) {
        throw ConfigError("unknown transfer component '" + std::string(token) + "' in variant '" +
                          std::string(text) + "'");
      }
      if (*slot) throw ConfigError("transfer component '" + std::string(token) + "' repeated");
      *slot = true;
      if (plus == std::string_view::npos) break;
      start = plus + 1;
    }
    return v;
  }

  std::string to_string() const {
    std::string out;
    auto add = [&](bool on, const char* name) {
      if (!on) return;
      if (!out.empty()) out += '+';
      out += name;
    };
    add(kd, "kd");
    add(fitnet, "fitnet");
    add(direct_match, "direct_match");
    add(soft, "soft");
    add(hard, "hard");
    return out.empty() ? "none" : out;
  }

  friend bool operator==(const TransferVariant&, const TransferVariant&) = default;
};

struct LossWeights {
  double classification = 1.0;
  double verification = 5.0;
  double triplet = 0.1;
  double transfer = 2.0;  // lambda; scales soft/hard/direct_match/fitnet
};

struct NetworkConfig {
  std::vector<std::size_t> hidden_layers;
  std::size_t embed_dim = 16;
  Activation activation = Activation::relu;
};

struct OptimizerConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

struct ScheduleConfig {
  std::size_t epochs = 100;
  std::vector<std::size_t> decay_epochs{50, 75};
  double decay_factor = 0.1;

  /// Learning rate in effect during `epoch` (0-based).
  double learning_rate(double base, std::size_t epoch) const {
    double lr = base;
    for (std::size_t e : decay_epochs) {
      if (epoch >= e) lr *= decay_factor;
    }
    return lr;
  }
};

struct DatasetConfig {
  std::optional<std::string> path;  // DRKDATA1 file; synthetic spec otherwise
  SynthSpec synthetic;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  DatasetConfig dataset;
  NetworkConfig teacher{{128, 128}, 16, Activation::relu};
  NetworkConfig student{{32}, 16, Activation::relu};
  LossWeights weights;
  ScoreParams score;
  KDParams kd;
  MarginParams margin;
  TransferVariant variant;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  std::size_t batch_size = 8;
  std::size_t positives_per_batch = 1;
  std::size_t soft_cap = kDefaultEnumerationCap;
  std::uint64_t seed = 0;
  std::optional<std::string> teacher_checkpoint;

  void validate() const {
    if (version != kConfigVersion) {
      throw ConfigError("unsupported config version " + std::to_string(version));
    }
    auto nonneg = [](double w, const char* name) {
      if (!(w >= 0.0)) throw ConfigError(std::string(name) + " must be >= 0");
    };
    nonneg(weights.classification, "weights.classification");
    nonneg(weights.verification, "weights.verification");
    nonneg(weights.triplet, "weights.triplet");
    nonneg(weights.transfer, "weights.transfer");
    if (!(kd.temperature > 0.0)) throw ConfigError("kd.temperature must be > 0");
    nonneg(kd.weight, "kd.weight");
    nonneg(margin.margin, "margin");
    if (!(score.alpha > 0.0)) throw ConfigError("score.alpha must be > 0");
    if (!(score.beta > 0.0)) throw ConfigError("score.beta must be > 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (positives_per_batch < 1 || positives_per_batch + 2 > batch_size) {
      throw ConfigError("positives_per_batch must leave room for the anchor and one negative");
    }
    if (!(optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be > 0");
    if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
      throw ConfigError("optimizer.momentum must lie in [0, 1)");
    }
    nonneg(optimizer.weight_decay, "optimizer.weight_decay");
    if (schedule.epochs < 1) throw ConfigError("schedule.epochs must be >= 1");
    for (std::size_t e : schedule.decay_epochs) {
      if (e == 0 || e >= schedule.epochs) {
        throw ConfigError("schedule.decay_epochs must lie within (0, epochs)");
      }
    }
    if (!(schedule.decay_factor > 0.0 && schedule.decay_factor <= 1.0)) {
      throw ConfigError("schedule.decay_factor must lie in (0, 1]");
    }
    for (const NetworkConfig* net : {&teacher, &student}) {
      if (net->embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
      for (std::size_t w : net->hidden_layers) {
        if (w < 1) throw ConfigError("hidden layer widths must be >= 1");
      }
    }
    if (!dataset.path) {
      try {
        dataset.synthetic.validate();
      } catch (const InputError& e) {
        throw ConfigError(std::string("dataset.synthetic: ") + e.what());
      }
    }
  }
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field " + where + "." + key + " has the wrong type");
  }
}

inline json network_to_json(const NetworkConfig& n) {
  return {{"hidden_layers", n.hidden_layers},
          {"embed_dim", n.embed_dim},
          {"activation", to_string(n.activation)}};
}

inline NetworkConfig network_from_json(const json& j, NetworkConfig n, const std::string& where) {
  check_keys(j, {"hidden_layers", "embed_dim", "activation"}, where);
  read(j, "hidden_layers", n.hidden_layers, where);
  read(j, "embed_dim", n.embed_dim, where);
  std::string act(to_string(n.activation));
  read(j, "activation", act, where);
  try {
    n.activation = activation_from_string(act);
  } catch (const InputError& e) {
    throw ConfigError(where + ".activation: " + e.what());
  }
  return n;
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json dataset;
  if (c.dataset.path) {
    dataset["path"] = *c.dataset.path;
  } else {
    const SynthSpec& s = c.dataset.synthetic;
    dataset["synthetic"] = {{"num_identities", s.num_identities},
                            {"samples_per_identity", s.samples_per_identity},
                            {"feature_dim", s.feature_dim},
                            {"intra_class_stddev", s.intra_class_stddev},
                            {"inter_class_separation", s.inter_class_separation},
                            {"heldout_fraction", s.heldout_fraction},
                            {"seed", s.seed}};
  }
  json j = {
      {"version", c.version},
      {"dataset", dataset},
      {"teacher", detail::network_to_json(c.teacher)},
      {"student", detail::network_to_json(c.student)},
      {"weights",
       {{"classification", c.weights.classification},
        {"verification", c.weights.verification},
        {"triplet", c.weights.triplet},
        {"transfer", c.weights.transfer}}},
      {"score", {{"alpha", c.score.alpha}, {"beta", c.score.beta}}},
      {"kd", {{"temperature", c.kd.temperature}, {"weight", c.kd.weight}}},
      {"margin", c.margin.margin},
      {"variant", c.variant.to_string()},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"momentum", c.optimizer.momentum},
        {"weight_decay", c.optimizer.weight_decay}}},
      {"schedule",
       {{"epochs", c.schedule.epochs},
        {"decay_epochs", c.schedule.decay_epochs},
        {"decay_factor", c.schedule.decay_factor}}},
      {"batch_size", c.batch_size},
      {"positives_per_batch", c.positives_per_batch},
      {"soft_cap", c.soft_cap},
      {"seed", c.seed},
  };
  if (c.teacher_checkpoint) j["teacher_checkpoint"] = *c.teacher_checkpoint;
  return j;
}

/// Strict parse: missing fields take defaults, unknown fields are errors.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  check_keys(j, {"version", "dataset", "teacher", "student", "weights", "score", "kd", "margin",
                 "variant", "optimizer", "schedule", "batch_size", "positives_per_batch",
                 "soft_cap", "seed", "teacher_checkpoint"},
             "config");
  if (!j.contains("version")) throw ConfigError("config is missing the 'version' field");
  ExperimentConfig c;
  read(j, "version", c.version, "config");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, {"path", "synthetic"}, "dataset");
    if (d.contains("path") && d.contains("synthetic")) {
      throw ConfigError("dataset takes either 'path' or 'synthetic', not both");
    }
    if (d.contains("path")) {
      std::string p;
      read(d, "path", p, "dataset");
      c.dataset.path = p;
    }
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      const std::string w = "dataset.synthetic";
      check_keys(s, {"num_identities", "samples_per_identity", "feature_dim", "intra_class_stddev",
                     "inter_class_separation", "heldout_fraction", "seed"},
                 w);
      SynthSpec& sp = c.dataset.synthetic;
      read(s, "num_identities", sp.num_identities, w);
      read(s, "samples_per_identity", sp.samples_per_identity, w);
      read(s, "feature_dim", sp.feature_dim, w);
      read(s, "intra_class_stddev", sp.intra_class_stddev, w);
      read(s, "inter_class_separation", sp.inter_class_separation, w);
      read(s, "heldout_fraction", sp.heldout_fraction, w);
      read(s, "seed", sp.seed, w);
    }
  }
  if (j.contains("teacher")) c.teacher = detail::network_from_json(j.at("teacher"), c.teacher, "teacher");
  if (j.contains("student")) c.student = detail::network_from_json(j.at("student"), c.student, "student");
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    check_keys(w, {"classification", "verification", "triplet", "transfer"}, "weights");
    read(w, "classification", c.weights.classification, "weights");
    read(w, "verification", c.weights.verification, "weights");
    read(w, "triplet", c.weights.triplet, "weights");
    read(w, "transfer", c.weights.transfer, "weights");
  }
  if (j.contains("score")) {
    const auto& s = j.at("score");
    check_keys(s, {"alpha", "beta"}, "score");
    read(s, "alpha", c.score.alpha, "score");
    read(s, "beta", c.score.beta, "score");
  }
  if (j.contains("kd")) {
    const auto& k = j.at("kd");
    check_keys(k, {"temperature", "weight"}, "kd");
    read(k, "temperature", c.kd.temperature, "kd");
    read(k, "weight", c.kd.weight, "kd");
  }
  read(j, "margin", c.margin.margin, "config");
  if (j.contains("variant")) {
    std::string v;
    read(j, "variant", v, "config");
    c.variant = TransferVariant::parse(v);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    check_keys(o, {"learning_rate", "momentum", "weight_decay"}, "optimizer");
    read(o, "learning_rate", c.optimizer.learning_rate, "optimizer");
    read(o, "momentum", c.optimizer.momentum, "optimizer");
    read(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    check_keys(s, {"epochs", "decay_epochs", "decay_factor"}, "schedule");
    read(s, "epochs", c.schedule.epochs, "schedule");
    read(s, "decay_epochs", c.schedule.decay_epochs, "schedule");
    read(s, "decay_factor", c.schedule.decay_factor, "schedule");
  }
  read(j, "batch_size", c.batch_size, "config");
  read(j, "positives_per_batch", c.positives_per_batch, "config");
  read(j, "soft_cap", c.soft_cap, "config");
  read(j, "seed", c.seed, "config");
  if (j.contains("teacher_checkpoint")) {
    std::string p;
    read(j, "teacher_checkpoint", p, "config");
    c.teacher_checkpoint = p;
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// FNV-1a 64 over the canonical (sorted-key) serialization, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::uint64_t h = fnv1a(to_json(c).dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace darkrank
