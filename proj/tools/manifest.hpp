#pragma once

#include "json.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace darkrank::cli {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

/// manifest.json in the output directory. Written with outcome "running"
/// before any other output and rewritten when the run ends.
class RunManifest {
 public:
  RunManifest(std::filesystem::path out_dir, std::string command, std::string config_hash)
      : dir_(std::move(out_dir)), command_(std::move(command)), config_hash_(std::move(config_hash)) {
    started_ = utc_timestamp();
    std::string stamp = started_;
    std::erase_if(stamp, [](char c) { return c == '-' || c == ':'; });
    run_id_ = command_ + "-" + config_hash_.substr(0, 8) + "-" + stamp;
  }

  const std::string& run_id() const noexcept { return run_id_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

  void add_input(const std::string& role, const std::filesystem::path& p) { inputs_[role] = p.string(); }

  /// Registers an output file and returns its full path.
  std::filesystem::path output(const std::string& name) {
    outputs_.push_back(name);
    return dir_ / name;
  }

  void begin() {
    std::filesystem::create_directories(dir_);
    write_json(dir_ / "manifest.json", to_json());
  }

  void finish(const std::string& outcome, const std::string& message = {}) {
    outcome_ = outcome;
    message_ = message;
    finished_ = utc_timestamp();
    write_json(dir_ / "manifest.json", to_json());
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"run_id", run_id_},
                        {"command", command_},
                        {"config_hash", config_hash_},
                        {"inputs", inputs_},
                        {"outputs", outputs_},
                        {"started_at", started_},
                        {"finished_at", finished_.empty() ? nlohmann::json() : nlohmann::json(finished_)},
                        {"outcome", outcome_}};
    if (!message_.empty()) j["message"] = message_;
    return j;
  }

 private:
  std::filesystem::path dir_;
  std::string command_;
  std::string config_hash_;
  std::string run_id_;
  std::string started_;
  std::string finished_;
  std::string outcome_ = "running";
  std::string message_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

}  // namespace darkrank::cli
