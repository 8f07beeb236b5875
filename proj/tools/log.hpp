#pragma once

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace darkrank::cli {

/// Installs a stderr logger whose level comes from DARKRANK_LOG
/// (error, info or debug; unset means info).
inline void init_logging() {
  auto logger = spdlog::stderr_logger_mt("darkrank");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);

  const char* env = std::getenv("DARKRANK_LOG");
  if (env == nullptr || *env == '\0') return;
  const std::string_view v(env);
  if (v == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (v == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (v == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw std::invalid_argument("DARKRANK_LOG must be one of error, info, debug (got '" +
                                std::string(v) + "')");
  }
}

}  // namespace darkrank::cli
