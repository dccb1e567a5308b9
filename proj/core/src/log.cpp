#include "distillwsd/log.hpp"

#include <cstdlib>
#include <string>

#include "distillwsd/error.hpp"

namespace distillwsd {

void set_log_level(std::string_view level) {
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw ConfigError("DISTILLWSD_LOG must be one of error, info, debug (got '" +
                      std::string(level) + "')");
  }
}

void configure_logging_from_env() {
  const char* env = std::getenv("DISTILLWSD_LOG");
  set_log_level(env != nullptr && *env != '\0' ? std::string_view(env) : "info");
}

}  // namespace distillwsd
