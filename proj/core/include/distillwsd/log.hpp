#pragma once

#include <spdlog/spdlog.h>

#include <string_view>

namespace distillwsd {

/// Sets the spdlog level from DISTILLWSD_LOG (error, info or debug; default info).
void configure_logging_from_env();
void set_log_level(std::string_view level);

}  // namespace distillwsd
