// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/log.hpp"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <string>

namespace dflow {

void init_logging() {
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("DIFFREP_FLOW_LOG")) {
    const auto parsed = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only honour "off" when asked for.
    if (parsed != spdlog::level::off || std::string(env) == "off") {
      level = parsed;
    }
  }
  spdlog::set_level(level);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
}

}  // namespace dflow
