// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace dflow {

/// Sets the spdlog level from DIFFREP_FLOW_LOG (trace, debug, info, warn,
/// error, off). Unset or unrecognized values mean warn.
void init_logging();

}  // namespace dflow
