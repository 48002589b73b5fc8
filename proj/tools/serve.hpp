#pragma once

#include <tending/config.hpp>

namespace tending_tools {

/// Blocks serving HTTP (/health, /config, /artifacts/...) and the /ws bridge
/// endpoint until the process is interrupted.
int run_server(const tending::WorkbenchConfig& cfg, unsigned short port);

}  // namespace tending_tools
