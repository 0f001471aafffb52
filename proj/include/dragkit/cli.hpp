#pragma once

namespace dragkit {

// Exit codes of the edit command.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;  // bad flags or configuration
constexpr int kExitImage = 2;
constexpr int kExitPoints = 3;
constexpr int kExitEngine = 4;

// Entry point of the `dragkit` tool: edit, serve and train-readout subcommands.
int run_cli(int argc, const char* const* argv);

}  // namespace dragkit
