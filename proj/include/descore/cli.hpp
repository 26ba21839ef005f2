#pragma once

namespace descore::cli {

/// Parses arguments, dispatches the subcommand, and maps failures onto the
/// documented exit codes: 0 ok, 2 config, 3 data, 4 numeric, 5 io.
int run(int argc, const char* const* argv);

}  // namespace descore::cli
