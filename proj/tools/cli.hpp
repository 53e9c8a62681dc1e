#pragma once

namespace mper {

/// Entry point of the `mper` tool. Exit codes: 0 success, 1 usage or config
/// error, 2 runtime failure. Progress goes to stderr, CSV output to files.
int run_cli(int argc, const char* const* argv);

}  // namespace mper
