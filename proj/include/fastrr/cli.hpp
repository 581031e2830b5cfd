#pragma once

#include <iosfwd>

namespace fastrr {

/// Entry point behind the `fastrr` binary. Results go to `out` as JSON (or
/// CSV where a command has no output file); failures print a one-line JSON
/// diagnostic to `err`. Returns 0 on success, 2 for usage/validation errors,
/// 1 otherwise.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace fastrr
