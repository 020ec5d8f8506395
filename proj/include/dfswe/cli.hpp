#pragma once

namespace dfswe {

/// Exit codes: 0 success, 1 usage error, 2 data or model error, 3 runtime
/// failure. Errors go to stderr as one line: "error <CODE>: <message>".
int run_cli(int argc, const char* const* argv);

}  // namespace dfswe
