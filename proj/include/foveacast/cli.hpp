#pragma once

#include <cstdint>
#include <ostream>
#include <string>

namespace foveacast {

// Process exit codes, stable for scripting:
//   0 success, 1 unexpected failure, 2 usage/flag errors, 3 input/I-O errors,
//   4 numeric failures (non-finite loss), 5 artifact corruption.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitUsage = 2,
    kExitIo = 3,
    kExitNumeric = 4,
    kExitArtifact = 5,
};

int exit_code_for(const std::exception& e);

// FNV-1a 64-bit over a file's bytes, as a fixed-width hex string.
std::string file_fnv1a_hex(const std::string& path);

// Worker-thread cap from FOVEACAST_THREADS; fallback when unset/invalid.
int env_thread_cap(int fallback);

// Full command-line entry point (argv[0] is the program name). Testable
// in-process; never calls exit(). Output goes to `out` (stdout by default).
int cli_main(int argc, const char* const* argv, std::ostream& out);
int cli_main(int argc, const char* const* argv);

}  // namespace foveacast
