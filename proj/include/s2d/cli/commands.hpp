#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace s2d::cli {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kBadConfig = 2,
    kMissingCorpus = 3,
    kBadCheckpoint = 4,
    kUnknownStudy = 5,
    kEmptyMetrics = 6,
};

/// Entry point of the `s2d` binary. Never throws; the return value is the
/// process exit code. Diagnostics go to stderr, results to stdout.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

/// $S2D_HOME, else the working directory.
std::filesystem::path home_dir();

}  // namespace s2d::cli
