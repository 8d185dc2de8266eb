#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fiml::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kNumericError = 3;
inline constexpr int kIoError = 4;

// Entry point of the `fiml` binary: train, eval, ablate, sweep, confidence,
// gradcheck, datagen. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fiml::cli
