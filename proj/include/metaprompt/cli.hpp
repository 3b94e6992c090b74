#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace metaprompt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Runs one subcommand: gen-synth, train-meta, adapt, evaluate, bench or
/// ablate. Returns 0 on success, 1 on a usage error (message and usage on
/// `err`), 2 when the pipeline fails.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_main(int argc, const char* const* argv);

}  // namespace metaprompt
