// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cfcap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Entry point of the cfcap tool; args excludes the program name.
//   gen-data     --config FILE --out DIR
//   train        --config FILE --data DIR --out DIR [--cache DIR]
//   evaluate     --checkpoint FILE --data DIR [--config FILE] [--out DIR]
//   interpret    --checkpoint FILE --data DIR [--probes N] [--seed S] [--out FILE]
//   sweep-alpha  --config FILE --out DIR [--alphas LIST] [--variants LIST] [--cache DIR]
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfcap::cli
