// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace empath::cli {

/// Entry point shared by the binary and the integration tests.
/// Exit codes: 0 success, 1 validation error, 2 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace empath::cli
