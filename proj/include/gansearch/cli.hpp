// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gansearch {

/// Runs one command line (args excludes the program name). Results go to
/// `out` as key=value lines; a failure writes one line to `err`,
///   error kind=<kind> command=<command> message="<text>"
/// and returns nonzero (2 for usage and config errors, 1 otherwise).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gansearch
