#pragma once

#include <string>
#include <vector>

namespace adaptkit::cli {

// Full command-line surface of the adaptkit tool; args excludes argv[0].
// Returns the process exit code: 0 success, 1 validation failure, 2 I/O
// failure.
int run(std::vector<std::string> args);

}  // namespace adaptkit::cli
