#pragma once

#include <stdexcept>
#include <string>

namespace adaptkit {

// Input violated a contract (bad UTF-8, malformed record, invalid config).
// Mapped to exit code 1 by the CLI.
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem or stream failure. Mapped to exit code 2 by the CLI.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace adaptkit
