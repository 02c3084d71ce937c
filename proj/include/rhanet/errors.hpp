#pragma once

#include <stdexcept>
#include <string>

namespace rhanet {

// Invalid configuration (bad flag, unknown key, malformed value). Exit code 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable or malformed data files (images, lists, checkpoints). Exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required. Exit code 3.
class NumericsError : public std::runtime_error {
public:
    explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace rhanet
