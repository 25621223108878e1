#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace covnet {

// Error taxonomy. The CLI maps these onto exit codes:
//   config_error -> 2, io_error / format_error -> 3,
//   numeric_error / training_diverged / degenerate_error -> 4.

struct invalid_argument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct config_error : std::runtime_error {
    config_error(const std::string& key, const std::string& what)
        : std::runtime_error("config error [" + key + "]: " + what), key(key) {}
    std::string key;
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& path, const std::string& what = "cannot open")
        : std::runtime_error(what + ": " + path), path(path) {}
    std::string path;
};

struct format_error : std::runtime_error {
    format_error(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset(offset) {}
    std::uint64_t offset;
};

struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct degenerate_error : numeric_error {
    using numeric_error::numeric_error;
};

struct resource_limit : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct unsupported_dimension : invalid_argument {
    using invalid_argument::invalid_argument;
};

struct training_diverged : numeric_error {
    training_diverged(std::size_t epoch, const std::string& what)
        : numeric_error("training diverged at epoch " + std::to_string(epoch) + ": " + what),
          epoch(epoch) {}
    std::size_t epoch;
};

}  // namespace covnet
