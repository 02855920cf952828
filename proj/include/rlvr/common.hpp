#pragma once

/**
 * Shared error taxonomy and small filesystem helpers.
 *
 * Error categories follow what callers can act on:
 * - InputError      caller passed arguments violating an operation's contract
 * - ConfigError     a configuration value is invalid or inconsistent
 * - DataError       an external file or record is malformed
 * - NumericError    a computation produced non-finite values
 * - StalenessError  a rollout group was paired with the wrong policy snapshot
 */

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace rlvr {

class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class StalenessError : public std::runtime_error {
 public:
  explicit StalenessError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open file: " + path.string());
  }
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write file: " + path.string());
  }
  out << text;
}

}  // namespace rlvr
