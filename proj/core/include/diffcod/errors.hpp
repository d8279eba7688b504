#pragma once

#include <stdexcept>
#include <string>

namespace diffcod {

/// Base class for every error the library raises. `code()` is a short
/// machine-readable tag used by the CLI's `ERROR <code>: <message>` lines.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& message) : Error("shape", message) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& message) : Error("index", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, long step, int batch_index)
      : Error("divergence", message), step_(step), batch_index_(batch_index) {}

  long step() const noexcept { return step_; }
  int batch_index() const noexcept { return batch_index_; }

 private:
  long step_;
  int batch_index_;
};

}  // namespace diffcod
