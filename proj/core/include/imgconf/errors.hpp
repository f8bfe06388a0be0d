#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace imgconf {

// Bad shapes, out-of-range parameters, mismatched lengths.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed raster/checkpoint/manifest files. The message names the field.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs that are well-formed but carry no information: zero variance,
// an empty treatment group, single-class training labels.
class DegenerateData : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Non-finite training loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int epoch)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Run-configuration validation failure; carries every problem found, and
// the message lists them one per line.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out = "invalid configuration:";
    for (const auto& p : problems) out += "\n  " + p;
    return out;
  }

  std::vector<std::string> problems_;
};

}  // namespace imgconf
