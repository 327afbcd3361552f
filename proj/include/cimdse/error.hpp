#pragma once

#include <stdexcept>
#include <string>

namespace cimdse {

enum class ErrorKind {
  schema,
  partition,
  transfer_infeasible,
  validity,
  model_config,
  config,
  domain,
  degenerate_fit,
  projection_infeasible,
  adjustment,
  not_ready,
  backend,
  state,
  not_found,
  io,
  validation,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace cimdse
