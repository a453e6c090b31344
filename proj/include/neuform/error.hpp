#pragma once

#include <stdexcept>
#include <string>

namespace neuform {

/// Failure category. The numeric values are the CLI exit codes.
enum class ErrorKind : int {
  Usage = 1,
  Data = 2,
  Numeric = 3,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) { return {ErrorKind::Usage, what}; }
inline Error data_error(const std::string& what) { return {ErrorKind::Data, what}; }
inline Error numeric_error(const std::string& what) { return {ErrorKind::Numeric, what}; }

}  // namespace neuform
