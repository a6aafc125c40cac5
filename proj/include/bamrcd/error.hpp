#pragma once

#include <stdexcept>
#include <string>

namespace bamrcd {

enum class ErrorKind {
  invalid_argument,
  schema,
  alignment,
  integrity,
  generation,
  training,
  io,
  compatibility,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::schema: return "schema";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::generation: return "generation";
    case ErrorKind::training: return "training";
    case ErrorKind::io: return "io";
    case ErrorKind::compatibility: return "compatibility";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit codes used by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return kExitUsage;
    case ErrorKind::training: return kExitNumeric;
    default: return kExitData;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace bamrcd
