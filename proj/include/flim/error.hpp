#pragma once

#include <stdexcept>
#include <string>

namespace flim {

enum class ErrorKind {
  kInvalidArgument,
  kLowSignal,
  kUndefined,
  kTruncation,
  kRankDeficient,
  kTrainingFailure,
  kParse,
  kIo,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` distinguishes the failure class.
class FlimError : public std::runtime_error {
 public:
  FlimError(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw FlimError(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::kInvalidArgument, what);
}

}  // namespace flim
