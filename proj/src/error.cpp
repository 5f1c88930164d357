#include "flim/error.hpp"

namespace flim {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kLowSignal: return "low signal";
    case ErrorKind::kUndefined: return "undefined";
    case ErrorKind::kTruncation: return "truncation";
    case ErrorKind::kRankDeficient: return "rank deficient";
    case ErrorKind::kTrainingFailure: return "training failure";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

}  // namespace flim
