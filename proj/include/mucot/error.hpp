#pragma once

#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mucot {

enum class ErrorCode {
  io_failure,
  parse_failure,
  validation_failure,
  insufficient_records,
  empty_stratum,
  size_too_small,
  transformer_failure,
  question_too_long,
  stride_geq_capacity,
  invalid_config,
  shape_mismatch,
  empty_mask_row,
  label_out_of_range,
  non_finite,
  unresolvable_group,
  empty_evaluation_set,
  usage,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io_failure: return "io-failure";
    case ErrorCode::parse_failure: return "parse-failure";
    case ErrorCode::validation_failure: return "validation-failure";
    case ErrorCode::insufficient_records: return "insufficient-records";
    case ErrorCode::empty_stratum: return "empty-stratum";
    case ErrorCode::size_too_small: return "size-too-small";
    case ErrorCode::transformer_failure: return "transformer-failure";
    case ErrorCode::question_too_long: return "question-too-long";
    case ErrorCode::stride_geq_capacity: return "stride-geq-capacity";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::shape_mismatch: return "shape-mismatch";
    case ErrorCode::empty_mask_row: return "empty-mask-row";
    case ErrorCode::label_out_of_range: return "label-out-of-range";
    case ErrorCode::non_finite: return "non-finite";
    case ErrorCode::unresolvable_group: return "unresolvable-group";
    case ErrorCode::empty_evaluation_set: return "empty-evaluation-set";
    case ErrorCode::usage: return "usage";
  }
  return "unknown";
}

// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct RecordIssue {
  std::string id;
  std::string reason;
};

// Raised by dataset loading when one or more records break the record
// invariants. The valid records are kept so callers can decide to continue.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<RecordIssue> issues)
      : Error(ErrorCode::validation_failure, summarize(issues)),
        issues_(std::move(issues)) {}

  const std::vector<RecordIssue>& issues() const noexcept { return issues_; }

 private:
  static std::string summarize(const std::vector<RecordIssue>& issues) {
    std::ostringstream out;
    out << issues.size() << " invalid record(s)";
    for (std::size_t i = 0; i < issues.size() && i < 5; ++i) {
      out << (i == 0 ? ": " : "; ") << issues[i].id << " (" << issues[i].reason << ")";
    }
    if (issues.size() > 5) out << "; ...";
    return out.str();
  }

  std::vector<RecordIssue> issues_;
};

template <typename... Parts>
[[noreturn]] void fail(ErrorCode code, Parts&&... parts) {
  std::ostringstream out;
  (out << ... << std::forward<Parts>(parts));
  throw Error(code, out.str());
}

namespace log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline Level& threshold() {
  static Level level = Level::warn;
  return level;
}

template <typename... Parts>
void write(Level level, Parts&&... parts) {
  if (level < threshold()) return;
  static constexpr const char* names[] = {"debug", "info", "warn", "error"};
  std::ostringstream out;
  out << "[mucot " << names[static_cast<int>(level)] << "] ";
  (out << ... << std::forward<Parts>(parts));
  out << '\n';
  std::clog << out.str();
}

template <typename... Parts> void info(Parts&&... p) { write(Level::info, std::forward<Parts>(p)...); }
template <typename... Parts> void warn(Parts&&... p) { write(Level::warn, std::forward<Parts>(p)...); }

}  // namespace log
}  // namespace mucot
