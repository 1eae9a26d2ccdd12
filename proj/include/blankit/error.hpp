#pragma once

#include <stdexcept>
#include <string>

namespace blankit {

/// Failure categories. Each maps to a distinct CLI exit code.
enum class ErrorKind {
    Usage = 2,
    Io = 3,
    Schema = 4,
    InconsistentIds = 5,
    Analysis = 6,
    Internal = 1,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

  private:
    ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Io: return "io";
        case ErrorKind::Schema: return "schema";
        case ErrorKind::InconsistentIds: return "inconsistent-ids";
        case ErrorKind::Analysis: return "analysis";
        case ErrorKind::Internal: return "internal";
    }
    return "internal";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace blankit
