#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace radeval {

enum class ErrorCode {
    Validation,
    InvalidArgument,
    NoSectionsFound,
    MalformedResponse,
    EmptyReference,
    EmptyInput,
    LengthMismatch,
    IndexOutOfRange,
    DegenerateInput,
    Misalignment,
    DimensionMismatch,
    KOutOfRange,
    IoError,
    UnreadableBackground,
    TransportError,
    ExhaustedRetries,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::Validation: return "Validation";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::NoSectionsFound: return "NoSectionsFound";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
        case ErrorCode::EmptyReference: return "EmptyReference";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::DegenerateInput: return "DegenerateInput";
        case ErrorCode::Misalignment: return "Misalignment";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::KOutOfRange: return "KOutOfRange";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::UnreadableBackground: return "UnreadableBackground";
        case ErrorCode::TransportError: return "TransportError";
        case ErrorCode::ExhaustedRetries: return "ExhaustedRetries";
    }
    return "Unknown";
}

/// Base of every error the library throws. The code lets callers (and the
/// CLI exit-code mapping) branch without RTTI on the concrete subclass.
class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

class TransportError : public Error {
  public:
    TransportError(std::string what, bool transient)
        : Error(ErrorCode::TransportError, what), transient_(transient) {}

    /// Connection failures, timeouts, 429 and 5xx are worth retrying.
    bool transient() const noexcept { return transient_; }

  private:
    bool transient_;
};

class ExhaustedRetries : public Error {
  public:
    ExhaustedRetries(int attempts, std::string last_response, const std::string& last_error)
        : Error(ErrorCode::ExhaustedRetries,
                "gave up after " + std::to_string(attempts) + " attempts; last error: " + last_error),
          attempts_(attempts),
          last_response_(std::move(last_response)) {}

    int attempts() const noexcept { return attempts_; }
    const std::string& last_response() const noexcept { return last_response_; }

  private:
    int attempts_;
    std::string last_response_;
};

}  // namespace radeval
