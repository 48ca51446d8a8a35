#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tts {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A malformed record in an input file. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DatasetError : public Error { using Error::Error; };
class SplitError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

/// Exhaustive enumeration would exceed the configured cap; use Monte Carlo mode instead.
class EnumerationError : public Error { using Error::Error; };

/// A caller violated an operation's precondition (bad layer, empty target, overlapping hooks).
class ContractError : public Error { using Error::Error; };

/// The backend session does not declare the capability an operation needs.
class CapabilityError : public Error { using Error::Error; };

/// Generation stopped at the length limit before an answer was produced.
class TruncationError : public Error { using Error::Error; };

/// A threshold or quantile selection produced an empty class.
class SelectionError : public Error { using Error::Error; };

}  // namespace tts
