#pragma once

#include <stdexcept>
#include <string>

namespace cohortforge {

// Error kinds map onto CLI exit codes: invalid_input -> 1, runtime -> 2.
enum class ErrorKind { invalid_input, runtime };

class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message,
          ErrorKind kind = ErrorKind::invalid_input)
        : std::runtime_error(code + ": " + message),
          code_(std::move(code)),
          kind_(kind) {}

    const std::string& code() const noexcept { return code_; }
    ErrorKind kind() const noexcept { return kind_; }

private:
    std::string code_;
    ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message,
                              ErrorKind kind = ErrorKind::invalid_input) {
    throw Error(code, message, kind);
}

}  // namespace cohortforge
