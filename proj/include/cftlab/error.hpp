#pragma once

#include <stdexcept>
#include <string>

namespace cftlab {

enum class ErrKind {
    invalid_input,   // caller error: bad arguments, malformed files, schema violations
    internal,        // invariant violation inside the library
};

class CftError : public std::runtime_error {
public:
    CftError(ErrKind kind, std::string msg)
        : std::runtime_error(std::move(msg)), kind_(kind) {}

    ErrKind kind() const noexcept { return kind_; }

private:
    ErrKind kind_;
};

[[noreturn]] inline void fail_input(const std::string& msg) {
    throw CftError(ErrKind::invalid_input, msg);
}

[[noreturn]] inline void fail_internal(const std::string& msg) {
    throw CftError(ErrKind::internal, msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail_input(msg);
}

}  // namespace cftlab
