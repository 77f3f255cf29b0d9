#pragma once

#include <stdexcept>
#include <string>

namespace sac {

// Error categories map onto process exit codes in the CLI:
// config/usage/input errors -> 2, numerical aborts -> 3.
enum class ErrKind {
    dimension,   // shape/extent mismatch
    index,       // out-of-range / unsorted indices
    vocab,       // unknown token or id
    config,      // invalid configuration value
    contract,    // API misuse (e.g. backward twice)
    input,       // malformed external input (files, scores)
    io,          // filesystem failures
    numeric,     // NaN/Inf encountered where finite values are required
};

class Error : public std::runtime_error {
  public:
    Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrKind kind() const { return kind_; }

  private:
    ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void require(bool cond, ErrKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

} // namespace sac
