#pragma once

#include <stdexcept>
#include <string>

namespace ht {

/** Base class for every error thrown by this library. */
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/** Malformed expression or system file. Carries the byte offset of the issue. */
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t pos)
        : Error(msg), position(pos) {}
    std::size_t position;
};

/** Domain failure while evaluating an expression (division by zero, log of a
    nonpositive number, and so on). `subexpr` is the printed offending node. */
struct EvalError : Error {
    EvalError(const std::string& msg, std::string offending)
        : Error(msg), subexpr(std::move(offending)) {}
    std::string subexpr;
};

}  // namespace ht
