#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace planaudio {

// Error taxonomy. Everything user-visible derives from Error so the CLI can
// map failures to exit codes (contract/config errors -> 1).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape disagreements (matmul inner extents, elementwise mismatch, ...).
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Token/row index out of range.
class IndexError : public Error {
public:
    explicit IndexError(const std::string& msg) : Error(msg) {}
};

// Violated precondition (non-scalar loss, K <= 0, overlength sequence, ...).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Structurally invalid delayed frame layout (pad in interior, token in corner).
class LayoutError : public Error {
public:
    explicit LayoutError(const std::string& msg) : Error(msg) {}
};

// Malformed unified sequence (missing/misordered markers, slot mismatch).
class SequenceError : public Error {
public:
    explicit SequenceError(const std::string& msg) : Error(msg) {}
};

// Audio frame tuple that maps back to no known motif step.
class InversionError : public Error {
public:
    explicit InversionError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

inline std::string strformat(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[1024];
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

}  // namespace planaudio
