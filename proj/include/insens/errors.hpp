#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace insens {

/// Failure categories. Each maps to one CLI exit code.
enum class ErrorKind {
    Validation,   // bad configuration, geometric assumption, parameter constraint
    Smallness,    // Newton divergence or outer-loop non-contraction
    Conditioning, // CG stagnation, unresolvable weights
    Internal,     // identity violations, contract breaches
};

/// Compact scientific formatting for diagnostics.
inline std::string fmt_sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Validation: return 2;
        case ErrorKind::Smallness: return 3;
        case ErrorKind::Conditioning: return 4;
        case ErrorKind::Internal: return 5;
    }
    return 5;
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};

struct GeometryError : Error {
    explicit GeometryError(const std::string& w) : Error(ErrorKind::Validation, w) {}
};

/// Carries the threshold the parameter had to exceed.
struct ParameterError : Error {
    ParameterError(const std::string& w, double threshold)
        : Error(ErrorKind::Validation, w), threshold(threshold) {}
    double threshold;
};

struct SmallnessError : Error {
    explicit SmallnessError(const std::string& w) : Error(ErrorKind::Smallness, w) {}
};

struct ConditioningError : Error {
    explicit ConditioningError(const std::string& w) : Error(ErrorKind::Conditioning, w) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& w) : Error(ErrorKind::Internal, w) {}
};

} // namespace insens
