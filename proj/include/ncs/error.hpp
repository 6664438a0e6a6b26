#pragma once

#include <stdexcept>
#include <string>

namespace ncs {

// Failure with a stable machine-readable code ("DimensionMismatch", "NotPD", ...).
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& detail)
        : std::runtime_error(code + ": " + detail), code_(std::move(code)), detail_(detail) {}

    const std::string& code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string code_;
    std::string detail_;
};

}  // namespace ncs
