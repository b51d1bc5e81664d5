#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace balancedit {

enum class ErrorKind {
    dimension,
    shape,
    length,
    empty_loss,
    numeric,
    config,
    domain,
    not_found,
    format,
    data,
    divergence,
    generation,
    io,
    missing_artifact,
};

std::string_view to_string(ErrorKind kind);

// All library failures derive from this; `kind()` is what the CLI prints.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace balancedit
