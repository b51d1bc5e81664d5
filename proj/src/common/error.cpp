#include "balancedit/common/error.hpp"

namespace balancedit {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::shape: return "shape";
        case ErrorKind::length: return "length";
        case ErrorKind::empty_loss: return "empty_loss";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::config: return "config";
        case ErrorKind::domain: return "domain";
        case ErrorKind::not_found: return "not_found";
        case ErrorKind::format: return "format";
        case ErrorKind::data: return "data";
        case ErrorKind::divergence: return "divergence";
        case ErrorKind::generation: return "generation";
        case ErrorKind::io: return "io";
        case ErrorKind::missing_artifact: return "missing_artifact";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace balancedit
