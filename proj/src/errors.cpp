#include "fk/errors.hpp"

#include <utility>

namespace fk {

ValidationError::ValidationError(const std::string& msg, std::string path)
    : Error(path.empty() ? msg : path + ": " + msg), path_(std::move(path)) {}

ParseError::ParseError(const std::string& msg, std::size_t offset)
    : Error(msg + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

}  // namespace fk
