#include "ssfilter/errors.hpp"

namespace ssf {

IoError::IoError(const std::string& path, const std::string& what)
    : Error(what + ": " + path), path_(path) {}

}  // namespace ssf
