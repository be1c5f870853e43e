#pragma once

#include <stdexcept>
#include <string>

namespace sodkd {

// Shape or precondition violation on grid-valued operations.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed on-disk data (image headers, manifests, checkpoints).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace sodkd
