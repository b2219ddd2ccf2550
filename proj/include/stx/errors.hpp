#pragma once

#include <stdexcept>
#include <string>

namespace stx {

// Shape or dimension disagreement between operands.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// A caller violated an operation's precondition (non-scalar loss, acting on a
// finished episode, non-finite gradient, ...).
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Input values outside the supported domain (oracle dimension too large,
// malformed file contents, unsatisfiable placement).
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stx
