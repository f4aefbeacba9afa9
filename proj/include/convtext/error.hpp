#pragma once

#include <stdexcept>
#include <string>

namespace convtext {

/// Single exception type raised by every convtext operation on bad input.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace convtext
