#pragma once

#include <stdexcept>
#include <string>

namespace adnf {

// Caller broke a precondition (shape mismatch, wrong sequence length, ...).
struct contract_error : std::logic_error {
  using std::logic_error::logic_error;
};

// Index outside the valid domain (pixel, frame index).
struct range_error : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Malformed or inconsistent file / dataset on disk.
struct load_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A value that must be finite was not.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw contract_error(message);
}

}  // namespace adnf
