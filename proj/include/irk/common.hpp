#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace irk {

// Dimension sizes of a tensor, outermost first.
using Shape = std::vector<int>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Input violates an operation's stated precondition.
struct ContractError : Error {
  using Error::Error;
};

// Tensor dimensions do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// NaN/inf or other numeric breakdown.
struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace irk
