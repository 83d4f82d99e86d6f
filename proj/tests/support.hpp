#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>

#include <json.hpp>

#include "vfr/numcore/tensor.hpp"

namespace vfr::test {

// Values frozen by tests/oracles/derive.py.
inline const nlohmann::json& frozen() {
  static const nlohmann::json j = [] {
    std::ifstream in(std::string(VFR_ORACLE_DIR) + "/frozen.json");
    return nlohmann::json::parse(in);
  }();
  return j;
}

// The parameter pattern the oracle script uses: 0.3 sin(0.7 k + salt).
inline Tensor pattern(Shape shape, int salt) {
  Tensor t(std::move(shape));
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = 0.3 * std::sin(0.7 * static_cast<double>(k) + salt);
  return t;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace vfr::test
