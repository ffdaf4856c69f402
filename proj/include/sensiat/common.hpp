#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sensiat {

// Missing outcome values are carried as quiet NaN throughout.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

// 95% Wald critical value, fixed.
inline constexpr double kZ95 = 1.959963984540054;

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sensiat
