#pragma once

#include <cmath>
#include <compare>
#include <limits>

#include <json.hpp>

#include "premia/errors.hpp"

namespace premia::num {

// A real number kept as sign * exp(log_mag), for differences of quantities
// whose logs are far outside double range (|log| of a few thousand is
// routine for sequence probabilities).
struct SignedLogReal {
  int sign = 0;          // -1, 0, +1
  double log_mag = 0.0;  // meaningful only when sign != 0

  static SignedLogReal zero() { return {0, 0.0}; }

  // exp(lp) as a positive value
  static SignedLogReal from_log(double lp) { return {+1, lp}; }

  // exp(a) - exp(b), computed without leaving log space.
  static SignedLogReal sub_exp(double a, double b) {
    if (a == b) return zero();
    double hi = std::max(a, b);
    double d = std::abs(a - b);  // > 0
    // log(e^hi - e^lo) = hi + log(1 - e^-d); -expm1 keeps precision for tiny d
    double mag = hi + std::log(-std::expm1(-d));
    return {a > b ? +1 : -1, mag};
  }

  double to_double() const {
    if (sign == 0) return 0.0;
    return static_cast<double>(sign) * std::exp(log_mag);
  }

  // Ordering by real value: compare signs, then signed magnitude.
  friend std::strong_ordering operator<=>(const SignedLogReal& x, const SignedLogReal& y) {
    if (x.sign != y.sign) return x.sign <=> y.sign;
    if (x.sign == 0) return std::strong_ordering::equal;
    double xs = static_cast<double>(x.sign) * x.log_mag;
    double ys = static_cast<double>(y.sign) * y.log_mag;
    if (xs < ys) return std::strong_ordering::less;
    if (xs > ys) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
  }

  friend bool operator==(const SignedLogReal& x, const SignedLogReal& y) {
    return (x <=> y) == std::strong_ordering::equal;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json obj;
    obj["sign"] = sign;
    if (sign != 0) obj["logmag"] = log_mag;
    return obj;
  }

  static SignedLogReal from_json(const nlohmann::json& obj) {
    if (!obj.is_object() || !obj.contains("sign"))
      throw ValidationError("signed value must be an object with a \"sign\" field");
    int s = obj.at("sign").get<int>();
    if (s != -1 && s != 0 && s != 1)
      throw ValidationError("sign must be -1, 0, or 1");
    if (s == 0) return zero();
    if (!obj.contains("logmag"))
      throw ValidationError("nonzero signed value requires \"logmag\"");
    double m = obj.at("logmag").get<double>();
    if (std::isnan(m)) throw ValidationError("logmag must not be NaN");
    return {s, m};
  }
};

}  // namespace premia::num
