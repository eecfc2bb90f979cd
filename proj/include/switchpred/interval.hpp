#pragma once

#include <stdexcept>
#include <string>

namespace switchpred {

// Closed bounded interval [lo, hi] with lo < hi.
struct Interval {
  double lo = 0.0;
  double hi = 1.0;

  void validate() const {
    if (!(lo < hi)) {
      throw std::invalid_argument("Interval: require lo < hi, got [" +
                                  std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  }

  bool contains(double x) const { return x >= lo && x <= hi; }
  double width() const { return hi - lo; }
  double clamp(double x) const { return x < lo ? lo : (x > hi ? hi : x); }
};

}  // namespace switchpred
