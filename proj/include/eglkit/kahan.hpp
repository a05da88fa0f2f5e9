#pragma once

namespace eglkit {

// Kahan compensated accumulator. Channel sums collect up to ~1e8 terms of
// wildly varying magnitude; plain += loses the order-of-summation
// independence the channel engine promises.
struct KahanSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double value) {
    const double y = value - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }

  KahanSum& operator+=(double value) {
    add(value);
    return *this;
  }

  double value() const { return sum; }
};

}  // namespace eglkit
