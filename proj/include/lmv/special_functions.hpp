#pragma once

#include <cmath>
#include <stdexcept>

namespace lmv {

// psi(x): recurrence up to x >= 12, then the asymptotic series in 1/x^2.
// Truncation error at the shift threshold is below one ulp of the result.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 12.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double u = 1.0 / (x * x);
  const double series =
      u * (1.0 / 12.0 -
           u * (1.0 / 120.0 -
                u * (1.0 / 252.0 -
                     u * (1.0 / 240.0 -
                          u * (1.0 / 132.0 -
                               u * (691.0 / 32760.0 - u * (1.0 / 12.0)))))));
  return acc + std::log(x) - 0.5 / x - series;
}

// psi'(x), same scheme.
inline double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: argument must be positive");
  double acc = 0.0;
  while (x < 12.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double u = 1.0 / (x * x);
  const double series =
      u * (1.0 / 6.0 -
           u * (1.0 / 30.0 -
                u * (1.0 / 42.0 -
                     u * (1.0 / 30.0 -
                          u * (5.0 / 66.0 -
                               u * (691.0 / 2730.0 - u * (7.0 / 6.0)))))));
  return acc + 1.0 / x + 0.5 * u + series / x;
}

inline double log_gamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("log_gamma: argument must be positive");
  return std::lgamma(x);
}

// log B(a, b)
inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Determinant of the Fisher information of Beta(a, b):
//   psi'(a) psi'(b) - psi'(a+b) [psi'(a) + psi'(b)].
// Positive for all a, b > 0.
inline double beta_fisher_det(double a, double b) {
  const double ta = trigamma(a);
  const double tb = trigamma(b);
  const double ts = trigamma(a + b);
  return ta * tb - ts * (ta + tb);
}

}  // namespace lmv
