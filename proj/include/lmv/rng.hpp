#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace lmv {

// Counter-based generator (splitmix64 finalizer over key + counter). The i-th
// output depends only on (key, i), so streams keyed by e.g. (seed, sweep,
// minibatch) are reproducible no matter how many draws other streams consumed.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}

  static std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t k = 0x2545f4914f6cdd1dULL;
    for (std::uint64_t p : parts) k = finalize(k ^ finalize(p + 0x9e3779b97f4a7c15ULL));
    return k;
  }

  std::uint64_t next_u64() {
    return finalize(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // (0, 1); safe under log/pow
  double uniform_pos() {
    return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // unbiased integer in [0, n)
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // standard normal, Marsaglia polar method (no cached second deviate)
  double normal() {
    for (;;) {
      double u = 2.0 * uniform() - 1.0;
      double v = 2.0 * uniform() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Gamma(shape, 1), Marsaglia-Tsang; shape < 1 via the boost identity
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("gamma: shape must be positive");
    if (shape < 1.0) {
      double u = uniform_pos();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  std::vector<double> dirichlet(const std::vector<double>& concentration) {
    std::vector<double> out(concentration.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < concentration.size(); ++i) {
      out[i] = gamma(concentration[i]);
      sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
  }

  // index into an (unnormalized, nonnegative) weight vector
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double cum = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      cum += weights[i];
      if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace lmv
