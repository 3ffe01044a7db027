#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dsnet/common.hpp"

namespace dsnet {

/// Deterministic random source. All distributions are implemented on top of
/// the raw 64-bit stream so sequences are identical across standard
/// libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller. One fresh pair per two calls.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// log of a Gamma(alpha, 1) draw. Working in log space keeps tiny-alpha
  /// draws (used for near-categorical Dirichlet fields) from underflowing.
  double log_gamma_draw(double alpha) {
    if (alpha < 1.0) {
      // Boost: Gamma(a) = Gamma(a+1) * U^(1/a)
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return log_gamma_draw(alpha + 1.0) + std::log(u) / alpha;
    }
    // Marsaglia-Tsang squeeze for alpha >= 1.
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      while (u <= 0.0) u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
        return std::log(d * v);
      }
    }
  }

  /// Symmetric Dirichlet(alpha) over `dim` categories, computed through a
  /// log-space softmax so it stays exact for alpha down to ~1e-3.
  void dirichlet(double alpha, std::vector<double>& out) {
    const std::size_t dim = out.size();
    double max_log = -1e300;
    for (std::size_t i = 0; i < dim; ++i) {
      out[i] = log_gamma_draw(alpha);
      if (out[i] > max_log) max_log = out[i];
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      out[i] = std::exp(out[i] - max_log);
      sum += out[i];
    }
    for (std::size_t i = 0; i < dim; ++i) out[i] /= sum;
  }

  /// Fisher-Yates shuffle with this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dsnet
