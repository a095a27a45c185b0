#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace interrogate {

// Seeded RNG with self-contained distributions. std:: distributions are
// implementation-defined, so normal/uniform are derived here from raw
// mt19937_64 draws to keep every run bitwise reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(engine_() % static_cast<uint64_t>(n));
  }

  // Standard normal via Box-Muller; caches the second value.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::vector<double> normal_vec(size_t n, double mean, double stddev) {
    std::vector<double> out(n);
    for (auto& v : out) v = normal(mean, stddev);
    return out;
  }

  // Fisher-Yates shuffle of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(engine_() % static_cast<uint64_t>(i + 1));
      std::swap(idx[i], idx[j]);
    }
    return idx;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace interrogate
