#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace kgadapt {

/// Seeded generator with platform-independent draws. The distributions are
/// written out here because the std:: ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Child generator for an independent named stream.
  Rng split(std::string_view stream) const;
  static std::uint64_t mix(std::uint64_t seed, std::string_view stream);

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                                   // [0, 1)
  std::size_t below(std::size_t n);                   // [0, n)
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kgadapt
