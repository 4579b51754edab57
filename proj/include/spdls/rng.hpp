#pragma once

#include <cstdint>
#include <random>

#include "spdls/symmat.hpp"

namespace spdls {

/// SplitMix64 finalizer, used to derive child seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of a named random stream. Child streams are derived by hashing the
/// parent seed with a child index, so stream i of seed s is the same no
/// matter which other streams were drawn or in what order.
struct RngSeed {
  std::uint64_t value = 0;

  RngSeed child(std::uint64_t index) const {
    return {splitmix64(value ^ splitmix64(index + 0x632be59bd9b4e019ULL))};
  }

  std::mt19937_64 engine() const { return std::mt19937_64(splitmix64(value)); }

  friend bool operator==(const RngSeed&, const RngSeed&) = default;
};

/// Standard normal draws from one stream.
class NormalStream {
 public:
  explicit NormalStream(RngSeed seed) : engine_(seed.engine()) {}

  double operator()() { return dist_(engine_); }

  Vector vector(long n) {
    Vector v(n);
    for (long i = 0; i < n; ++i) v(i) = dist_(engine_);
    return v;
  }

  Matrix matrix(long rows, long cols) {
    Matrix a(rows, cols);
    // Column-major fill keeps the draw order well defined.
    for (long c = 0; c < cols; ++c)
      for (long r = 0; r < rows; ++r) a(r, c) = dist_(engine_);
    return a;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace spdls
