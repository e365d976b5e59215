#pragma once

// Shared small utilities: error types, checked-condition helpers, a portable
// seeded RNG (stable across standard-library implementations), and the FNV-1a
// content hash used by run manifests.

#include <complex>
#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ttns {

// Stamped into run manifests so artifacts can be traced to the code that
// produced them.
inline constexpr std::string_view kCodeVersion = "0.1.0";

using cplx = std::complex<double>;

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an environment-cache entry is consumed after the tensors it was
// built from have changed. Callers must refresh instead of trusting the entry.
class StaleEnvironmentError : public Error {
public:
  explicit StaleEnvironmentError(const std::string& msg) : Error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

template <class T>
inline T require_found(const T& value, const T& sentinel, const std::string& msg) {
  if (value == sentinel) throw Error(msg);
  return value;
}

// --- FNV-1a 64-bit -----------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

// --- Deterministic RNG -------------------------------------------------------
//
// splitmix64 + Box-Muller. The C++ standard does not pin down the sequences of
// std::normal_distribution, so runs seeded through here are reproducible to the
// bit across toolchains.

class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal (Box-Muller, one value per call; the partner is cached).
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-312) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  cplx next_cplx_normal() {
    const double re = next_normal();
    const double im = next_normal();
    return {re, im};
  }

private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// --- misc --------------------------------------------------------------------

inline std::size_t product(const std::vector<std::size_t>& v) {
  std::size_t p = 1;
  for (std::size_t d : v) p *= d;
  return p;
}

// Printf-style double formatting with round-trip precision; used by all text
// output paths so that identical runs produce identical bytes.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace ttns
