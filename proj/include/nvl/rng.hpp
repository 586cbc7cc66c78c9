#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace nvl {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter apply(Counter ctr, Key key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }
};

// Uniform in (0, 1) from two 32-bit words; never returns 0 or 1.
inline double to_unit_open(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (std::uint64_t{hi} << 21) ^ (lo >> 11);  // 53 bits
  return (static_cast<double>(bits & ((std::uint64_t{1} << 53) - 1)) + 0.5) * 0x1.0p-53;
}

inline std::array<double, 2> box_muller(double u1, double u2) {
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(a), r * std::sin(a)};
}

// Stateless noise keyed by (seed, chain, step, particle); each call yields
// four standard normals, enough for one particle's velocity components.
class KeyedNormal {
 public:
  explicit KeyedNormal(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  std::array<double, 4> normals(std::uint32_t chain, std::uint64_t step, std::uint32_t particle,
                                std::uint32_t purpose = 0) const {
    const Philox4x32::Counter ctr{particle, chain, static_cast<std::uint32_t>(step),
                                  static_cast<std::uint32_t>((step >> 32) & 0xFFFFu) | (purpose << 16)};
    const auto w = Philox4x32::apply(ctr, key_);
    const auto a = box_muller(to_unit_open(w[0], w[1]), to_unit_open(w[2], w[3]));
    const Philox4x32::Counter ctr2{particle, chain, ctr[2], ctr[3] | 0x80000000u};
    const auto w2 = Philox4x32::apply(ctr2, key_);
    const auto b = box_muller(to_unit_open(w2[0], w2[1]), to_unit_open(w2[2], w2[3]));
    return {a[0], a[1], b[0], b[1]};
  }

 private:
  Philox4x32::Key key_;
};

// Sequential stream over the counter space of one (seed, stream, purpose).
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint32_t stream, std::uint32_t purpose = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream),
        purpose_(purpose) {}

  std::uint32_t next_u32() {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  double uniform() {
    const std::uint32_t hi = next_u32();
    return to_unit_open(hi, next_u32());
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const auto z = box_muller(u1, uniform());
    spare_ = z[1];
    has_spare_ = true;
    return z[0];
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  void refill() {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(counter_),
                                  static_cast<std::uint32_t>(counter_ >> 32), stream_, purpose_ | 0x40000000u};
    buf_ = Philox4x32::apply(ctr, key_);
    ++counter_;
    pos_ = 0;
  }

  Philox4x32::Key key_;
  std::uint32_t stream_;
  std::uint32_t purpose_;
  std::uint64_t counter_ = 0;
  Philox4x32::Counter buf_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace nvl
