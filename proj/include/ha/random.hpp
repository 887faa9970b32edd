#pragma once

// Counter-based random streams. A stream is addressed by (seed, stream id);
// draws depend only on that address and the number of values consumed, so
// parallel chains reproduce regardless of thread scheduling.

#include <array>
#include <cstdint>

namespace ha {

/// Philox4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

  /// Independent child stream; deterministic function of (seed, stream, child).
  RngStream split(std::uint64_t child) const;

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  /// Gamma with the given shape and rate (mean shape/rate).
  double gamma(double shape, double rate);
  double chi_square(double df);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  bool operator==(const RngStream& other) const = default;

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ha
