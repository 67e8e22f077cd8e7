#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace mvh {

// Philox4x32-10 block cipher used as a counter-based generator. Streams are
// addressed by (seed, ensemble, path, role); a path's stream therefore never
// depends on batch size or on which worker simulated it.
struct Philox4x32 {
  static std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr,
                                       std::array<uint32_t, 2> key) {
    constexpr uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      uint64_t p0 = static_cast<uint64_t>(M0) * ctr[0];
      uint64_t p1 = static_cast<uint64_t>(M1) * ctr[2];
      std::array<uint32_t, 4> out;
      out[0] = static_cast<uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0];
      out[1] = static_cast<uint32_t>(p1);
      out[2] = static_cast<uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1];
      out[3] = static_cast<uint32_t>(p0);
      ctr = out;
      key[0] += W0;
      key[1] += W1;
    }
    return ctr;
  }
};

// Stream roles; adding one at the end keeps existing streams stable.
enum class StreamRole : uint32_t {
  brownian_w = 0,
  brownian_b = 1,
  brownian_v = 2,
  events = 3,
  marks = 4,
  init = 5,
  innovation_n = 6,
  innovation_m = 7,
};

class RngStream {
 public:
  RngStream(uint64_t seed, uint32_t ensemble, uint32_t path, StreamRole role)
      : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
        base_{0u, static_cast<uint32_t>(role), path, ensemble} {}

  uint32_t next_u32() {
    if (pos_ == 4) {
      buf_ = Philox4x32::block(base_, key_);
      ++base_[0];
      pos_ = 0;
    }
    return buf_[pos_++];
  }

  // 53-bit uniform in [0, 1).
  double uniform() {
    uint64_t hi = next_u32();
    uint64_t lo = next_u32();
    return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1.0p-53;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double exponential(double rate) {
    return -std::log1p(-uniform()) / rate;
  }

 private:
  std::array<uint32_t, 2> key_;
  std::array<uint32_t, 4> base_;
  std::array<uint32_t, 4> buf_{};
  int pos_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mvh
