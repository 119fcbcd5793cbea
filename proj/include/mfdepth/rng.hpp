#pragma once

// Counter-based Philox4x32-10 generator. A stream is addressed by
// (seed, network, layer, role); any block can be generated independently,
// so ensemble members can be sampled in any order or in parallel.

#include <array>
#include <cstdint>
#include <limits>

namespace mfdepth {

using PhiloxBlock = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

inline PhiloxBlock philox4x32_10(PhiloxBlock ctr, PhiloxKey key) noexcept {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  std::uint32_t c0 = ctr[0], c1 = ctr[1], c2 = ctr[2], c3 = ctr[3];
  std::uint32_t k0 = key[0], k1 = key[1];
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c0;
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c2;
    const std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1 ^ k0;
    const std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3 ^ k1;
    c1 = static_cast<std::uint32_t>(p1);
    c3 = static_cast<std::uint32_t>(p0);
    c0 = n0;
    c2 = n2;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return {c0, c1, c2, c3};
}

// Roles keep weights, biases, masks and inputs of the same layer on disjoint streams.
enum class StreamRole : std::uint8_t {
  weights = 1,
  biases = 2,
  mask_a = 3,
  mask_b = 4,
  backward_weights = 5,
  readout_weights = 6,
  readout_biases = 7,
  inputs = 8,
  backward_readout = 9,
};

// UniformRandomBitGenerator over one (seed, network, layer, role) substream.
class PhiloxStream {
 public:
  using result_type = std::uint32_t;

  PhiloxStream(std::uint64_t seed, std::uint32_t network, std::uint32_t layer, StreamRole role)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        ctr_{0u, (layer & 0x00FFFFFFu) | (static_cast<std::uint32_t>(role) << 24), network, 0u} {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (pos_ == kBuffered) refill();
    return buffer_[pos_++];
  }

 private:
  static constexpr int kBlocks = 16;
  static constexpr int kBuffered = 4 * kBlocks;

  void refill() noexcept {
    for (int b = 0; b < kBlocks; ++b) {
      const PhiloxBlock out = philox4x32_10(ctr_, key_);
      for (int j = 0; j < 4; ++j) buffer_[4 * b + j] = out[j];
      if (++ctr_[0] == 0) ++ctr_[3];
    }
    pos_ = 0;
  }

  PhiloxKey key_;
  PhiloxBlock ctr_;
  std::array<std::uint32_t, kBuffered> buffer_{};
  int pos_ = kBuffered;
};

}  // namespace mfdepth
