#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>

namespace lorahe {

/// Purpose tags separating the keystreams derived from one 64-bit seed.
enum class StreamDomain : uint8_t {
  kMask = 0,       // public ciphertext masks (the agreed expansion)
  kSecretKey = 1,
  kNoise = 2,
  kSeeds = 3,      // fresh per-ciphertext seeds
  kModel = 4,      // toy-model weights and data shuffles
};

/// Deterministic ChaCha20 keystream. Key = seed (8 bytes, little-endian)
/// followed by 24 zero bytes; nonce = domain byte followed by 11 zero bytes;
/// block counter starts at 0. Words are read as little-endian uint64.
class ChaChaStream {
 public:
  ChaChaStream(uint64_t seed, StreamDomain domain);
  ~ChaChaStream();
  ChaChaStream(ChaChaStream&&) noexcept;
  ChaChaStream& operator=(ChaChaStream&&) noexcept;
  ChaChaStream(const ChaChaStream&) = delete;
  ChaChaStream& operator=(const ChaChaStream&) = delete;

  uint64_t next_u64();
  void fill(std::span<uint64_t> out);

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double gaussian();
  /// Uniform integer in [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi);

 private:
  void refill();

  struct Cipher;
  std::unique_ptr<Cipher> cipher_;
  std::array<uint64_t, 512> buffer_{};
  std::size_t pos_ = 512;
  double spare_gaussian_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace lorahe
