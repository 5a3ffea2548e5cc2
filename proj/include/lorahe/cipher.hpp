#pragma once

// RLWE/LWE encryption over power-of-two moduli with the primitive set needed
// for encrypted-vector x clear-matrix products: seeded encryption, sample
// extraction, LWE-to-RLWE key switching, monomial rotation and modulus
// switching.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "lorahe/prng.hpp"
#include "lorahe/ringcore.hpp"

namespace lorahe {

/// Cryptosystem parameters. Defaults are the published 128-bit parameter set.
struct CryptoParams {
  std::size_t poly_size = 2048;
  int beta = 27;        // plaintext bits reserved for computation
  int gamma = 12;       // MSBs that survive noise growth
  int q_in_bits = 39;
  int q_out_bits = 26;
  double sigma_input = 2.845e-15;  // fraction of the ciphertext modulus
  double sigma_ksk = 2.845e-15;
  int ksk_base_log = 10;
  int ksk_levels = 3;

  void validate() const;

  /// log2 of the plaintext scaling factor for fresh input ciphertexts.
  int input_scale_bits() const noexcept { return q_in_bits - beta; }
  std::size_t ksk_rows() const noexcept { return poly_size * static_cast<std::size_t>(ksk_levels); }

  friend bool operator==(const CryptoParams&, const CryptoParams&) = default;
};

/// Binary RLWE secret. The LWE key of extracted samples is its coefficient vector.
class SecretKey {
 public:
  explicit SecretKey(std::vector<uint8_t> bits);

  std::size_t degree() const noexcept { return bits_.size(); }
  std::span<const uint8_t> bits() const noexcept { return bits_; }
  /// The key as a signed cleartext polynomial, ready for negacyclic_mul.
  std::span<const int64_t> as_clear_poly() const noexcept { return clear_; }

 private:
  std::vector<uint8_t> bits_;
  std::vector<int64_t> clear_;
};

struct RlweCiphertext {
  ModPoly mask;
  ModPoly body;
  int scale_bits = 0;  // log2 of the plaintext scaling; negative after aggressive switching

  int modulus_bits() const noexcept { return body.modulus_bits(); }
  std::size_t degree() const noexcept { return body.degree(); }

  /// Encryption of `body` with a zero mask.
  static RlweCiphertext trivial(ModPoly body, int scale_bits);

  RlweCiphertext& operator+=(const RlweCiphertext& other);
  RlweCiphertext& operator-=(const RlweCiphertext& other);
  RlweCiphertext operator-() const;
  friend RlweCiphertext operator+(RlweCiphertext a, const RlweCiphertext& b) { return a += b; }
  friend RlweCiphertext operator-(RlweCiphertext a, const RlweCiphertext& b) { return a -= b; }
  friend bool operator==(const RlweCiphertext&, const RlweCiphertext&) = default;
};

/// Ciphertext whose mask is regenerated from `seed` by expand_mask.
struct SeededRlweCiphertext {
  uint64_t seed = 0;
  ModPoly body;
  int scale_bits = 0;

  RlweCiphertext expand() const;
  friend bool operator==(const SeededRlweCiphertext&, const SeededRlweCiphertext&) = default;
};

struct LweCiphertext {
  std::vector<uint64_t> a;
  uint64_t b = 0;
  int modulus_bits = 0;
  int scale_bits = 0;

  LweCiphertext& operator+=(const LweCiphertext& other);
  friend LweCiphertext operator+(LweCiphertext x, const LweCiphertext& y) { return x += y; }
  friend bool operator==(const LweCiphertext&, const LweCiphertext&) = default;
};

/// Packing key: row i*levels + l of (mask, body) is an RLWE encryption of the
/// constant S_i * 2^(q - (l+1)*base_log). Masks are seeded, so the key can be
/// shipped as (seeds, body) and re-expanded by the receiver.
class KeySwitchKey {
 public:
  KeySwitchKey(CryptoParams params, std::vector<uint64_t> seeds, IntMatrix body);

  const CryptoParams& params() const noexcept { return params_; }
  std::span<const uint64_t> seeds() const noexcept { return seeds_; }
  const IntMatrix& mask_matrix() const noexcept { return mask_; }
  const IntMatrix& body_matrix() const noexcept { return body_; }

  RlweCiphertext entry(std::size_t key_index, int level) const;

 private:
  CryptoParams params_;
  std::vector<uint64_t> seeds_;
  IntMatrix mask_;
  IntMatrix body_;
};

/// The agreed public mask expansion: ChaCha20 keystream of `seed` in the mask
/// domain, one little-endian word per coefficient, reduced mod 2^q_bits.
ModPoly expand_mask(uint64_t seed, std::size_t degree, int q_bits);

/// Rounded Gaussian noise polynomial with std sigma * 2^q_bits.
ModPoly sample_noise(ChaChaStream& rng, std::size_t degree, int q_bits, double sigma);

SecretKey generate_secret_key(const CryptoParams& params, uint64_t master_seed);
KeySwitchKey generate_ksk(const CryptoParams& params, const SecretKey& sk, uint64_t master_seed);
std::pair<SecretKey, KeySwitchKey> keygen(const CryptoParams& params, uint64_t master_seed);

/// Encrypts m (|m_k| < 2^(beta-1)) with a fresh seed drawn from `rng`.
SeededRlweCiphertext encrypt_seeded(const SecretKey& sk, std::span<const int64_t> m,
                                    const CryptoParams& params, ChaChaStream& rng);

/// Phase B - A*S of a ciphertext.
ModPoly phase(const SecretKey& sk, const RlweCiphertext& ct);

/// Maps a phase residue to the centered plaintext, rounding half up.
int64_t decode_phase(uint64_t phase, int modulus_bits, int scale_bits);

std::vector<int64_t> decrypt(const SecretKey& sk, const RlweCiphertext& ct);
std::vector<int64_t> decrypt(const SecretKey& sk, const SeededRlweCiphertext& ct);
int64_t lwe_decrypt(const SecretKey& sk, const LweCiphertext& ct);

LweCiphertext sample_extract(const RlweCiphertext& ct, std::size_t h);

/// Sequential LWE -> RLWE key switch: (0, b) - sum_i Decomp(a_i) . KSK_i.
RlweCiphertext keyswitch(const LweCiphertext& lwe, const KeySwitchKey& ksk);

/// Gadget expansion of every row of `a_lwe`: d_out x (N*levels) matrix of
/// signed digits stored as two's-complement words.
IntMatrix decompose_rows(const IntMatrix& a_lwe, const CryptoParams& params);

/// Key switch of d_out samples at once as two matrix products.
std::vector<RlweCiphertext> keyswitch_batched(const IntMatrix& a_lwe, std::span<const uint64_t> b,
                                              const KeySwitchKey& ksk, int scale_bits,
                                              MatmulOptions opts = {});

/// Multiplies the plaintext by X^j, 0 <= j < 2N.
RlweCiphertext rotate(const RlweCiphertext& ct, std::size_t j);

RlweCiphertext modulus_switch(const RlweCiphertext& ct, int q_out_bits);

}  // namespace lorahe
