#pragma once

// Encrypted-vector x clear-matrix products. The client encrypts an integer
// vector block-wise; the server multiplies by reversed weight polynomials,
// extracts the dot products as LWE samples, packs them back into RLWE
// ciphertexts with a batched key switch and shrinks them by modulus switching.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lorahe/cipher.hpp"

namespace lorahe {

/// Largest inner dimension accepted by the pipeline for 8-bit operands.
std::size_t max_input_dim(const CryptoParams& params) noexcept;

/// Public weight matrix in reversed block encoding: column block i of row j
/// holds w_j[iN + N - 1 - k] at position k (zero beyond d_in).
class ServerWeights {
 public:
  ServerWeights() = default;

  const std::string& matrix_id() const noexcept { return matrix_id_; }
  std::size_t d_out() const noexcept { return d_out_; }
  std::size_t d_in() const noexcept { return d_in_; }
  std::size_t poly_size() const noexcept { return poly_size_; }
  std::size_t blocks() const noexcept { return (d_in_ + poly_size_ - 1) / poly_size_; }
  int weight_bits() const noexcept { return weight_bits_; }

  /// Cleartext polynomial for output j and input block i.
  std::vector<int64_t> block(std::size_t j, std::size_t i) const;
  /// The original row-major matrix, recovered by undoing the reversal.
  std::vector<int64_t> decode() const;

  /// Nonzero part of the encoding with the reversal folded back: row j,
  /// column c holds w_j[c] as a two's-complement word. Coefficient N-1 of
  /// block(j, i) * x_i picks up exactly these entries, each multiplied by the
  /// input sample extracted at c mod N.
  const IntMatrix& packed() const noexcept { return packed_; }

 private:
  friend ServerWeights encode_weights(std::string, std::span<const int64_t>, std::size_t, std::size_t,
                                      const CryptoParams&, int);
  std::string matrix_id_;
  std::size_t d_out_ = 0;
  std::size_t d_in_ = 0;
  std::size_t poly_size_ = 0;
  int weight_bits_ = 8;
  IntMatrix packed_;
};

/// Encodes a row-major d_out x d_in matrix with entries in the signed
/// weight_bits range.
ServerWeights encode_weights(std::string matrix_id, std::span<const int64_t> w, std::size_t d_out,
                             std::size_t d_in, const CryptoParams& params, int weight_bits = 8);

struct EncryptedActivation {
  std::vector<SeededRlweCiphertext> blocks;
  std::size_t d_in = 0;
};

EncryptedActivation encrypt_activation(const SecretKey& sk, std::span<const int64_t> x,
                                       const CryptoParams& params, ChaChaStream& rng);

/// d_out LWE samples stored as rows: a is d_out x N, b has d_out entries.
struct LweBatch {
  IntMatrix a;
  std::vector<uint64_t> b;
  int modulus_bits = 0;
  int scale_bits = 0;

  std::size_t size() const noexcept { return b.size(); }
  LweCiphertext sample(std::size_t j) const;
};

/// Row j decrypts to sum_k x_k w_j[k]. Computed as a single integer matrix
/// product; equal bit for bit to extracting coefficient N-1 of every block
/// product and summing the samples.
LweBatch enc_dot_products(const EncryptedActivation& act, const ServerWeights& w,
                          const CryptoParams& params, MatmulOptions opts = {});

struct PackedOutput {
  std::vector<RlweCiphertext> ciphertexts;
  std::size_t d_out = 0;
};

/// Packs sample j into coefficient j mod N of ciphertext j / N, then switches
/// every ciphertext to q_out.
PackedOutput pack_outputs(const LweBatch& lwes, const KeySwitchKey& ksk, MatmulOptions opts = {});

/// Server side of one request: dot products and packing for each token.
/// Key-switch work from all tokens is batched together.
std::vector<PackedOutput> server_matvec(const ServerWeights& w, std::span<const EncryptedActivation> tokens,
                                        const KeySwitchKey& ksk, MatmulOptions opts = {});

std::vector<int64_t> decrypt_packed(const SecretKey& sk, const PackedOutput& out);

/// Client encrypt, server multiply and client decrypt in one process.
std::vector<int64_t> enc_matvec(std::span<const int64_t> x_q, const ServerWeights& w, const SecretKey& sk,
                                const KeySwitchKey& ksk, ChaChaStream& rng, MatmulOptions opts = {});

/// True when y agrees with the exact value on the top gamma of beta bits,
/// i.e. the centered difference mod 2^beta is below 2^(beta - gamma).
bool msb_agree(int64_t y, int64_t exact, const CryptoParams& params) noexcept;

struct BitErrorRow {
  std::size_t d_in = 0;
  int bit_position = 0;
  double error_rate = 0.0;
  std::size_t trials = 0;
};

/// Per-bit error rates of decrypted dot products against the integer oracle,
/// with 8-bit uniform operands. Bit b of a trial is in error when the beta-bit
/// two's-complement encodings of the two values differ there.
std::vector<BitErrorRow> bit_error_study(std::span<const std::size_t> d_in_list, std::size_t trials,
                                         const SecretKey& sk, const KeySwitchKey& ksk, uint64_t seed,
                                         MatmulOptions opts = {});

}  // namespace lorahe
