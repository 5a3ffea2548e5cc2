#pragma once

// Exact arithmetic over power-of-two moduli: polynomials in Z_q[X]/(X^N+1),
// modulus switching, signed gadget decomposition and a wrap-around integer
// matrix product. Every residue lives in a uint64_t and all reductions are
// masks, so results are bit-exact on any platform.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lorahe {

/// Mask selecting the residue of a value modulo 2^bits.
constexpr uint64_t modulus_mask(int bits) noexcept {
  return bits >= 64 ? ~uint64_t{0} : (uint64_t{1} << bits) - 1;
}

/// Interprets a residue modulo 2^bits as a centered signed integer.
constexpr int64_t center_residue(uint64_t v, int bits) noexcept {
  v &= modulus_mask(bits);
  if (bits < 64 && v >= (uint64_t{1} << (bits - 1))) {
    return static_cast<int64_t>(v) - static_cast<int64_t>(uint64_t{1} << bits);
  }
  return static_cast<int64_t>(v);
}

/// Polynomial of Z_q[X]/(X^N+1) with q = 2^modulus_bits.
class ModPoly {
 public:
  ModPoly() = default;
  /// Zero polynomial of the given degree bound.
  ModPoly(std::size_t degree, int modulus_bits);
  /// Throws if any coefficient is not already reduced or N is not a power of two.
  ModPoly(std::vector<uint64_t> coeffs, int modulus_bits);

  /// Reduces arbitrary words modulo 2^modulus_bits instead of validating them.
  static ModPoly reduce(std::vector<uint64_t> words, int modulus_bits);

  std::size_t degree() const noexcept { return coeffs_.size(); }
  int modulus_bits() const noexcept { return modulus_bits_; }
  uint64_t mask() const noexcept { return modulus_mask(modulus_bits_); }

  std::span<const uint64_t> coeffs() const noexcept { return coeffs_; }
  uint64_t operator[](std::size_t k) const { return coeffs_[k]; }
  void set(std::size_t k, uint64_t v) { coeffs_.at(k) = v & mask(); }

  ModPoly& operator+=(const ModPoly& other);
  ModPoly& operator-=(const ModPoly& other);
  ModPoly operator-() const;

  friend ModPoly operator+(ModPoly a, const ModPoly& b) { return a += b; }
  friend ModPoly operator-(ModPoly a, const ModPoly& b) { return a -= b; }
  friend bool operator==(const ModPoly&, const ModPoly&) = default;

 private:
  void check_compatible(const ModPoly& other) const;

  std::vector<uint64_t> coeffs_;
  int modulus_bits_ = 64;
};

/// Largest cleartext coefficient magnitude accepted by negacyclic_mul.
inline constexpr int64_t kMaxClearCoeff = int64_t{1} << 15;

/// a * w in Z_q[X]/(X^N+1) for a small signed cleartext polynomial w.
ModPoly negacyclic_mul(const ModPoly& a, std::span<const int64_t> w);

/// round(v * 2^(to - from)) mod 2^to with round-half-up.
constexpr uint64_t mod_switch_coeff(uint64_t v, int q_from, int q_to) noexcept {
  if (q_from == q_to) {
    return v & modulus_mask(q_to);
  }
  const int shift = q_from - q_to;
  return ((v + (uint64_t{1} << (shift - 1))) >> shift) & modulus_mask(q_to);
}

/// Balanced signed digits of the top base_log*levels bits of a residue.
/// digits[0] carries weight 2^(q - base_log), digits[levels-1] the lowest.
struct SignedDigits {
  std::vector<int64_t> digits;
  int base_log = 0;
  int levels = 0;
};

SignedDigits decompose(uint64_t v, int q_bits, int base_log, int levels);

/// Allocation-free decomposition used on hot paths. `out` must hold `levels`
/// entries. Parameters are not validated.
inline void decompose_into(uint64_t v, int q_bits, int base_log, int levels,
                           int64_t* out) noexcept {
  const int kept = base_log * levels;
  const int tail = q_bits - kept;
  v &= modulus_mask(q_bits);
  uint64_t rounded = tail > 0 ? (v + (uint64_t{1} << (tail - 1))) >> tail : v;
  rounded &= modulus_mask(kept);
  const uint64_t digit_mask = modulus_mask(base_log);
  const int64_t half = int64_t{1} << (base_log - 1);
  int64_t carry = 0;
  for (int l = levels - 1; l >= 0; --l) {
    int64_t d = static_cast<int64_t>(rounded & digit_mask) + carry;
    rounded >>= base_log;
    carry = d >= half ? 1 : 0;
    out[l] = d - (carry << base_log);
  }
}

/// Row-major matrix of 64-bit words with wrap-around (mod 2^64) semantics.
class IntMatrix {
 public:
  IntMatrix() = default;
  IntMatrix(std::size_t rows, std::size_t cols);
  IntMatrix(std::size_t rows, std::size_t cols, std::vector<uint64_t> data);

  static IntMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  uint64_t& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  uint64_t operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<uint64_t> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const uint64_t> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const uint64_t> data() const noexcept { return data_; }
  std::span<uint64_t> data() noexcept { return data_; }

  friend bool operator==(const IntMatrix&, const IntMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<uint64_t> data_;
};

/// Execution knobs for int_matmul. threads == 0 picks the hardware concurrency.
struct MatmulOptions {
  unsigned threads = 0;
  bool allow_simd = true;
};

/// Wrap-around product a*b mod 2^64.
IntMatrix int_matmul(const IntMatrix& a, const IntMatrix& b, MatmulOptions opts = {});

/// Product a*b reduced mod 2^bits. Bit-identical to masking int_matmul, but
/// may use 52-bit fused multiply-add hardware when bits <= 52.
IntMatrix int_matmul_mod(const IntMatrix& a, const IntMatrix& b, int bits,
                         MatmulOptions opts = {});

/// True when the build carries the AVX-512 kernels.
bool matmul_simd_available() noexcept;

}  // namespace lorahe
