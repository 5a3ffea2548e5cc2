#include "lorahe/ringcore.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace lorahe {

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void check_modulus_bits(int bits) {
  if (bits < 1 || bits > 64) {
    throw std::invalid_argument("modulus_bits must lie in [1, 64], got " + std::to_string(bits));
  }
}

}  // namespace

ModPoly::ModPoly(std::size_t degree, int modulus_bits)
    : coeffs_(degree, 0), modulus_bits_(modulus_bits) {
  check_modulus_bits(modulus_bits);
  if (!is_power_of_two(degree)) {
    throw std::invalid_argument("polynomial degree bound must be a power of two");
  }
}

ModPoly::ModPoly(std::vector<uint64_t> coeffs, int modulus_bits)
    : coeffs_(std::move(coeffs)), modulus_bits_(modulus_bits) {
  check_modulus_bits(modulus_bits);
  if (!is_power_of_two(coeffs_.size())) {
    throw std::invalid_argument("polynomial degree bound must be a power of two");
  }
  const uint64_t m = mask();
  for (uint64_t c : coeffs_) {
    if ((c & ~m) != 0) {
      throw std::invalid_argument("coefficient not reduced modulo 2^" + std::to_string(modulus_bits));
    }
  }
}

ModPoly ModPoly::reduce(std::vector<uint64_t> words, int modulus_bits) {
  check_modulus_bits(modulus_bits);
  const uint64_t m = modulus_mask(modulus_bits);
  for (auto& w : words) w &= m;
  return ModPoly(std::move(words), modulus_bits);
}

void ModPoly::check_compatible(const ModPoly& other) const {
  if (degree() != other.degree() || modulus_bits_ != other.modulus_bits_) {
    throw std::invalid_argument("polynomials differ in degree or modulus");
  }
}

ModPoly& ModPoly::operator+=(const ModPoly& other) {
  check_compatible(other);
  const uint64_t m = mask();
  for (std::size_t k = 0; k < coeffs_.size(); ++k) coeffs_[k] = (coeffs_[k] + other.coeffs_[k]) & m;
  return *this;
}

ModPoly& ModPoly::operator-=(const ModPoly& other) {
  check_compatible(other);
  const uint64_t m = mask();
  for (std::size_t k = 0; k < coeffs_.size(); ++k) coeffs_[k] = (coeffs_[k] - other.coeffs_[k]) & m;
  return *this;
}

ModPoly ModPoly::operator-() const {
  ModPoly out = *this;
  const uint64_t m = mask();
  for (auto& c : out.coeffs_) c = (0 - c) & m;
  return out;
}

ModPoly negacyclic_mul(const ModPoly& a, std::span<const int64_t> w) {
  const std::size_t n = a.degree();
  if (w.size() != n) {
    throw std::invalid_argument("negacyclic_mul: cleartext length " + std::to_string(w.size()) +
                                " does not match degree " + std::to_string(n));
  }
  std::vector<uint64_t> wu(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (w[j] > kMaxClearCoeff || w[j] < -kMaxClearCoeff) {
      throw std::invalid_argument("negacyclic_mul: cleartext coefficient exceeds 2^15");
    }
    wu[j] = static_cast<uint64_t>(w[j]);
  }
  // Exact in wrap-around words: q divides 2^64.
  std::vector<uint64_t> acc(n, 0);
  const auto ac = a.coeffs();
  for (std::size_t i = 0; i < n; ++i) {
    const uint64_t ai = ac[i];
    if (ai == 0) continue;
    uint64_t* lo = acc.data() + i;
    const std::size_t split = n - i;
    for (std::size_t j = 0; j < split; ++j) lo[j] += ai * wu[j];
    uint64_t* hi = acc.data() - split;
    for (std::size_t j = split; j < n; ++j) hi[j] -= ai * wu[j];
  }
  return ModPoly::reduce(std::move(acc), a.modulus_bits());
}

SignedDigits decompose(uint64_t v, int q_bits, int base_log, int levels) {
  check_modulus_bits(q_bits);
  if (base_log < 1 || levels < 1 || base_log * levels > q_bits || base_log > 62) {
    throw std::invalid_argument("decompose: need base_log*levels <= q_bits with positive parameters");
  }
  SignedDigits out{std::vector<int64_t>(static_cast<std::size_t>(levels)), base_log, levels};
  decompose_into(v, q_bits, base_log, levels, out.digits.data());
  return out;
}

IntMatrix::IntMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0) {}

IntMatrix::IntMatrix(std::size_t rows, std::size_t cols, std::vector<uint64_t> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("IntMatrix: data length does not match rows*cols");
  }
}

IntMatrix IntMatrix::identity(std::size_t n) {
  IntMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1;
  return m;
}

}  // namespace lorahe
