#include "lorahe/cipher.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lorahe {

void CryptoParams::validate() const {
  if (poly_size == 0 || (poly_size & (poly_size - 1)) != 0) {
    throw std::invalid_argument("poly_size must be a power of two");
  }
  if (!(q_out_bits >= 1 && q_out_bits <= q_in_bits && q_in_bits <= 64)) {
    throw std::invalid_argument("need 1 <= q_out_bits <= q_in_bits <= 64");
  }
  if (!(gamma >= 1 && gamma <= beta && beta <= q_in_bits)) {
    throw std::invalid_argument("need 1 <= gamma <= beta <= q_in_bits");
  }
  if (ksk_base_log < 1 || ksk_levels < 1 || ksk_base_log * ksk_levels > q_in_bits ||
      ksk_base_log > 30) {
    throw std::invalid_argument("key-switch decomposition must satisfy base_log*levels <= q_in_bits");
  }
  if (!(sigma_input >= 0.0) || !(sigma_ksk >= 0.0)) {
    throw std::invalid_argument("noise deviations must be non-negative");
  }
}

SecretKey::SecretKey(std::vector<uint8_t> bits) : bits_(std::move(bits)) {
  clear_.reserve(bits_.size());
  for (uint8_t b : bits_) {
    if (b > 1) throw std::invalid_argument("secret key coefficients must be binary");
    clear_.push_back(b);
  }
}

RlweCiphertext RlweCiphertext::trivial(ModPoly body, int scale_bits) {
  ModPoly mask(body.degree(), body.modulus_bits());
  return {std::move(mask), std::move(body), scale_bits};
}

RlweCiphertext& RlweCiphertext::operator+=(const RlweCiphertext& other) {
  mask += other.mask;
  body += other.body;
  return *this;
}

RlweCiphertext& RlweCiphertext::operator-=(const RlweCiphertext& other) {
  mask -= other.mask;
  body -= other.body;
  return *this;
}

RlweCiphertext RlweCiphertext::operator-() const { return {-mask, -body, scale_bits}; }

RlweCiphertext SeededRlweCiphertext::expand() const {
  return {expand_mask(seed, body.degree(), body.modulus_bits()), body, scale_bits};
}

LweCiphertext& LweCiphertext::operator+=(const LweCiphertext& other) {
  if (a.size() != other.a.size() || modulus_bits != other.modulus_bits) {
    throw std::invalid_argument("LWE samples differ in dimension or modulus");
  }
  const uint64_t m = modulus_mask(modulus_bits);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (a[i] + other.a[i]) & m;
  b = (b + other.b) & m;
  return *this;
}

KeySwitchKey::KeySwitchKey(CryptoParams params, std::vector<uint64_t> seeds, IntMatrix body)
    : params_(params), seeds_(std::move(seeds)), body_(std::move(body)) {
  params_.validate();
  const std::size_t rows = params_.ksk_rows();
  const std::size_t n = params_.poly_size;
  if (seeds_.size() != rows || body_.rows() != rows || body_.cols() != n) {
    throw std::invalid_argument("key-switching key shape does not match parameters");
  }
  const uint64_t m = modulus_mask(params_.q_in_bits);
  for (uint64_t v : body_.data()) {
    if ((v & ~m) != 0) throw std::invalid_argument("key-switching key body not reduced");
  }
  mask_ = IntMatrix(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    const ModPoly a = expand_mask(seeds_[r], n, params_.q_in_bits);
    std::copy(a.coeffs().begin(), a.coeffs().end(), mask_.row(r).begin());
  }
}

RlweCiphertext KeySwitchKey::entry(std::size_t key_index, int level) const {
  if (key_index >= params_.poly_size || level < 0 || level >= params_.ksk_levels) {
    throw std::out_of_range("key-switching key entry out of range");
  }
  const std::size_t r = key_index * static_cast<std::size_t>(params_.ksk_levels) + static_cast<std::size_t>(level);
  const auto a = mask_.row(r);
  const auto b = body_.row(r);
  return {ModPoly({a.begin(), a.end()}, params_.q_in_bits), ModPoly({b.begin(), b.end()}, params_.q_in_bits),
          0};
}

ModPoly expand_mask(uint64_t seed, std::size_t degree, int q_bits) {
  ChaChaStream stream(seed, StreamDomain::kMask);
  std::vector<uint64_t> words(degree);
  stream.fill(words);
  return ModPoly::reduce(std::move(words), q_bits);
}

ModPoly sample_noise(ChaChaStream& rng, std::size_t degree, int q_bits, double sigma) {
  const double std_abs = std::ldexp(sigma, q_bits);
  std::vector<uint64_t> words(degree);
  for (auto& w : words) {
    w = static_cast<uint64_t>(static_cast<int64_t>(std::llround(rng.gaussian() * std_abs)));
  }
  return ModPoly::reduce(std::move(words), q_bits);
}

SecretKey generate_secret_key(const CryptoParams& params, uint64_t master_seed) {
  params.validate();
  ChaChaStream stream(master_seed, StreamDomain::kSecretKey);
  std::vector<uint8_t> bits(params.poly_size);
  uint64_t word = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (i % 64 == 0) word = stream.next_u64();
    bits[i] = static_cast<uint8_t>((word >> (i % 64)) & 1);
  }
  return SecretKey(std::move(bits));
}

namespace {

// Row m is X^m * S, so (A*S) = A_row * matrix.
IntMatrix negacyclic_key_matrix(const SecretKey& sk) {
  const std::size_t n = sk.degree();
  IntMatrix t(n, n);
  const auto s = sk.bits();
  for (std::size_t m = 0; m < n; ++m) {
    auto row = t.row(m);
    for (std::size_t k = 0; k < n; ++k) {
      row[k] = k >= m ? uint64_t{s[k - m]} : uint64_t{0} - s[k + n - m];
    }
  }
  return t;
}

}  // namespace

KeySwitchKey generate_ksk(const CryptoParams& params, const SecretKey& sk, uint64_t master_seed) {
  params.validate();
  const std::size_t n = params.poly_size;
  if (sk.degree() != n) throw std::invalid_argument("secret key degree does not match parameters");
  const int q = params.q_in_bits;
  const std::size_t rows = params.ksk_rows();

  ChaChaStream seed_stream(master_seed, StreamDomain::kSeeds);
  std::vector<uint64_t> seeds(rows);
  seed_stream.fill(seeds);

  IntMatrix masks(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    const ModPoly a = expand_mask(seeds[r], n, q);
    std::copy(a.coeffs().begin(), a.coeffs().end(), masks.row(r).begin());
  }
  IntMatrix body = int_matmul_mod(masks, negacyclic_key_matrix(sk), q);

  ChaChaStream noise(master_seed, StreamDomain::kNoise);
  const uint64_t qmask = modulus_mask(q);
  const double std_abs = std::ldexp(params.sigma_ksk, q);
  const auto s = sk.bits();
  for (std::size_t i = 0; i < n; ++i) {
    for (int l = 0; l < params.ksk_levels; ++l) {
      const std::size_t r = i * static_cast<std::size_t>(params.ksk_levels) + static_cast<std::size_t>(l);
      auto row = body.row(r);
      for (auto& v : row) {
        v = (v + static_cast<uint64_t>(static_cast<int64_t>(std::llround(noise.gaussian() * std_abs)))) & qmask;
      }
      const int shift = q - (l + 1) * params.ksk_base_log;
      row[0] = (row[0] + (uint64_t{s[i]} << shift)) & qmask;
    }
  }
  return KeySwitchKey(params, std::move(seeds), std::move(body));
}

std::pair<SecretKey, KeySwitchKey> keygen(const CryptoParams& params, uint64_t master_seed) {
  SecretKey sk = generate_secret_key(params, master_seed);
  KeySwitchKey ksk = generate_ksk(params, sk, master_seed);
  return {std::move(sk), std::move(ksk)};
}

SeededRlweCiphertext encrypt_seeded(const SecretKey& sk, std::span<const int64_t> m,
                                    const CryptoParams& params, ChaChaStream& rng) {
  const std::size_t n = params.poly_size;
  if (m.size() != n || sk.degree() != n) {
    throw std::invalid_argument("encrypt_seeded: message length must equal the polynomial size");
  }
  const int64_t bound = int64_t{1} << (params.beta - 1);
  const int q = params.q_in_bits;
  const int scale = params.input_scale_bits();
  const uint64_t qmask = modulus_mask(q);

  const uint64_t seed = rng.next_u64();
  const ModPoly a = expand_mask(seed, n, q);
  ModPoly body = negacyclic_mul(a, sk.as_clear_poly());
  body += sample_noise(rng, n, q, params.sigma_input);
  for (std::size_t k = 0; k < n; ++k) {
    if (m[k] >= bound || m[k] <= -bound) {
      throw std::invalid_argument("encrypt_seeded: message coefficient outside +-2^(beta-1)");
    }
    body.set(k, body[k] + ((static_cast<uint64_t>(m[k]) << scale) & qmask));
  }
  return {seed, std::move(body), scale};
}

ModPoly phase(const SecretKey& sk, const RlweCiphertext& ct) {
  if (sk.degree() != ct.degree()) throw std::invalid_argument("key and ciphertext degree differ");
  return ct.body - negacyclic_mul(ct.mask, sk.as_clear_poly());
}

int64_t decode_phase(uint64_t phase_value, int modulus_bits, int scale_bits) {
  const int plain_bits = modulus_bits - scale_bits;
  uint64_t v = phase_value & modulus_mask(modulus_bits);
  if (scale_bits > 0) {
    v = (v + (uint64_t{1} << (scale_bits - 1))) >> scale_bits;
  } else if (scale_bits < 0) {
    v <<= -scale_bits;
  }
  return center_residue(v, plain_bits);
}

std::vector<int64_t> decrypt(const SecretKey& sk, const RlweCiphertext& ct) {
  const ModPoly ph = phase(sk, ct);
  std::vector<int64_t> out(ph.degree());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = decode_phase(ph[k], ct.modulus_bits(), ct.scale_bits);
  return out;
}

std::vector<int64_t> decrypt(const SecretKey& sk, const SeededRlweCiphertext& ct) {
  return decrypt(sk, ct.expand());
}

int64_t lwe_decrypt(const SecretKey& sk, const LweCiphertext& ct) {
  if (ct.a.size() != sk.degree()) throw std::invalid_argument("LWE dimension does not match key");
  uint64_t dot = 0;
  const auto s = sk.bits();
  for (std::size_t i = 0; i < ct.a.size(); ++i) dot += ct.a[i] * s[i];
  return decode_phase(ct.b - dot, ct.modulus_bits, ct.scale_bits);
}

LweCiphertext sample_extract(const RlweCiphertext& ct, std::size_t h) {
  const std::size_t n = ct.degree();
  if (h >= n) throw std::out_of_range("sample_extract: index " + std::to_string(h) + " out of range");
  const uint64_t m = ct.mask.mask();
  LweCiphertext out{std::vector<uint64_t>(n), ct.body[h], ct.modulus_bits(), ct.scale_bits};
  for (std::size_t i = 0; i <= h; ++i) out.a[i] = ct.mask[h - i];
  for (std::size_t i = h + 1; i < n; ++i) out.a[i] = (0 - ct.mask[n + h - i]) & m;
  return out;
}

RlweCiphertext keyswitch(const LweCiphertext& lwe, const KeySwitchKey& ksk) {
  const CryptoParams& p = ksk.params();
  if (lwe.modulus_bits != p.q_in_bits) throw std::invalid_argument("keyswitch: modulus mismatch");
  if (lwe.a.size() != p.poly_size) throw std::invalid_argument("keyswitch: LWE dimension mismatch");
  const std::size_t n = p.poly_size;
  const auto levels = static_cast<std::size_t>(p.ksk_levels);
  std::vector<uint64_t> acc_a(n, 0), acc_b(n, 0);
  acc_b[0] = lwe.b;
  std::vector<int64_t> digits(levels);
  for (std::size_t i = 0; i < n; ++i) {
    decompose_into(lwe.a[i], p.q_in_bits, p.ksk_base_log, p.ksk_levels, digits.data());
    for (std::size_t l = 0; l < levels; ++l) {
      const auto d = static_cast<uint64_t>(digits[l]);
      if (d == 0) continue;
      const auto ka = ksk.mask_matrix().row(i * levels + l);
      const auto kb = ksk.body_matrix().row(i * levels + l);
      for (std::size_t k = 0; k < n; ++k) {
        acc_a[k] -= d * ka[k];
        acc_b[k] -= d * kb[k];
      }
    }
  }
  return {ModPoly::reduce(std::move(acc_a), p.q_in_bits), ModPoly::reduce(std::move(acc_b), p.q_in_bits),
          lwe.scale_bits};
}

IntMatrix decompose_rows(const IntMatrix& a_lwe, const CryptoParams& params) {
  const std::size_t levels = static_cast<std::size_t>(params.ksk_levels);
  IntMatrix out(a_lwe.rows(), a_lwe.cols() * levels);
  int64_t digits[64];
  for (std::size_t r = 0; r < a_lwe.rows(); ++r) {
    const auto src = a_lwe.row(r);
    auto dst = out.row(r);
    for (std::size_t i = 0; i < src.size(); ++i) {
      decompose_into(src[i], params.q_in_bits, params.ksk_base_log, params.ksk_levels, digits);
      for (std::size_t l = 0; l < levels; ++l) dst[i * levels + l] = static_cast<uint64_t>(digits[l]);
    }
  }
  return out;
}

std::vector<RlweCiphertext> keyswitch_batched(const IntMatrix& a_lwe, std::span<const uint64_t> b,
                                              const KeySwitchKey& ksk, int scale_bits,
                                              MatmulOptions opts) {
  const CryptoParams& p = ksk.params();
  if (a_lwe.cols() != p.poly_size || b.size() != a_lwe.rows()) {
    throw std::invalid_argument("keyswitch_batched: shapes do not match the key");
  }
  const int q = p.q_in_bits;
  const uint64_t qmask = modulus_mask(q);
  const IntMatrix digits = decompose_rows(a_lwe, p);
  const IntMatrix prod_a = int_matmul_mod(digits, ksk.mask_matrix(), q, opts);
  const IntMatrix prod_b = int_matmul_mod(digits, ksk.body_matrix(), q, opts);

  std::vector<RlweCiphertext> out;
  out.reserve(a_lwe.rows());
  for (std::size_t j = 0; j < a_lwe.rows(); ++j) {
    std::vector<uint64_t> ma(p.poly_size), mb(p.poly_size);
    const auto ra = prod_a.row(j);
    const auto rb = prod_b.row(j);
    for (std::size_t k = 0; k < p.poly_size; ++k) {
      ma[k] = (0 - ra[k]) & qmask;
      mb[k] = (0 - rb[k]) & qmask;
    }
    mb[0] = (mb[0] + b[j]) & qmask;
    out.push_back({ModPoly(std::move(ma), q), ModPoly(std::move(mb), q), scale_bits});
  }
  return out;
}

namespace {

ModPoly rotate_poly(const ModPoly& p, std::size_t j) {
  const std::size_t n = p.degree();
  const uint64_t m = p.mask();
  std::vector<uint64_t> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t t = (k + j) % (2 * n);
    if (t < n) {
      out[t] = p[k];
    } else {
      out[t - n] = (0 - p[k]) & m;
    }
  }
  return ModPoly(std::move(out), p.modulus_bits());
}

}  // namespace

RlweCiphertext rotate(const RlweCiphertext& ct, std::size_t j) {
  if (j >= 2 * ct.degree()) throw std::out_of_range("rotate: degree must be below 2N");
  return {rotate_poly(ct.mask, j), rotate_poly(ct.body, j), ct.scale_bits};
}

RlweCiphertext modulus_switch(const RlweCiphertext& ct, int q_out_bits) {
  const int q_in = ct.modulus_bits();
  if (q_out_bits < 1 || q_out_bits > q_in) {
    throw std::invalid_argument("modulus_switch: target modulus must not exceed the current one");
  }
  auto switch_poly = [&](const ModPoly& p) {
    std::vector<uint64_t> out(p.degree());
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = mod_switch_coeff(p[k], q_in, q_out_bits);
    return ModPoly(std::move(out), q_out_bits);
  };
  return {switch_poly(ct.mask), switch_poly(ct.body), ct.scale_bits - (q_in - q_out_bits)};
}

}  // namespace lorahe
