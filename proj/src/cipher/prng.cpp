#include "lorahe/prng.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace lorahe {

struct ChaChaStream::Cipher {
  struct CtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
  };
  std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter> ctx;
};

ChaChaStream::ChaChaStream(uint64_t seed, StreamDomain domain) : cipher_(std::make_unique<Cipher>()) {
  cipher_->ctx.reset(EVP_CIPHER_CTX_new());
  if (!cipher_->ctx) throw std::runtime_error("EVP_CIPHER_CTX_new failed");

  unsigned char key[32] = {};
  for (int i = 0; i < 8; ++i) key[i] = static_cast<unsigned char>(seed >> (8 * i));
  // OpenSSL's IV is the 4-byte block counter followed by the 12-byte nonce.
  unsigned char iv[16] = {};
  iv[4] = static_cast<unsigned char>(domain);
  if (EVP_EncryptInit_ex(cipher_->ctx.get(), EVP_chacha20(), nullptr, key, iv) != 1) {
    throw std::runtime_error("EVP_EncryptInit_ex(chacha20) failed");
  }
}

ChaChaStream::~ChaChaStream() = default;
ChaChaStream::ChaChaStream(ChaChaStream&&) noexcept = default;
ChaChaStream& ChaChaStream::operator=(ChaChaStream&&) noexcept = default;

void ChaChaStream::refill() {
  static const unsigned char zeros[sizeof(buffer_)] = {};
  unsigned char bytes[sizeof(buffer_)];
  int produced = 0;
  if (EVP_EncryptUpdate(cipher_->ctx.get(), bytes, &produced, zeros, sizeof(zeros)) != 1 ||
      produced != static_cast<int>(sizeof(bytes))) {
    throw std::runtime_error("chacha20 keystream generation failed");
  }
  for (std::size_t i = 0; i < buffer_.size(); ++i) {
    uint64_t w = 0;
    for (int b = 7; b >= 0; --b) w = (w << 8) | bytes[i * 8 + static_cast<std::size_t>(b)];
    buffer_[i] = w;
  }
  pos_ = 0;
}

uint64_t ChaChaStream::next_u64() {
  if (pos_ == buffer_.size()) refill();
  return buffer_[pos_++];
}

void ChaChaStream::fill(std::span<uint64_t> out) {
  for (auto& w : out) w = next_u64();
}

double ChaChaStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double ChaChaStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_gaussian_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_gaussian_ = radius * std::sin(theta);
  has_spare_ = true;
  return radius * std::cos(theta);
}

int64_t ChaChaStream::uniform_int(int64_t lo, int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<int64_t>(next_u64());
  // Rejection sampling keeps the draw unbiased.
  const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % span);
  uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return lo + static_cast<int64_t>(r % span);
}

}  // namespace lorahe
