#include <gtest/gtest.h>

#include <optional>
#include <random>
#include <vector>

#include "lorahe/encmm.hpp"

using namespace lorahe;

namespace {

struct Keys {
  SecretKey sk;
  KeySwitchKey ksk;
};

const Keys& default_keys() {
  static const Keys keys = [] {
    auto [sk, ksk] = keygen(CryptoParams{}, 2024);
    return Keys{std::move(sk), std::move(ksk)};
  }();
  return keys;
}

std::vector<int64_t> random_ints(std::mt19937_64& rng, std::size_t n, int64_t lim = 127) {
  std::vector<int64_t> v(n);
  for (auto& x : v) x = static_cast<int64_t>(rng() % static_cast<uint64_t>(2 * lim + 1)) - lim;
  return v;
}

std::vector<int64_t> matvec(const std::vector<int64_t>& w, const std::vector<int64_t>& x, std::size_t d_out) {
  const std::size_t d_in = x.size();
  std::vector<int64_t> y(d_out, 0);
  for (std::size_t j = 0; j < d_out; ++j)
    for (std::size_t c = 0; c < d_in; ++c) y[j] += w[j * d_in + c] * x[c];
  return y;
}

// Dot products the long way: polynomial product per block, extract N-1, add.
std::vector<LweCiphertext> literal_dot_products(const EncryptedActivation& act, const ServerWeights& w) {
  std::vector<LweCiphertext> out;
  const std::size_t n = w.poly_size();
  for (std::size_t j = 0; j < w.d_out(); ++j) {
    std::optional<LweCiphertext> acc;
    for (std::size_t i = 0; i < w.blocks(); ++i) {
      const RlweCiphertext ct = act.blocks[i].expand();
      const auto wb = w.block(j, i);
      const RlweCiphertext prod{negacyclic_mul(ct.mask, wb), negacyclic_mul(ct.body, wb), ct.scale_bits};
      const auto lwe = sample_extract(prod, n - 1);
      acc = acc ? *acc + lwe : lwe;
    }
    out.push_back(*acc);
  }
  return out;
}

}  // namespace

TEST(EncodeWeights, ReversalForcedByIndexFormula) {
  const CryptoParams p;
  std::vector<int64_t> w(p.poly_size, 0);
  w[0] = 1;
  const auto sw = encode_weights("e0", w, 1, p.poly_size, p);
  const auto poly = sw.block(0, 0);
  for (std::size_t k = 0; k < p.poly_size; ++k) EXPECT_EQ(poly[k], k == p.poly_size - 1 ? 1 : 0);
}

TEST(EncodeWeights, RoundTripAndZero) {
  CryptoParams p;
  std::mt19937_64 rng(1);
  const std::size_t d_in = 2 * p.poly_size + 5;
  const auto w = random_ints(rng, 3 * d_in, 128);
  std::vector<int64_t> clipped = w;
  for (auto& v : clipped) v = std::min<int64_t>(v, 127);
  const auto sw = encode_weights("r", clipped, 3, d_in, p);
  EXPECT_EQ(sw.blocks(), 3u);
  EXPECT_EQ(sw.decode(), clipped);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 3; ++i) {
      const auto poly = sw.block(j, i);
      for (std::size_t k = 0; k < p.poly_size; ++k) {
        const std::size_t c = i * p.poly_size + p.poly_size - 1 - k;
        ASSERT_EQ(poly[k], c < d_in ? clipped[j * d_in + c] : 0);
      }
    }
  const auto zero = encode_weights("z", std::vector<int64_t>(2 * 10, 0), 2, 10, p);
  EXPECT_EQ(zero.block(1, 0), std::vector<int64_t>(p.poly_size, 0));
}

TEST(EncodeWeights, RejectsOutOfRange) {
  const CryptoParams p;
  EXPECT_THROW(encode_weights("x", std::vector<int64_t>{128}, 1, 1, p), std::invalid_argument);
  EXPECT_THROW(encode_weights("x", std::vector<int64_t>{-129}, 1, 1, p), std::invalid_argument);
  EXPECT_NO_THROW(encode_weights("x", std::vector<int64_t>{-128}, 1, 1, p));
  EXPECT_NO_THROW(encode_weights("x", std::vector<int64_t>{1000}, 1, 1, p, 12));
  EXPECT_THROW(encode_weights("x", std::vector<int64_t>{1, 2}, 1, 1, p), std::invalid_argument);
}

TEST(EncDotProducts, MatchesLiteralRouteBitExactly) {
  const CryptoParams p;
  const auto& k = default_keys();
  std::mt19937_64 rng(2);
  ChaChaStream enc(3, StreamDomain::kSeeds);
  for (std::size_t d_in : {std::size_t{5}, std::size_t{2048}, std::size_t{2100}}) {
    const std::size_t d_out = 3;
    const auto x = random_ints(rng, d_in), w = random_ints(rng, d_out * d_in);
    const auto act = encrypt_activation(k.sk, x, p, enc);
    const auto sw = encode_weights("m", w, d_out, d_in, p);
    const LweBatch batch = enc_dot_products(act, sw, p);
    const auto literal = literal_dot_products(act, sw);
    const auto exact = matvec(w, x, d_out);
    for (std::size_t j = 0; j < d_out; ++j) {
      ASSERT_EQ(batch.sample(j), literal[j]) << d_in << " " << j;
      ASSERT_EQ(lwe_decrypt(k.sk, batch.sample(j)), exact[j]);
    }
  }
}

TEST(EncDotProducts, OneHotReadsColumn) {
  const CryptoParams p;
  const auto& k = default_keys();
  std::mt19937_64 rng(4);
  ChaChaStream enc(5, StreamDomain::kSeeds);
  const std::size_t d_in = 768, d_out = 16, t = 300;
  std::vector<int64_t> x(d_in, 0);
  x[t] = 1;
  const auto w = random_ints(rng, d_out * d_in);
  const auto batch = enc_dot_products(encrypt_activation(k.sk, x, p, enc), encode_weights("m", w, d_out, d_in, p), p);
  for (std::size_t j = 0; j < d_out; ++j) EXPECT_EQ(lwe_decrypt(k.sk, batch.sample(j)), w[j * d_in + t]);

  const auto zero = enc_dot_products(encrypt_activation(k.sk, std::vector<int64_t>(d_in, 0), p, enc),
                                     encode_weights("m", w, d_out, d_in, p), p);
  for (std::size_t j = 0; j < d_out; ++j) EXPECT_EQ(lwe_decrypt(k.sk, zero.sample(j)), 0);
}

TEST(EncDotProducts, RejectsMismatch) {
  const CryptoParams p;
  const auto& k = default_keys();
  ChaChaStream enc(5, StreamDomain::kSeeds);
  const auto act = encrypt_activation(k.sk, std::vector<int64_t>(10, 1), p, enc);
  EXPECT_THROW(enc_dot_products(act, encode_weights("m", std::vector<int64_t>(11, 0), 1, 11, p), p),
               std::invalid_argument);
  const auto big = encrypt_activation(k.sk, std::vector<int64_t>(8193, 0), p, enc);
  EXPECT_THROW(enc_dot_products(big, encode_weights("m", std::vector<int64_t>(8193, 0), 1, 8193, p), p),
               std::invalid_argument);
}

TEST(PackOutputs, MatchesSequentialKeyswitchAndRotate) {
  const CryptoParams p;
  const auto& k = default_keys();
  std::mt19937_64 rng(6);
  ChaChaStream enc(7, StreamDomain::kSeeds);
  const std::size_t d_in = 64, d_out = 120;
  const auto x = random_ints(rng, d_in), w = random_ints(rng, d_out * d_in);
  const auto batch = enc_dot_products(encrypt_activation(k.sk, x, p, enc), encode_weights("m", w, d_out, d_in, p), p);
  const PackedOutput packed = pack_outputs(batch, k.ksk);
  ASSERT_EQ(packed.ciphertexts.size(), 1u);

  RlweCiphertext acc = RlweCiphertext::trivial(ModPoly(p.poly_size, p.q_in_bits), batch.scale_bits);
  for (std::size_t j = 0; j < d_out; ++j) acc += rotate(keyswitch(batch.sample(j), k.ksk), j);
  EXPECT_EQ(packed.ciphertexts[0], modulus_switch(acc, p.q_out_bits));

  const auto y = decrypt_packed(k.sk, packed);
  const auto exact = matvec(w, x, d_out);
  for (std::size_t j = 0; j < d_out; ++j) EXPECT_TRUE(msb_agree(y[j], exact[j], p)) << j;
}

TEST(PackOutputs, SingleOutputAndPlacement) {
  const CryptoParams p;
  const auto& k = default_keys();
  std::mt19937_64 rng(8);
  ChaChaStream enc(9, StreamDomain::kSeeds);
  const std::size_t d_in = 32;
  for (std::size_t d_out : {std::size_t{1}, 2 * p.poly_size + 3}) {
    const auto x = random_ints(rng, d_in), w = random_ints(rng, d_out * d_in);
    const auto packed =
        pack_outputs(enc_dot_products(encrypt_activation(k.sk, x, p, enc), encode_weights("m", w, d_out, d_in, p), p),
                     k.ksk);
    EXPECT_EQ(packed.ciphertexts.size(), (d_out + p.poly_size - 1) / p.poly_size);
    const auto exact = matvec(w, x, d_out);
    std::vector<std::vector<int64_t>> dec;
    for (const auto& ct : packed.ciphertexts) dec.push_back(decrypt(k.sk, ct));
    for (std::size_t j = 0; j < d_out; ++j) {
      ASSERT_TRUE(msb_agree(dec[j / p.poly_size][j % p.poly_size], exact[j], p)) << j;
    }
    EXPECT_EQ(dec.back().size(), p.poly_size);
    // Unused slots of the last ciphertext stay near zero.
    const auto& last = dec.back();
    for (std::size_t c = (d_out - 1) % p.poly_size + 1; c < p.poly_size; ++c) ASSERT_TRUE(msb_agree(last[c], 0, p));
  }
}

TEST(EncMatvec, IdentityReproducesInput) {
  const CryptoParams p;
  const auto& k = default_keys();
  std::mt19937_64 rng(10);
  ChaChaStream enc(11, StreamDomain::kSeeds);
  const std::size_t d = p.poly_size;
  std::vector<int64_t> eye(d * d, 0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1;
  const auto x = random_ints(rng, d, (int64_t{1} << 20));
  const auto y = enc_matvec(x, encode_weights("I", eye, d, d, p), k.sk, k.ksk, enc);
  for (std::size_t i = 0; i < d; ++i) ASSERT_TRUE(msb_agree(y[i], x[i], p));
}

TEST(EncMatvec, LinearOnTopBits) {
  const CryptoParams p;
  const auto& k = default_keys();
  std::mt19937_64 rng(12);
  ChaChaStream enc(13, StreamDomain::kSeeds);
  const std::size_t d_in = 256, d_out = 128;
  const auto x1 = random_ints(rng, d_in, 60), x2 = random_ints(rng, d_in, 60), w = random_ints(rng, d_out * d_in);
  std::vector<int64_t> x12(d_in);
  for (std::size_t i = 0; i < d_in; ++i) x12[i] = x1[i] + x2[i];
  const auto sw = encode_weights("m", w, d_out, d_in, p);
  const auto y1 = enc_matvec(x1, sw, k.sk, k.ksk, enc);
  const auto y2 = enc_matvec(x2, sw, k.sk, k.ksk, enc);
  const auto y12 = enc_matvec(x12, sw, k.sk, k.ksk, enc);
  for (std::size_t j = 0; j < d_out; ++j) EXPECT_TRUE(msb_agree(y12[j], y1[j] + y2[j], p));
}

TEST(ServerMatvec, BatchedTokensMatchPerTokenAndSerial) {
  const CryptoParams p;
  const auto& k = default_keys();
  std::mt19937_64 rng(14);
  ChaChaStream enc(15, StreamDomain::kSeeds);
  const std::size_t d_in = 100, d_out = 100;  // 300 rows cross a key-switch chunk boundary
  const auto sw = encode_weights("m", random_ints(rng, d_out * d_in), d_out, d_in, p);
  std::vector<EncryptedActivation> tokens;
  for (int t = 0; t < 3; ++t) tokens.push_back(encrypt_activation(k.sk, random_ints(rng, d_in), p, enc));
  const auto together = server_matvec(sw, tokens, k.ksk);
  const auto serial = server_matvec(sw, tokens, k.ksk, {.threads = 1, .allow_simd = false});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto alone = server_matvec(sw, std::span(&tokens[t], 1), k.ksk, {.threads = 2});
    ASSERT_EQ(together[t].ciphertexts, alone[0].ciphertexts);
    ASSERT_EQ(together[t].ciphertexts, serial[t].ciphertexts);
  }
}

TEST(BitErrorStudy, EmptyAndShape) {
  const auto& k = default_keys();
  const std::vector<std::size_t> dims{64};
  EXPECT_TRUE(bit_error_study(dims, 0, k.sk, k.ksk, 1).empty());
  const auto rows = bit_error_study(dims, 300, k.sk, k.ksk, 1);
  ASSERT_EQ(rows.size(), 27u);
  for (int b = 0; b < 27; ++b) {
    EXPECT_EQ(rows[b].bit_position, b);
    EXPECT_EQ(rows[b].trials, 300u);
    if (b >= 12) {
      EXPECT_LT(rows[b].error_rate, 0.02);
    }
  }
  EXPECT_GT(rows[0].error_rate, 0.2);
}

TEST(BitErrorStudy, NoiseGrowsWithDimensionWhenInputsAreNoisy) {
  // With a visible input noise the accumulated error scales with sqrt(d_in).
  CryptoParams p;
  p.sigma_input = std::ldexp(1.0, -33);
  const auto [sk, ksk] = keygen(p, 77);
  const std::vector<std::size_t> dims{64, 2048};
  const auto rows = bit_error_study(dims, 512, sk, ksk, 2);
  double low = 0, high = 0;
  for (int b = 0; b < 12; ++b) {
    low += rows[b].error_rate;
    high += rows[27 + b].error_rate;
  }
  EXPECT_GT(high, low + 0.5);
}
