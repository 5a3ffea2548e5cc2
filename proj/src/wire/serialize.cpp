#include <algorithm>

#include "bytes.hpp"
#include "lorahe/wire.hpp"

namespace lorahe {

std::size_t packed_size(std::size_t count, int width) noexcept {
  return (count * static_cast<std::size_t>(width) + 7) / 8;
}

Bytes pack_bits(std::span<const uint64_t> values, int width) {
  if (width < 1 || width > 64) throw WireError("bit width must lie in [1, 64]");
  Bytes out(packed_size(values.size(), width), 0);
  const uint64_t mask = modulus_mask(width);
  std::size_t bit = 0;
  for (uint64_t v : values) {
    if ((v & ~mask) != 0) throw WireError("value does not fit in " + std::to_string(width) + " bits");
    for (int done = 0; done < width;) {
      const std::size_t byte = bit / 8;
      const int offset = static_cast<int>(bit % 8);
      const int n = std::min(8 - offset, width - done);
      out[byte] |= static_cast<uint8_t>(((v >> done) & ((1u << n) - 1)) << offset);
      done += n;
      bit += static_cast<std::size_t>(n);
    }
  }
  return out;
}

std::vector<uint64_t> unpack_bits(std::span<const uint8_t> bytes, std::size_t count, int width) {
  if (width < 1 || width > 64) throw WireError("bit width must lie in [1, 64]");
  if (bytes.size() != packed_size(count, width)) throw WireError("packed buffer has the wrong length");
  std::vector<uint64_t> out(count, 0);
  std::size_t bit = 0;
  for (auto& v : out) {
    for (int done = 0; done < width;) {
      const std::size_t byte = bit / 8;
      const int offset = static_cast<int>(bit % 8);
      const int n = std::min(8 - offset, width - done);
      v |= static_cast<uint64_t>((bytes[byte] >> offset) & ((1u << n) - 1)) << done;
      done += n;
      bit += static_cast<std::size_t>(n);
    }
  }
  // Padding bits must be zero so that every value has exactly one encoding.
  if (bit % 8 != 0 && (bytes.back() >> (bit % 8)) != 0) throw WireError("nonzero padding bits");
  return out;
}

std::size_t input_ciphertext_size(const CryptoParams& params) noexcept {
  return 8 + packed_size(params.poly_size, params.q_in_bits);
}

std::size_t output_ciphertext_size(const CryptoParams& params) noexcept {
  return 2 * packed_size(params.poly_size, params.q_out_bits);
}

Bytes serialize_input(const SeededRlweCiphertext& ct, const CryptoParams& params) {
  if (ct.body.degree() != params.poly_size || ct.body.modulus_bits() != params.q_in_bits ||
      ct.scale_bits != params.input_scale_bits()) {
    throw WireError("input ciphertext does not match the parameter set");
  }
  Bytes out;
  out.reserve(input_ciphertext_size(params));
  detail::Writer w(out);
  w.put(ct.seed);
  w.put_bytes(pack_bits(ct.body.coeffs(), params.q_in_bits));
  return out;
}

SeededRlweCiphertext deserialize_input(std::span<const uint8_t> bytes, const CryptoParams& params) {
  if (bytes.size() < 8) throw WireError("truncated input ciphertext");
  if (bytes.size() != input_ciphertext_size(params)) {
    throw WireError("input ciphertext is " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(input_ciphertext_size(params)));
  }
  detail::Reader r(bytes);
  SeededRlweCiphertext ct;
  ct.seed = r.get<uint64_t>();
  ct.body = ModPoly(unpack_bits(r.take(r.remaining()), params.poly_size, params.q_in_bits), params.q_in_bits);
  ct.scale_bits = params.input_scale_bits();
  return ct;
}

namespace {

int output_scale_bits(const CryptoParams& p) { return p.input_scale_bits() - (p.q_in_bits - p.q_out_bits); }

}  // namespace

Bytes serialize_output(const RlweCiphertext& ct, const CryptoParams& params) {
  if (ct.degree() != params.poly_size || ct.modulus_bits() != params.q_out_bits ||
      ct.mask.modulus_bits() != params.q_out_bits || ct.scale_bits != output_scale_bits(params)) {
    throw WireError("output ciphertext does not match the parameter set");
  }
  Bytes out = pack_bits(ct.mask.coeffs(), params.q_out_bits);
  const Bytes body = pack_bits(ct.body.coeffs(), params.q_out_bits);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

RlweCiphertext deserialize_output(std::span<const uint8_t> bytes, const CryptoParams& params) {
  if (bytes.size() != output_ciphertext_size(params)) {
    throw WireError("output ciphertext is " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(output_ciphertext_size(params)));
  }
  const std::size_t half = bytes.size() / 2;
  const int q = params.q_out_bits;
  return {ModPoly(unpack_bits(bytes.first(half), params.poly_size, q), q),
          ModPoly(unpack_bits(bytes.subspan(half), params.poly_size, q), q), output_scale_bits(params)};
}

Bytes serialize_packed(const PackedOutput& out, const CryptoParams& params) {
  const std::size_t expected = (out.d_out + params.poly_size - 1) / params.poly_size;
  if (out.ciphertexts.size() != expected) throw WireError("packed output has the wrong ciphertext count");
  Bytes bytes;
  bytes.reserve(expected * output_ciphertext_size(params));
  for (const auto& ct : out.ciphertexts) {
    const Bytes one = serialize_output(ct, params);
    bytes.insert(bytes.end(), one.begin(), one.end());
  }
  return bytes;
}

PackedOutput deserialize_packed(std::span<const uint8_t> bytes, std::size_t d_out, const CryptoParams& params) {
  const std::size_t count = (d_out + params.poly_size - 1) / params.poly_size;
  const std::size_t each = output_ciphertext_size(params);
  if (bytes.size() != count * each) throw WireError("packed output has the wrong length");
  PackedOutput out;
  out.d_out = d_out;
  for (std::size_t i = 0; i < count; ++i) out.ciphertexts.push_back(deserialize_output(bytes.subspan(i * each, each), params));
  return out;
}

ExpansionReport expansion_report(const CryptoParams& params) {
  params.validate();
  // Sizes do not depend on the key; a throwaway one yields well-formed ciphertexts.
  const SecretKey sk = generate_secret_key(params, 1);
  ChaChaStream rng(2, StreamDomain::kSeeds);
  const std::vector<int64_t> zeros(params.poly_size, 0);
  const SeededRlweCiphertext in = encrypt_seeded(sk, zeros, params, rng);
  const RlweCiphertext out = modulus_switch(in.expand(), params.q_out_bits);

  ExpansionReport r;
  r.input_bytes = serialize_input(in, params).size();
  r.output_bytes = serialize_output(out, params).size();
  r.input_plain_bytes = params.poly_size;
  r.output_plain_bytes = params.poly_size * static_cast<std::size_t>(params.gamma) / 8;
  r.input_factor = static_cast<double>(r.input_bytes) / static_cast<double>(r.input_plain_bytes);
  r.output_factor = static_cast<double>(r.output_bytes) / (static_cast<double>(params.poly_size) * params.gamma / 8.0);
  return r;
}

}  // namespace lorahe
