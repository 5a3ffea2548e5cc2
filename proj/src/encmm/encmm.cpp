#include "lorahe/encmm.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace lorahe {

std::size_t max_input_dim(const CryptoParams& params) noexcept {
  // Two 8-bit operands leave beta - 14 bits of headroom for accumulation.
  return params.beta > 14 ? std::size_t{1} << (params.beta - 14) : 0;
}

std::vector<int64_t> ServerWeights::block(std::size_t j, std::size_t i) const {
  if (j >= d_out_ || i >= blocks()) throw std::out_of_range("ServerWeights::block index out of range");
  std::vector<int64_t> poly(poly_size_, 0);
  const auto row = packed_.row(j);
  for (std::size_t k = 0; k < poly_size_; ++k) {
    const std::size_t c = i * poly_size_ + poly_size_ - 1 - k;
    if (c < d_in_) poly[k] = static_cast<int64_t>(row[c]);
  }
  return poly;
}

std::vector<int64_t> ServerWeights::decode() const {
  std::vector<int64_t> w(d_out_ * d_in_);
  for (std::size_t j = 0; j < d_out_; ++j) {
    for (std::size_t i = 0; i < blocks(); ++i) {
      const auto poly = block(j, i);
      for (std::size_t k = 0; k < poly_size_; ++k) {
        const std::size_t c = i * poly_size_ + poly_size_ - 1 - k;
        if (c < d_in_) w[j * d_in_ + c] = poly[k];
      }
    }
  }
  return w;
}

ServerWeights encode_weights(std::string matrix_id, std::span<const int64_t> w, std::size_t d_out,
                             std::size_t d_in, const CryptoParams& params, int weight_bits) {
  params.validate();
  if (d_out == 0 || d_in == 0 || w.size() != d_out * d_in) {
    throw std::invalid_argument("encode_weights: matrix has " + std::to_string(w.size()) +
                                " entries, expected " + std::to_string(d_out) + "x" + std::to_string(d_in));
  }
  if (weight_bits < 2 || weight_bits > 16) throw std::invalid_argument("encode_weights: weight_bits must lie in [2, 16]");
  const int64_t lo = -(int64_t{1} << (weight_bits - 1));
  const int64_t hi = (int64_t{1} << (weight_bits - 1)) - 1;
  ServerWeights out;
  out.matrix_id_ = std::move(matrix_id);
  out.d_out_ = d_out;
  out.d_in_ = d_in;
  out.poly_size_ = params.poly_size;
  out.weight_bits_ = weight_bits;
  out.packed_ = IntMatrix(d_out, d_in);
  auto dst = out.packed_.data();
  for (std::size_t t = 0; t < w.size(); ++t) {
    if (w[t] < lo || w[t] > hi) {
      throw std::invalid_argument("encode_weights: entry " + std::to_string(w[t]) + " outside the signed " +
                                  std::to_string(weight_bits) + "-bit range");
    }
    dst[t] = static_cast<uint64_t>(w[t]);
  }
  return out;
}

EncryptedActivation encrypt_activation(const SecretKey& sk, std::span<const int64_t> x,
                                       const CryptoParams& params, ChaChaStream& rng) {
  if (x.empty()) throw std::invalid_argument("encrypt_activation: empty vector");
  const std::size_t n = params.poly_size;
  EncryptedActivation act;
  act.d_in = x.size();
  for (std::size_t i0 = 0; i0 < x.size(); i0 += n) {
    std::vector<int64_t> m(n, 0);
    const std::size_t len = std::min(n, x.size() - i0);
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i0), len, m.begin());
    act.blocks.push_back(encrypt_seeded(sk, m, params, rng));
  }
  return act;
}

LweCiphertext LweBatch::sample(std::size_t j) const {
  if (j >= size()) throw std::out_of_range("LweBatch::sample index out of range");
  const auto row = a.row(j);
  return {{row.begin(), row.end()}, b[j], modulus_bits, scale_bits};
}

namespace {

// Row c holds (a | b) of the sample extracted at c mod N from block c / N.
IntMatrix extracted_inputs(const EncryptedActivation& act, std::size_t n, int q_bits) {
  IntMatrix e(act.d_in, n + 1);
  const uint64_t m = modulus_mask(q_bits);
  for (std::size_t i = 0; i < act.blocks.size(); ++i) {
    const ModPoly a = expand_mask(act.blocks[i].seed, n, q_bits);
    const ModPoly& body = act.blocks[i].body;
    for (std::size_t p = 0; p < n && i * n + p < act.d_in; ++p) {
      auto row = e.row(i * n + p);
      for (std::size_t t = 0; t <= p; ++t) row[t] = a[p - t];
      for (std::size_t t = p + 1; t < n; ++t) row[t] = (0 - a[n + p - t]) & m;
      row[n] = body[p];
    }
  }
  return e;
}

void check_activation(const EncryptedActivation& act, const ServerWeights& w, const CryptoParams& params) {
  if (act.d_in != w.d_in()) {
    throw std::invalid_argument("activation length " + std::to_string(act.d_in) + " does not match matrix '" +
                                w.matrix_id() + "' with d_in " + std::to_string(w.d_in()));
  }
  if (w.poly_size() != params.poly_size) throw std::invalid_argument("weights encoded for another ring size");
  if (act.blocks.size() != w.blocks()) throw std::invalid_argument("activation has the wrong number of blocks");
  for (const auto& b : act.blocks) {
    if (b.body.degree() != params.poly_size || b.body.modulus_bits() != params.q_in_bits) {
      throw std::invalid_argument("activation block does not match the parameters");
    }
  }
  if (w.d_in() > max_input_dim(params)) {
    throw std::invalid_argument("d_in " + std::to_string(w.d_in()) + " exceeds the accumulation budget of " +
                                std::to_string(max_input_dim(params)));
  }
}

}  // namespace

LweBatch enc_dot_products(const EncryptedActivation& act, const ServerWeights& w, const CryptoParams& params,
                          MatmulOptions opts) {
  check_activation(act, w, params);
  const std::size_t n = params.poly_size;
  const IntMatrix prod = int_matmul_mod(w.packed(), extracted_inputs(act, n, params.q_in_bits), params.q_in_bits, opts);
  LweBatch out{IntMatrix(w.d_out(), n), std::vector<uint64_t>(w.d_out()), params.q_in_bits,
               act.blocks.front().scale_bits};
  for (std::size_t j = 0; j < w.d_out(); ++j) {
    const auto src = prod.row(j);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(n), out.a.row(j).begin());
    out.b[j] = src[n];
  }
  return out;
}

namespace {

constexpr std::size_t kKeyswitchChunk = 256;

struct PackTarget {
  std::size_t output;  // index into the outputs being assembled
  std::size_t row;     // column j of the weight matrix
};

// Key-switches rows of several LWE batches in fixed-size chunks and adds each
// rotated result into its output ciphertext.
class Packer {
 public:
  Packer(const KeySwitchKey& ksk, MatmulOptions opts, std::vector<PackedOutput>& outputs)
      : ksk_(ksk), opts_(opts), outputs_(outputs), chunk_(kKeyswitchChunk, ksk.params().poly_size) {}

  void add(const LweBatch& batch, std::size_t output) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const auto src = batch.a.row(j);
      std::copy(src.begin(), src.end(), chunk_.row(targets_.size()).begin());
      bodies_.push_back(batch.b[j]);
      targets_.push_back({output, j});
      scale_bits_ = batch.scale_bits;
      if (targets_.size() == kKeyswitchChunk) flush();
    }
  }

  void flush() {
    if (targets_.empty()) return;
    const std::size_t n = ksk_.params().poly_size;
    IntMatrix rows = targets_.size() == kKeyswitchChunk ? chunk_ : IntMatrix(targets_.size(), n);
    if (targets_.size() != kKeyswitchChunk) {
      for (std::size_t r = 0; r < targets_.size(); ++r) {
        std::copy(chunk_.row(r).begin(), chunk_.row(r).end(), rows.row(r).begin());
      }
    }
    const auto switched = keyswitch_batched(rows, bodies_, ksk_, scale_bits_, opts_);
    for (std::size_t r = 0; r < targets_.size(); ++r) {
      const auto [o, j] = targets_[r];
      outputs_[o].ciphertexts[j / n] += rotate(switched[r], j % n);
    }
    targets_.clear();
    bodies_.clear();
  }

 private:
  const KeySwitchKey& ksk_;
  MatmulOptions opts_;
  std::vector<PackedOutput>& outputs_;
  IntMatrix chunk_;
  std::vector<uint64_t> bodies_;
  std::vector<PackTarget> targets_;
  int scale_bits_ = 0;
};

PackedOutput empty_output(std::size_t d_out, const CryptoParams& p, int scale_bits) {
  PackedOutput out;
  out.d_out = d_out;
  const std::size_t groups = (d_out + p.poly_size - 1) / p.poly_size;
  for (std::size_t g = 0; g < groups; ++g) {
    out.ciphertexts.push_back(RlweCiphertext::trivial(ModPoly(p.poly_size, p.q_in_bits), scale_bits));
  }
  return out;
}

void finish(std::vector<PackedOutput>& outputs, const CryptoParams& p) {
  for (auto& out : outputs) {
    for (auto& ct : out.ciphertexts) ct = modulus_switch(ct, p.q_out_bits);
  }
}

}  // namespace

PackedOutput pack_outputs(const LweBatch& lwes, const KeySwitchKey& ksk, MatmulOptions opts) {
  const CryptoParams& p = ksk.params();
  if (lwes.size() == 0) throw std::invalid_argument("pack_outputs: no samples");
  if (lwes.modulus_bits != p.q_in_bits || lwes.a.cols() != p.poly_size) {
    throw std::invalid_argument("pack_outputs: samples do not match the key-switching key");
  }
  std::vector<PackedOutput> outputs{empty_output(lwes.size(), p, lwes.scale_bits)};
  Packer packer(ksk, opts, outputs);
  packer.add(lwes, 0);
  packer.flush();
  finish(outputs, p);
  return std::move(outputs.front());
}

std::vector<PackedOutput> server_matvec(const ServerWeights& w, std::span<const EncryptedActivation> tokens,
                                        const KeySwitchKey& ksk, MatmulOptions opts) {
  const CryptoParams& p = ksk.params();
  std::vector<PackedOutput> outputs;
  outputs.reserve(tokens.size());
  for (const auto& t : tokens) {
    check_activation(t, w, p);
    outputs.push_back(empty_output(w.d_out(), p, t.blocks.front().scale_bits));
  }
  Packer packer(ksk, opts, outputs);
  for (std::size_t t = 0; t < tokens.size(); ++t) packer.add(enc_dot_products(tokens[t], w, p, opts), t);
  packer.flush();
  finish(outputs, p);
  return outputs;
}

std::vector<int64_t> decrypt_packed(const SecretKey& sk, const PackedOutput& out) {
  std::vector<int64_t> y;
  y.reserve(out.d_out);
  for (const auto& ct : out.ciphertexts) {
    const auto dec = decrypt(sk, ct);
    for (std::size_t k = 0; k < dec.size() && y.size() < out.d_out; ++k) y.push_back(dec[k]);
  }
  if (y.size() != out.d_out) throw std::invalid_argument("packed output holds fewer slots than d_out");
  return y;
}

std::vector<int64_t> enc_matvec(std::span<const int64_t> x_q, const ServerWeights& w, const SecretKey& sk,
                                const KeySwitchKey& ksk, ChaChaStream& rng, MatmulOptions opts) {
  const EncryptedActivation act = encrypt_activation(sk, x_q, ksk.params(), rng);
  const auto out = server_matvec(w, std::span(&act, 1), ksk, opts);
  return decrypt_packed(sk, out.front());
}

bool msb_agree(int64_t y, int64_t exact, const CryptoParams& params) noexcept {
  const int64_t diff = center_residue(static_cast<uint64_t>(y - exact), params.beta);
  const int64_t tol = int64_t{1} << (params.beta - params.gamma);
  return diff < tol && diff > -tol;
}

std::vector<BitErrorRow> bit_error_study(std::span<const std::size_t> d_in_list, std::size_t trials,
                                         const SecretKey& sk, const KeySwitchKey& ksk, uint64_t seed,
                                         MatmulOptions opts) {
  const CryptoParams& p = ksk.params();
  std::vector<BitErrorRow> rows;
  if (trials == 0) return rows;
  constexpr std::size_t kRowsPerVector = 256;
  for (std::size_t d_in : d_in_list) {
    ChaChaStream data(seed ^ (0x9e3779b97f4a7c15ull * (d_in + 1)), StreamDomain::kModel);
    ChaChaStream enc(seed + d_in, StreamDomain::kSeeds);
    std::vector<std::size_t> errors(static_cast<std::size_t>(p.beta), 0);
    for (std::size_t done = 0; done < trials;) {
      const std::size_t d_out = std::min(kRowsPerVector, trials - done);
      std::vector<int64_t> x(d_in), w(d_out * d_in);
      for (auto& v : x) v = data.uniform_int(-127, 127);
      for (auto& v : w) v = data.uniform_int(-127, 127);
      const ServerWeights sw = encode_weights("study", w, d_out, d_in, p);
      const auto y = enc_matvec(x, sw, sk, ksk, enc, opts);
      for (std::size_t j = 0; j < d_out; ++j) {
        int64_t exact = 0;
        for (std::size_t c = 0; c < d_in; ++c) exact += w[j * d_in + c] * x[c];
        const uint64_t diff = static_cast<uint64_t>(y[j] ^ exact);
        for (int b = 0; b < p.beta; ++b) errors[static_cast<std::size_t>(b)] += (diff >> b) & 1;
      }
      done += d_out;
    }
    for (int b = 0; b < p.beta; ++b) {
      rows.push_back({d_in, b, static_cast<double>(errors[static_cast<std::size_t>(b)]) / static_cast<double>(trials),
                      trials});
    }
  }
  return rows;
}

}  // namespace lorahe
