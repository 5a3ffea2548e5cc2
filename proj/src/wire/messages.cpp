#include "bytes.hpp"
#include "lorahe/wire.hpp"

namespace lorahe {

using detail::Reader;
using detail::Writer;

const char* to_string(MessageKind kind) noexcept {
  switch (kind) {
    case MessageKind::kRegisterMatrix:
      return "RegisterMatrix";
    case MessageKind::kMatVecRequest:
      return "MatVecRequest";
    case MessageKind::kMatVecResponse:
      return "MatVecResponse";
    case MessageKind::kKskUpload:
      return "KskUpload";
    case MessageKind::kError:
      return "Error";
    case MessageKind::kAck:
      return "Ack";
  }
  return "?";
}

namespace {

bool known_kind(uint8_t k) { return k >= 1 && k <= 6; }

void expect_kind(const Frame& f, MessageKind kind) {
  if (f.kind != kind) {
    throw WireError(std::string("expected ") + to_string(kind) + " frame, got " + to_string(f.kind));
  }
}

void put_params(Writer& w, const CryptoParams& p) {
  w.put(static_cast<uint32_t>(p.poly_size));
  w.put(static_cast<uint8_t>(p.beta));
  w.put(static_cast<uint8_t>(p.gamma));
  w.put(static_cast<uint8_t>(p.q_in_bits));
  w.put(static_cast<uint8_t>(p.q_out_bits));
  w.put(static_cast<uint8_t>(p.ksk_base_log));
  w.put(static_cast<uint8_t>(p.ksk_levels));
  w.put_f64(p.sigma_input);
  w.put_f64(p.sigma_ksk);
}

CryptoParams get_params(Reader& r) {
  CryptoParams p;
  p.poly_size = r.get<uint32_t>();
  p.beta = r.get<uint8_t>();
  p.gamma = r.get<uint8_t>();
  p.q_in_bits = r.get<uint8_t>();
  p.q_out_bits = r.get<uint8_t>();
  p.ksk_base_log = r.get<uint8_t>();
  p.ksk_levels = r.get<uint8_t>();
  p.sigma_input = r.get_f64();
  p.sigma_ksk = r.get_f64();
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw WireError(std::string("invalid parameter header: ") + e.what());
  }
  return p;
}

}  // namespace

Bytes encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxFramePayload) throw WireError("frame payload too large");
  Bytes out;
  out.reserve(kFrameHeaderSize + frame.payload.size());
  Writer w(out);
  w.put(static_cast<uint32_t>(frame.payload.size()));
  w.put(static_cast<uint8_t>(frame.kind));
  w.put(frame.version);
  w.put_bytes(frame.payload);
  return out;
}

std::optional<std::size_t> frame_length(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4) return std::nullopt;
  Reader r(bytes.first(4));
  const auto len = r.get<uint32_t>();
  if (len > kMaxFramePayload) throw WireError("frame payload too large");
  return kFrameHeaderSize + len;
}

Frame decode_frame(std::span<const uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderSize) throw WireError("truncated frame header");
  Reader r(bytes);
  const auto len = r.get<uint32_t>();
  const auto kind = r.get<uint8_t>();
  const auto version = r.get<uint8_t>();
  if (len > kMaxFramePayload) throw WireError("frame payload too large");
  if (bytes.size() != kFrameHeaderSize + len) throw WireError("frame length does not match its header");
  if (!known_kind(kind)) throw WireError("unknown message kind " + std::to_string(kind));
  if (version != kWireVersion) throw WireError("unknown wire version " + std::to_string(version));
  const auto body = r.take(len);
  return {static_cast<MessageKind>(kind), version, Bytes(body.begin(), body.end())};
}

bool operator==(const MatVecRequest& a, const MatVecRequest& b) {
  if (a.request_id != b.request_id || a.matrix_id != b.matrix_id || a.token_scales != b.token_scales ||
      a.tokens.size() != b.tokens.size()) {
    return false;
  }
  for (std::size_t t = 0; t < a.tokens.size(); ++t) {
    if (a.tokens[t].d_in != b.tokens[t].d_in || a.tokens[t].blocks != b.tokens[t].blocks) return false;
  }
  return true;
}

Frame make_frame(const RegisterMatrix& m) {
  if (m.weight_bits < 2 || m.weight_bits > 32) throw WireError("weight_bits must lie in [2, 32]");
  if (m.weights.size() != std::size_t{m.d_out} * m.d_in) throw WireError("weight count does not match d_out x d_in");
  Frame f{MessageKind::kRegisterMatrix, kWireVersion, {}};
  Writer w(f.payload);
  w.put_string(m.matrix_id);
  w.put(m.d_out);
  w.put(m.d_in);
  w.put(m.weight_bits);
  const int64_t lo = -(int64_t{1} << (m.weight_bits - 1)), hi = (int64_t{1} << (m.weight_bits - 1)) - 1;
  std::vector<uint64_t> words(m.weights.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (m.weights[i] < lo || m.weights[i] > hi) throw WireError("weight outside the signed weight_bits range");
    words[i] = static_cast<uint64_t>(m.weights[i]) & modulus_mask(m.weight_bits);
  }
  w.put_bytes(pack_bits(words, m.weight_bits));
  return f;
}

RegisterMatrix parse_register(const Frame& f) {
  expect_kind(f, MessageKind::kRegisterMatrix);
  Reader r(f.payload);
  RegisterMatrix m;
  m.matrix_id = r.get_string();
  m.d_out = r.get<uint32_t>();
  m.d_in = r.get<uint32_t>();
  m.weight_bits = r.get<uint8_t>();
  if (m.weight_bits < 2 || m.weight_bits > 32) throw WireError("weight_bits must lie in [2, 32]");
  const std::size_t count = std::size_t{m.d_out} * m.d_in;
  if (packed_size(count, m.weight_bits) != r.remaining()) throw WireError("weight block has the wrong length");
  const auto words = unpack_bits(r.take(r.remaining()), count, m.weight_bits);
  m.weights.resize(count);
  for (std::size_t i = 0; i < count; ++i) m.weights[i] = center_residue(words[i], m.weight_bits);
  return m;
}

KskUpload make_ksk_upload(const KeySwitchKey& ksk) {
  return {ksk.params(), {ksk.seeds().begin(), ksk.seeds().end()}, ksk.body_matrix()};
}

Frame make_frame(const KskUpload& m, const CryptoParams& params) {
  if (!(m.params == params)) throw WireError("key-switching key was generated for different parameters");
  if (m.seeds.size() != params.ksk_rows() || m.body.rows() != params.ksk_rows() ||
      m.body.cols() != params.poly_size) {
    throw WireError("key-switching key has the wrong shape");
  }
  Frame f{MessageKind::kKskUpload, kWireVersion, {}};
  Writer w(f.payload);
  put_params(w, params);
  for (uint64_t s : m.seeds) w.put(s);
  w.put_bytes(pack_bits(m.body.data(), params.q_in_bits));
  return f;
}

KskUpload parse_ksk(const Frame& f) {
  expect_kind(f, MessageKind::kKskUpload);
  Reader r(f.payload);
  KskUpload m;
  m.params = get_params(r);
  const std::size_t rows = m.params.ksk_rows(), n = m.params.poly_size;
  m.seeds.resize(rows);
  for (auto& s : m.seeds) s = r.get<uint64_t>();
  if (r.remaining() != packed_size(rows * n, m.params.q_in_bits)) throw WireError("key body has the wrong length");
  m.body = IntMatrix(rows, n, unpack_bits(r.take(r.remaining()), rows * n, m.params.q_in_bits));
  return m;
}

Frame make_frame(const MatVecRequest& m, const CryptoParams& params) {
  if (!m.token_scales.empty() && m.token_scales.size() != m.tokens.size()) {
    throw WireError("token scale count does not match the token count");
  }
  const std::size_t d_in = m.tokens.empty() ? 0 : m.tokens.front().d_in;
  const std::size_t blocks = (d_in + params.poly_size - 1) / params.poly_size;
  Frame f{MessageKind::kMatVecRequest, kWireVersion, {}};
  f.payload.reserve(64 + m.matrix_id.size() + m.tokens.size() * (8 + blocks * input_ciphertext_size(params)));
  Writer w(f.payload);
  w.put(m.request_id);
  w.put_string(m.matrix_id);
  w.put(static_cast<uint32_t>(m.tokens.size()));
  w.put(static_cast<uint32_t>(d_in));
  w.put(static_cast<uint8_t>(m.token_scales.empty() ? 0 : 1));
  for (double s : m.token_scales) w.put_f64(s);
  for (const auto& t : m.tokens) {
    if (t.d_in != d_in || t.blocks.size() != blocks) throw WireError("tokens of one request must share d_in");
    for (const auto& ct : t.blocks) w.put_bytes(serialize_input(ct, params));
  }
  return f;
}

MatVecRequest parse_request(const Frame& f, const CryptoParams& params) {
  expect_kind(f, MessageKind::kMatVecRequest);
  Reader r(f.payload);
  MatVecRequest m;
  m.request_id = r.get<uint64_t>();
  m.matrix_id = r.get_string();
  const auto tokens = r.get<uint32_t>();
  const auto d_in = r.get<uint32_t>();
  const auto has_scales = r.get<uint8_t>();
  if (has_scales > 1) throw WireError("bad scale flag");
  if (has_scales) {
    m.token_scales.resize(tokens);
    for (auto& s : m.token_scales) s = r.get_f64();
  }
  const std::size_t blocks = (d_in + params.poly_size - 1) / params.poly_size;
  const std::size_t each = input_ciphertext_size(params);
  if (r.remaining() != std::size_t{tokens} * blocks * each) throw WireError("request body has the wrong length");
  m.tokens.resize(tokens);
  for (auto& t : m.tokens) {
    t.d_in = d_in;
    for (std::size_t i = 0; i < blocks; ++i) t.blocks.push_back(deserialize_input(r.take(each), params));
  }
  return m;
}

Frame make_frame(const MatVecResponse& m, const CryptoParams& params) {
  const std::size_t d_out = m.tokens.empty() ? 0 : m.tokens.front().d_out;
  Frame f{MessageKind::kMatVecResponse, kWireVersion, {}};
  Writer w(f.payload);
  w.put(m.request_id);
  w.put(static_cast<uint32_t>(m.tokens.size()));
  w.put(static_cast<uint32_t>(d_out));
  for (const auto& t : m.tokens) {
    if (t.d_out != d_out) throw WireError("tokens of one response must share d_out");
    w.put_bytes(serialize_packed(t, params));
  }
  return f;
}

MatVecResponse parse_response(const Frame& f, const CryptoParams& params) {
  expect_kind(f, MessageKind::kMatVecResponse);
  Reader r(f.payload);
  MatVecResponse m;
  m.request_id = r.get<uint64_t>();
  const auto tokens = r.get<uint32_t>();
  const auto d_out = r.get<uint32_t>();
  const std::size_t each = (d_out + params.poly_size - 1) / params.poly_size * output_ciphertext_size(params);
  if (r.remaining() != std::size_t{tokens} * each) throw WireError("response body has the wrong length");
  for (uint32_t t = 0; t < tokens; ++t) m.tokens.push_back(deserialize_packed(r.take(each), d_out, params));
  return m;
}

Frame make_frame(const ErrorMessage& m) {
  Frame f{MessageKind::kError, kWireVersion, {}};
  Writer w(f.payload);
  w.put(m.request_id);
  w.put(static_cast<uint16_t>(m.code));
  w.put_string(m.message.substr(0, 0xFFFF));
  return f;
}

ErrorMessage parse_error(const Frame& f) {
  expect_kind(f, MessageKind::kError);
  Reader r(f.payload);
  ErrorMessage m;
  m.request_id = r.get<uint64_t>();
  m.code = static_cast<ErrorCode>(r.get<uint16_t>());
  m.message = r.get_string();
  r.expect_end();
  return m;
}

Frame make_frame(const Ack& m) {
  Frame f{MessageKind::kAck, kWireVersion, {}};
  Writer w(f.payload);
  w.put(m.request_id);
  return f;
}

Ack parse_ack(const Frame& f) {
  expect_kind(f, MessageKind::kAck);
  Reader r(f.payload);
  Ack a{r.get<uint64_t>()};
  r.expect_end();
  return a;
}

}  // namespace lorahe
