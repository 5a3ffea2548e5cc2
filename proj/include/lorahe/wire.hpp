#pragma once

// Byte formats and the client/server protocol. Every frame is
//   u32 payload length (LE) | u8 kind | u8 version | payload
// and all integers inside payloads are little-endian. See docs/wire.md.

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lorahe/encmm.hpp"

namespace lorahe {

using Bytes = std::vector<uint8_t>;

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr uint8_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 6;
inline constexpr uint32_t kMaxFramePayload = 1u << 30;

/// Dense little-endian bit packing: value k occupies bits [k*width, (k+1)*width)
/// of the stream, bit 0 of the stream being bit 0 of the first byte.
Bytes pack_bits(std::span<const uint64_t> values, int width);
std::vector<uint64_t> unpack_bits(std::span<const uint8_t> bytes, std::size_t count, int width);
std::size_t packed_size(std::size_t count, int width) noexcept;

/// 8-byte seed followed by the body packed at q_in bits.
Bytes serialize_input(const SeededRlweCiphertext& ct, const CryptoParams& params);
SeededRlweCiphertext deserialize_input(std::span<const uint8_t> bytes, const CryptoParams& params);
std::size_t input_ciphertext_size(const CryptoParams& params) noexcept;

/// Mask then body, each packed at q_out bits.
Bytes serialize_output(const RlweCiphertext& ct, const CryptoParams& params);
RlweCiphertext deserialize_output(std::span<const uint8_t> bytes, const CryptoParams& params);
std::size_t output_ciphertext_size(const CryptoParams& params) noexcept;

Bytes serialize_packed(const PackedOutput& out, const CryptoParams& params);
PackedOutput deserialize_packed(std::span<const uint8_t> bytes, std::size_t d_out, const CryptoParams& params);

struct ExpansionReport {
  std::size_t input_bytes = 0;
  std::size_t output_bytes = 0;
  std::size_t input_plain_bytes = 0;   // N one-byte values
  std::size_t output_plain_bytes = 0;  // N values of gamma bits
  double input_factor = 0.0;
  double output_factor = 0.0;
};

/// Sizes measured by serializing real ciphertexts.
ExpansionReport expansion_report(const CryptoParams& params);

enum class MessageKind : uint8_t {
  kRegisterMatrix = 1,
  kMatVecRequest = 2,
  kMatVecResponse = 3,
  kKskUpload = 4,
  kError = 5,
  kAck = 6,
};

const char* to_string(MessageKind kind) noexcept;

struct Frame {
  MessageKind kind = MessageKind::kError;
  uint8_t version = kWireVersion;
  Bytes payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

Bytes encode_frame(const Frame& frame);
/// Decodes exactly one frame spanning the whole buffer.
Frame decode_frame(std::span<const uint8_t> bytes);
/// Length of the frame starting at `bytes`, or nullopt if the header is incomplete.
std::optional<std::size_t> frame_length(std::span<const uint8_t> bytes);

// Message bodies. Each has a make_frame and a parse_* counterpart; the
// constructors take only public or encrypted material.

struct RegisterMatrix {
  std::string matrix_id;
  uint32_t d_out = 0;
  uint32_t d_in = 0;
  uint8_t weight_bits = 8;
  std::vector<int64_t> weights;  // row-major, public base weights

  friend bool operator==(const RegisterMatrix&, const RegisterMatrix&) = default;
};

struct KskUpload {
  CryptoParams params;
  std::vector<uint64_t> seeds;
  IntMatrix body;

  friend bool operator==(const KskUpload&, const KskUpload&) = default;
};

struct MatVecRequest {
  uint64_t request_id = 0;
  std::string matrix_id;
  std::vector<double> token_scales;          // cleartext quantization scale per token
  std::vector<EncryptedActivation> tokens;

  friend bool operator==(const MatVecRequest&, const MatVecRequest&);
};

struct MatVecResponse {
  uint64_t request_id = 0;
  std::vector<PackedOutput> tokens;
};

enum class ErrorCode : uint16_t {
  kMalformed = 1,
  kUnknownMatrix = 2,
  kNoKey = 3,
  kParameterMismatch = 4,
  kInternal = 5,
};

struct ErrorMessage {
  uint64_t request_id = 0;
  ErrorCode code = ErrorCode::kInternal;
  std::string message;
};

struct Ack {
  uint64_t request_id = 0;
};

Frame make_frame(const RegisterMatrix& m);
Frame make_frame(const KskUpload& m, const CryptoParams& params);
Frame make_frame(const MatVecRequest& m, const CryptoParams& params);
Frame make_frame(const MatVecResponse& m, const CryptoParams& params);
Frame make_frame(const ErrorMessage& m);
Frame make_frame(const Ack& m);

RegisterMatrix parse_register(const Frame& f);
KskUpload parse_ksk(const Frame& f);
MatVecRequest parse_request(const Frame& f, const CryptoParams& params);
MatVecResponse parse_response(const Frame& f, const CryptoParams& params);
ErrorMessage parse_error(const Frame& f);
Ack parse_ack(const Frame& f);

KskUpload make_ksk_upload(const KeySwitchKey& ksk);

/// Bidirectional frame channel.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual void send(const Frame& frame) = 0;
  virtual Frame receive() = 0;
};

/// Server state shared by all connections: registered public matrices and an
/// optional default key-switching key.
class HeServer {
 public:
  explicit HeServer(CryptoParams params, MatmulOptions opts = {});

  const CryptoParams& params() const noexcept { return params_; }
  void register_matrix(ServerWeights w);
  bool has_matrix(const std::string& id) const;
  void set_default_ksk(std::shared_ptr<const KeySwitchKey> ksk);

  /// Per-connection state machine: consumes one request frame, returns the reply.
  class Session {
   public:
    explicit Session(HeServer& server) : server_(server) {}
    Frame handle(const Frame& request);

   private:
    HeServer& server_;
    std::shared_ptr<const KeySwitchKey> ksk_;
  };

 private:
  std::shared_ptr<const ServerWeights> find(const std::string& id) const;

  CryptoParams params_;
  MatmulOptions opts_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<const ServerWeights>> matrices_;
  std::shared_ptr<const KeySwitchKey> default_ksk_;
};

/// In-process transport. Frames are still encoded to bytes and decoded on the
/// other side, so it exercises the same grammar as TCP.
class LoopbackConnection : public Connection {
 public:
  explicit LoopbackConnection(HeServer& server) : session_(server) {}
  void send(const Frame& frame) override;
  Frame receive() override;

 private:
  HeServer::Session session_;
  std::vector<Bytes> replies_;
};

/// Blocking TCP client connection.
class TcpConnection : public Connection {
 public:
  TcpConnection(const std::string& host, uint16_t port);
  ~TcpConnection() override;
  TcpConnection(const TcpConnection&) = delete;
  TcpConnection& operator=(const TcpConnection&) = delete;

  void send(const Frame& frame) override;
  Frame receive() override;

 private:
  int fd_ = -1;
};

/// Wraps another connection and keeps a copy of every byte it sends.
class RecordingConnection : public Connection {
 public:
  explicit RecordingConnection(std::unique_ptr<Connection> inner) : inner_(std::move(inner)) {}
  void send(const Frame& frame) override;
  Frame receive() override { return inner_->receive(); }
  const Bytes& sent() const noexcept { return sent_; }

 private:
  std::unique_ptr<Connection> inner_;
  Bytes sent_;
};

/// TCP listener running one thread per accepted connection until stop().
class TcpServer {
 public:
  /// Port 0 picks a free port.
  TcpServer(HeServer& server, const std::string& host, uint16_t port);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  uint16_t port() const noexcept { return port_; }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  uint16_t port_ = 0;
};

/// Client stub: encrypts, sends, receives and decrypts. Holds the secret key
/// locally; only ciphertexts, scales, matrix ids and the KSK leave it.
class HeClient {
 public:
  HeClient(std::unique_ptr<Connection> conn, const SecretKey& sk, CryptoParams params, uint64_t seed);

  void upload_ksk(const KeySwitchKey& ksk);
  void register_matrix(const std::string& matrix_id, std::span<const int64_t> w, std::size_t d_out,
                       std::size_t d_in, int weight_bits = 8);

  /// One request carrying every token row of x_q (tokens x d_in, row-major).
  /// Returns tokens x d_out decrypted values.
  std::vector<int64_t> matvec(const std::string& matrix_id, std::span<const int64_t> x_q, std::size_t tokens,
                              std::size_t d_in, std::size_t d_out, std::span<const double> token_scales = {});

  const CryptoParams& params() const noexcept { return params_; }

 private:
  Frame exchange(const Frame& f);

  std::unique_ptr<Connection> conn_;
  const SecretKey& sk_;
  CryptoParams params_;
  ChaChaStream rng_;
  uint64_t next_request_ = 1;
  std::mutex mu_;
};

}  // namespace lorahe
