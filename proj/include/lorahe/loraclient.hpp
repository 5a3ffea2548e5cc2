#pragma once

// Client side of split LoRA fine-tuning on a toy decoder-only transformer.
// Base linear layers go through a pluggable matmul backend (float, integer
// cleartext, or encrypted via the wire client); adapters, attention,
// non-linearities, the backward pass and the optimizer stay local.
//
// Block (per layer, causal, no normalization):
//   Q, K, V = split(x)            h = W_proj(softmax(QK^T / sqrt(d_k)) V)
//   x'      = h + W_down(SiLU(W_gate h) * W_up h)

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <string>
#include <string_view>
#include <vector>

#include "lorahe/quantize.hpp"
#include "lorahe/wire.hpp"

namespace lorahe {

enum class Backend { kFp32, kQuantized, kHeLoopback, kHeRemote };

const char* to_string(Backend b) noexcept;
/// Accepts "fp32", "quantized", "he-loopback", "he-remote".
Backend parse_backend(std::string_view text);

/// Sequence-start token. Its embedding is a single massive channel (index 0)
/// that the frozen base ignores, mimicking the outlier tokens of real models.
inline constexpr int kBosToken = 0;

struct ToyModelConfig {
  std::size_t n_layers = 2;
  std::size_t d = 64;
  std::size_t m = 256;
  std::size_t n_heads = 4;
  std::size_t r = 4;
  double alpha = 32.0;
  std::size_t vocab_size = 256;
  std::size_t context = 32;
  std::size_t batch = 1;
  Backend backend = Backend::kFp32;
  QuantStrategy quant = parse_strategy("DTok-SC", 8);
  double outlier_scale = 300.0;
  uint64_t seed = 1;

  std::size_t d_k() const noexcept { return d / n_heads; }
  std::size_t d_v() const noexcept { return d / n_heads; }
  double lora_scale() const noexcept { return alpha / static_cast<double>(r); }
  void validate() const;
};

enum class MatrixKind : std::size_t { kQ, kK, kV, kProj, kGate, kUp, kDown };
inline constexpr std::size_t kMatrixKinds = 7;
const char* matrix_name(MatrixKind k) noexcept;

/// d_out x d_in of the given matrix family.
std::pair<std::size_t, std::size_t> matrix_shape(const ToyModelConfig& cfg, MatrixKind k) noexcept;

struct BaseLayer {
  std::array<Matrix, kMatrixKinds> w;
  std::array<Eigen::VectorXd, kMatrixKinds> bias;
};

/// Frozen, public model: embeddings, positional table, output head and base
/// weights. Generated deterministically from the config seed.
struct BaseModel {
  Matrix embedding;   // vocab x d
  Matrix positions;   // context x d
  Matrix head;        // vocab x d
  std::vector<BaseLayer> layers;

  /// FNV-1a over every stored double, for frozen-weight checks.
  uint64_t checksum() const;
};

BaseModel make_base_model(const ToyModelConfig& cfg);

struct Adapter {
  Matrix U;  // d_out x r
  Matrix D;  // r x d_in
};

/// Client-private trainable state. Never passed to anything in wire.hpp.
struct LoraAdapters {
  std::vector<std::array<Adapter, kMatrixKinds>> layers;

  /// U = 0, D ~ N(0, 1/d_in), so the adapted model starts equal to the base.
  static LoraAdapters init(const ToyModelConfig& cfg, uint64_t seed);
  static LoraAdapters zeros_like(const LoraAdapters& other);
  std::size_t parameter_count() const;
};

/// Flat little-endian checkpoint: "LRAD", u32 version, u32 matrix count, then
/// per matrix u32 rows, u32 cols and rows*cols float32 values, ordered by
/// layer, matrix family, U before D.
void save_adapters(const LoraAdapters& a, const std::filesystem::path& path);
LoraAdapters load_adapters(const std::filesystem::path& path);

/// Integer products with the public base weights.
class MatmulBackend {
 public:
  virtual ~MatmulBackend() = default;
  /// w_q is d_out x d_in, symmetric.
  virtual void register_matrix(const std::string& id, const QuantTensor& w_q) = 0;
  /// Returns x_q * w^T as a tokens x d_out row-major accumulator.
  virtual std::vector<int64_t> matmul(const std::string& id, const QuantTensor& x_q, std::size_t d_out) = 0;
};

/// Exact integer products in the clear.
class CleartextBackend : public MatmulBackend {
 public:
  void register_matrix(const std::string& id, const QuantTensor& w_q) override;
  std::vector<int64_t> matmul(const std::string& id, const QuantTensor& x_q, std::size_t d_out) override;

 private:
  std::unordered_map<std::string, IntMatrix> transposed_;
};

/// Encrypted products through a wire client (loopback or TCP).
class HeBackend : public MatmulBackend {
 public:
  explicit HeBackend(std::unique_ptr<HeClient> client) : client_(std::move(client)) {}
  void register_matrix(const std::string& id, const QuantTensor& w_q) override;
  std::vector<int64_t> matmul(const std::string& id, const QuantTensor& x_q, std::size_t d_out) override;

 private:
  std::unique_ptr<HeClient> client_;
};

/// Everything an HE run needs: keys on the client, and for loopback an
/// in-process server.
struct HeContext {
  CryptoParams params;
  std::unique_ptr<SecretKey> sk;
  std::unique_ptr<KeySwitchKey> ksk;
  std::unique_ptr<HeServer> server;  // loopback only

  static HeContext create(const CryptoParams& params, uint64_t seed, bool with_loopback_server);
  /// Backend connected to the in-process server, or to host:port over TCP.
  std::unique_ptr<MatmulBackend> loopback_backend(uint64_t seed);
  std::unique_ptr<MatmulBackend> remote_backend(const std::string& host, uint16_t port, uint64_t seed);
};

/// B sequences of C input tokens and their next-token targets, row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t context = 0;
  std::vector<int> inputs;
  std::vector<int> targets;
};

class LoraModel {
 public:
  /// backend may be null for the fp32 configuration only.
  LoraModel(ToyModelConfig cfg, std::shared_ptr<const BaseModel> base, LoraAdapters adapters,
            std::unique_ptr<MatmulBackend> backend = nullptr);
  ~LoraModel();
  LoraModel(LoraModel&&) noexcept;

  const ToyModelConfig& config() const noexcept { return cfg_; }
  const BaseModel& base() const noexcept { return *base_; }
  const LoraAdapters& adapters() const noexcept { return adapters_; }
  LoraAdapters& adapters() noexcept { return adapters_; }

  /// Logits, (B*C) x vocab.
  Matrix forward(const TokenBatch& batch);
  /// Mean next-token cross-entropy.
  double loss(const TokenBatch& batch);
  /// Loss and adapter gradients; grads is overwritten with the layout of adapters().
  double loss_and_gradients(const TokenBatch& batch, LoraAdapters& grads);

  /// Records static ranges for activations and gradients from float passes
  /// over the given batches. Required before using static strategies.
  void calibrate(std::span<const TokenBatch> batches);

 private:
  struct Impl;
  ToyModelConfig cfg_;
  std::shared_ptr<const BaseModel> base_;
  LoraAdapters adapters_;
  std::unique_ptr<Impl> impl_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const LoraAdapters& shape, AdamConfig cfg = {});
  void step(LoraAdapters& params, const LoraAdapters& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  LoraAdapters m_, v_;
  std::size_t t_ = 0;
};

/// One optimizer step on the batch; returns the loss before the update.
double train_step(LoraModel& model, const TokenBatch& batch, AdamOptimizer& opt);

/// Byte-level corpus cut into samples of BOS + context bytes.
class Corpus {
 public:
  /// Splits text into consecutive windows of `context` bytes (last partial window dropped).
  Corpus(std::string_view text, std::size_t context);
  static Corpus from_file(const std::filesystem::path& path, std::size_t context);
  /// Small built-in text, used when no corpus file is given.
  static std::string_view builtin_text() noexcept;

  std::size_t size() const noexcept { return samples_.size(); }
  std::size_t context() const noexcept { return context_; }
  /// Samples i, i+1, ... (mod size) as one batch.
  TokenBatch batch(std::size_t first, std::size_t count) const;
  /// Deterministic epoch-shuffled batch sequence.
  std::vector<TokenBatch> schedule(std::size_t steps, std::size_t batch, uint64_t seed) const;

 private:
  std::size_t context_;
  std::vector<std::vector<int>> samples_;  // each: BOS followed by context bytes
};

/// Client FLOPs per forward+backward over one context, the backward pass
/// counted as twice the forward: 3 * n_layers * (2 d C^2 + 22 d r + 6 m r).
double client_flops_estimate(std::size_t n_layers, std::size_t d, std::size_t m, std::size_t r, std::size_t context);
double client_flops_estimate(const ToyModelConfig& cfg);

struct AblationRow {
  std::string strategy;  // "fp32" or a strategy name
  int bits = 0;          // 0 for fp32
  std::size_t step = 0;
  double loss = 0.0;
};

struct AblationSpec {
  std::string strategy;  // "fp32" or e.g. "DTok-SC"
  int bits = 8;
  std::string label() const;
};

struct AblationResult {
  std::vector<AblationRow> rows;                       // training loss per step
  std::vector<std::pair<std::string, double>> finals;  // label -> loss over the whole corpus after training

  double final_loss(std::string_view label) const;
};

/// Trains from the identical base, adapter init and batch schedule once per
/// spec on the float or integer-cleartext backend, then evaluates every
/// corpus sample with the trained adapters on the same backend. Static
/// strategies are calibrated on the first `calibration_batches` scheduled
/// batches first.
AblationResult quant_ablation_run(const ToyModelConfig& cfg, std::span<const AblationSpec> specs,
                                  const Corpus& corpus, std::size_t steps, AdamConfig adam,
                                  std::size_t calibration_batches = 4);

/// Mean loss over every corpus sample, in batches of cfg.batch.
double corpus_loss(LoraModel& model, const Corpus& corpus);

}  // namespace lorahe
