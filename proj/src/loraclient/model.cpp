#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "lorahe/loraclient.hpp"

namespace lorahe {

const char* to_string(Backend b) noexcept {
  switch (b) {
    case Backend::kFp32:
      return "fp32";
    case Backend::kQuantized:
      return "quantized";
    case Backend::kHeLoopback:
      return "he-loopback";
    case Backend::kHeRemote:
      return "he-remote";
  }
  return "?";
}

Backend parse_backend(std::string_view text) {
  for (Backend b : {Backend::kFp32, Backend::kQuantized, Backend::kHeLoopback, Backend::kHeRemote}) {
    if (text == to_string(b)) return b;
  }
  throw std::invalid_argument("unknown backend '" + std::string(text) +
                              "' (expected fp32, quantized, he-loopback or he-remote)");
}

void ToyModelConfig::validate() const {
  if (n_layers == 0 || d == 0 || m == 0 || n_heads == 0 || r == 0 || context == 0 || batch == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (d % n_heads != 0) throw std::invalid_argument("d must be a multiple of n_heads");
  if (d < 2) throw std::invalid_argument("d must be at least 2 (channel 0 is reserved)");
  if (r >= std::min(d, m)) throw std::invalid_argument("LoRA rank must be below min(d, m)");
  if (vocab_size < 2 || vocab_size > 256) throw std::invalid_argument("vocab_size must lie in [2, 256]");
}

const char* matrix_name(MatrixKind k) noexcept {
  static constexpr const char* names[] = {"q", "k", "v", "proj", "gate", "up", "down"};
  return names[static_cast<std::size_t>(k)];
}

std::pair<std::size_t, std::size_t> matrix_shape(const ToyModelConfig& cfg, MatrixKind k) noexcept {
  switch (k) {
    case MatrixKind::kGate:
    case MatrixKind::kUp:
      return {cfg.m, cfg.d};
    case MatrixKind::kDown:
      return {cfg.d, cfg.m};
    default:
      return {cfg.d, cfg.d};
  }
}

namespace {

constexpr std::array<MatrixKind, kMatrixKinds> kAllKinds{MatrixKind::kQ,    MatrixKind::kK,  MatrixKind::kV,
                                                         MatrixKind::kProj, MatrixKind::kGate, MatrixKind::kUp,
                                                         MatrixKind::kDown};

Matrix gaussian(ChaChaStream& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.gaussian();
  return m;
}

std::size_t idx(MatrixKind k) { return static_cast<std::size_t>(k); }

}  // namespace

BaseModel make_base_model(const ToyModelConfig& cfg) {
  cfg.validate();
  ChaChaStream rng(cfg.seed, StreamDomain::kModel);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  BaseModel b;
  b.embedding = gaussian(rng, cfg.vocab_size, cfg.d, 1.0);
  b.embedding.col(0).setZero();
  b.embedding.row(kBosToken).setZero();
  b.embedding(kBosToken, 0) = cfg.outlier_scale;

  // Sinusoid pairs (sin, 1 - cos) on channels 1.., all zero at position 0.
  b.positions = Matrix::Zero(static_cast<Eigen::Index>(cfg.context), d);
  const Eigen::Index pairs = (d - 1) / 2;
  for (Eigen::Index t = 0; t < b.positions.rows(); ++t) {
    for (Eigen::Index j = 0; j < pairs; ++j) {
      const double w = std::pow(1e4, -static_cast<double>(j) / static_cast<double>(std::max<Eigen::Index>(pairs, 1)));
      b.positions(t, 1 + 2 * j) = std::sin(static_cast<double>(t) * w);
      b.positions(t, 2 + 2 * j) = 1.0 - std::cos(static_cast<double>(t) * w);
    }
  }
  b.head = gaussian(rng, cfg.vocab_size, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.d)));

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    BaseLayer layer;
    for (MatrixKind k : kAllKinds) {
      const auto [rows, cols] = matrix_shape(cfg, k);
      layer.w[idx(k)] = gaussian(rng, rows, cols, 1.0 / std::sqrt(static_cast<double>(cols)));
      layer.bias[idx(k)] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows));
    }
    if (l == 0) {
      // The base never reads the massive channel.
      for (MatrixKind k : {MatrixKind::kQ, MatrixKind::kK, MatrixKind::kV}) layer.w[idx(k)].col(0).setZero();
    }
    b.layers.push_back(std::move(layer));
  }
  return b;
}

uint64_t BaseModel::checksum() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      uint64_t bits;
      std::memcpy(&bits, p + i, sizeof bits);
      for (int k = 0; k < 8; ++k) {
        h ^= (bits >> (8 * k)) & 0xff;
        h *= 0x100000001b3ull;
      }
    }
  };
  mix(embedding.data(), embedding.size());
  mix(positions.data(), positions.size());
  mix(head.data(), head.size());
  for (const auto& l : layers) {
    for (std::size_t k = 0; k < kMatrixKinds; ++k) {
      mix(l.w[k].data(), l.w[k].size());
      mix(l.bias[k].data(), l.bias[k].size());
    }
  }
  return h;
}

LoraAdapters LoraAdapters::init(const ToyModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ChaChaStream rng(seed, StreamDomain::kModel);
  LoraAdapters a;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    std::array<Adapter, kMatrixKinds> layer;
    for (MatrixKind k : kAllKinds) {
      const auto [rows, cols] = matrix_shape(cfg, k);
      layer[idx(k)].U = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cfg.r));
      layer[idx(k)].D = gaussian(rng, cfg.r, cols, 1.0 / std::sqrt(static_cast<double>(cols)));
    }
    a.layers.push_back(std::move(layer));
  }
  return a;
}

LoraAdapters LoraAdapters::zeros_like(const LoraAdapters& other) {
  LoraAdapters a = other;
  for (auto& layer : a.layers) {
    for (auto& ad : layer) {
      ad.U.setZero();
      ad.D.setZero();
    }
  }
  return a;
}

std::size_t LoraAdapters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers)
    for (const auto& ad : layer) n += static_cast<std::size_t>(ad.U.size() + ad.D.size());
  return n;
}

// ---- model ------------------------------------------------------------------

namespace {

QuantParams unit_scale(int bits) {
  QuantParams p;
  p.scale = {1.0};
  p.zero_point = {0};
  p.bits = bits;
  p.scheme = Scheme::kSymmetric;
  p.granularity = Granularity::kPerTensor;
  return p;
}

Eigen::ArrayXXd sigmoid(const Matrix& x) { return 1.0 / (1.0 + (-x.array()).exp()); }

}  // namespace

struct LoraModel::Impl {
  enum class Mode { kFloat, kQuant, kCalibrate };

  struct Linear {
    std::string id;
    const Matrix* w = nullptr;
    const Eigen::VectorXd* bias = nullptr;
    QuantTensor wq;
    Eigen::RowVectorXd sw_cols;  // weight scale per output column of y
    double sw_max = 1.0;
    RangeTracker act_range;
    RangeTracker grad_range;
    Matrix x;   // cached input
    Matrix xd;  // x D^T
  };

  struct LayerCache {
    Matrix q, k, v, g, u;
    std::vector<Matrix> probs;  // per (sequence, head)
  };

  ToyModelConfig cfg;
  std::unique_ptr<MatmulBackend> backend;
  Mode mode;
  std::vector<std::array<Linear, kMatrixKinds>> linears;
  std::vector<LayerCache> caches;
  Matrix final_x;

  Impl(const ToyModelConfig& c, const BaseModel& base, std::unique_ptr<MatmulBackend> be)
      : cfg(c), backend(std::move(be)), mode(cfg.backend == Backend::kFp32 ? Mode::kFloat : Mode::kQuant) {
    if (mode == Mode::kQuant && !backend) throw std::invalid_argument("backend " + std::string(to_string(cfg.backend)) + " needs a matmul backend");
    const QuantStrategy& qs = cfg.quant;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      std::array<Linear, kMatrixKinds> layer;
      for (MatrixKind k : kAllKinds) {
        Linear& lin = layer[idx(k)];
        lin.id = "L" + std::to_string(l) + "." + matrix_name(k);
        lin.w = &base.layers[l].w[idx(k)];
        lin.bias = &base.layers[l].bias[idx(k)];
        const Granularity wg = qs.weight.granularity == Granularity::kPerChannel ? Granularity::kPerChannel
                                                                                 : Granularity::kPerTensor;
        lin.wq = quantize(*lin.w, calibrate_dynamic(*lin.w, Scheme::kSymmetric, wg, qs.bits));
        lin.sw_cols.resize(lin.w->rows());
        for (Eigen::Index j = 0; j < lin.w->rows(); ++j) lin.sw_cols[j] = lin.wq.params.scale_at(static_cast<std::size_t>(j));
        lin.sw_max = lin.sw_cols.maxCoeff();
        if (backend) {
          backend->register_matrix(lin.id, lin.wq);
          QuantTensor t;
          t.rows = lin.wq.cols;
          t.cols = lin.wq.rows;
          t.params = unit_scale(qs.bits);
          t.data.resize(lin.wq.data.size());
          for (std::size_t i = 0; i < lin.wq.rows; ++i)
            for (std::size_t j = 0; j < lin.wq.cols; ++j) t.data[j * t.cols + i] = lin.wq.data[i * lin.wq.cols + j];
          backend->register_matrix(lin.id + "^T", t);
        }
      }
      linears.push_back(std::move(layer));
    }
    caches.resize(cfg.n_layers);
  }

  QuantParams range_params(const Matrix& t, const RangeTracker& tracker) const {
    const TensorStrategy& s = cfg.quant.activation;
    if (s.mode == RangeMode::kStatic) return tracker.params(Scheme::kSymmetric, cfg.quant.bits);
    return calibrate_dynamic(t, Scheme::kSymmetric, s.granularity, cfg.quant.bits);
  }

  Matrix linear_forward(Linear& lin, const Matrix& x, const Adapter& ad) {
    lin.x = x;
    lin.xd = x * ad.D.transpose();
    Matrix y;
    if (mode == Mode::kQuant) {
      const QuantTensor xq = quantize(x, range_params(x, lin.act_range));
      const auto acc = backend->matmul(lin.id, xq, lin.wq.rows);
      y = rescale_output(acc, xq.rows, lin.wq.rows, xq.params, lin.wq.params);
    } else {
      if (mode == Mode::kCalibrate) lin.act_range.observe(x);
      y = x * lin.w->transpose();
    }
    y.noalias() += cfg.lora_scale() * lin.xd * ad.U.transpose();
    y.rowwise() += lin.bias->transpose();
    return y;
  }

  // W ~ diag(s_w) W_q, so W^T g = s_max W_q^T (g * s_w / s_max). The fixed
  // power-of-two gradient scale keeps small gradients clear of the quantizer's
  // scale floor; it is divided out exactly afterwards.
  static constexpr double kGradScale = 0x1.0p16;

  static Matrix fold(const Linear& lin, const Matrix& gy) {
    return (gy.array().rowwise() * (lin.sw_cols.array() * (kGradScale / lin.sw_max))).matrix();
  }

  Matrix linear_backward(Linear& lin, const Matrix& gy, const Adapter& ad, Adapter& grad, bool need_input) {
    const double s = cfg.lora_scale();
    const Matrix g_xd = s * gy * ad.U;
    grad.U.noalias() += s * gy.transpose() * lin.xd;
    grad.D.noalias() += g_xd.transpose() * lin.x;
    if (!need_input) return {};
    Matrix gx = g_xd * ad.D;
    if (mode == Mode::kQuant) {
      const Matrix folded = fold(lin, gy);
      const QuantTensor gq = quantize(folded, range_params(folded, lin.grad_range));
      const auto acc = backend->matmul(lin.id + "^T", gq, lin.wq.cols);
      gx += (lin.sw_max / kGradScale) * rescale_output(acc, gq.rows, lin.wq.cols, gq.params, unit_scale(cfg.quant.bits));
    } else {
      if (mode == Mode::kCalibrate) lin.grad_range.observe(fold(lin, gy));
      gx.noalias() += gy * *lin.w;
    }
    return gx;
  }

  Matrix embed(const BaseModel& base, const TokenBatch& batch) const {
    const auto rows = static_cast<Eigen::Index>(batch.batch * batch.context);
    Matrix x(rows, static_cast<Eigen::Index>(cfg.d));
    for (Eigen::Index t = 0; t < rows; ++t) {
      const int tok = batch.inputs[static_cast<std::size_t>(t)];
      x.row(t) = base.embedding.row(tok) + base.positions.row(t % static_cast<Eigen::Index>(batch.context));
    }
    return x;
  }

  Matrix forward(const BaseModel& base, const LoraAdapters& ad, const TokenBatch& batch) {
    Matrix x = embed(base, batch);
    const auto C = static_cast<Eigen::Index>(batch.context);
    const auto dk = static_cast<Eigen::Index>(cfg.d_k());
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      auto& lin = linears[l];
      const auto& a = ad.layers[l];
      LayerCache& c = caches[l];
      c.q = linear_forward(lin[idx(MatrixKind::kQ)], x, a[idx(MatrixKind::kQ)]);
      c.k = linear_forward(lin[idx(MatrixKind::kK)], x, a[idx(MatrixKind::kK)]);
      c.v = linear_forward(lin[idx(MatrixKind::kV)], x, a[idx(MatrixKind::kV)]);
      Matrix attn(x.rows(), static_cast<Eigen::Index>(cfg.d));
      c.probs.clear();
      for (std::size_t b = 0; b < batch.batch; ++b) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * C;
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
          const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
          Matrix s = inv_sqrt * c.q.block(r0, c0, C, dk) * c.k.block(r0, c0, C, dk).transpose();
          for (Eigen::Index i = 0; i < C; ++i) {
            const double mx = s.row(i).head(i + 1).maxCoeff();
            double sum = 0.0;
            for (Eigen::Index j = 0; j < C; ++j) {
              s(i, j) = j <= i ? std::exp(s(i, j) - mx) : 0.0;
              sum += s(i, j);
            }
            s.row(i) /= sum;
          }
          attn.block(r0, c0, C, dk) = s * c.v.block(r0, c0, C, dk);
          c.probs.push_back(std::move(s));
        }
      }
      const Matrix h = linear_forward(lin[idx(MatrixKind::kProj)], attn, a[idx(MatrixKind::kProj)]);
      c.g = linear_forward(lin[idx(MatrixKind::kGate)], h, a[idx(MatrixKind::kGate)]);
      c.u = linear_forward(lin[idx(MatrixKind::kUp)], h, a[idx(MatrixKind::kUp)]);
      const Matrix z = (c.g.array() * sigmoid(c.g) * c.u.array()).matrix();
      x = h + linear_forward(lin[idx(MatrixKind::kDown)], z, a[idx(MatrixKind::kDown)]);
    }
    final_x = x;
    return x * base.head.transpose();
  }

  void backward(const BaseModel& base, const LoraAdapters& ad, const TokenBatch& batch, const Matrix& dlogits,
                LoraAdapters& grads) {
    Matrix dx = dlogits * base.head;
    const auto C = static_cast<Eigen::Index>(batch.context);
    const auto dk = static_cast<Eigen::Index>(cfg.d_k());
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t l = cfg.n_layers; l-- > 0;) {
      auto& lin = linears[l];
      const auto& a = ad.layers[l];
      auto& g = grads.layers[l];
      const LayerCache& c = caches[l];
      auto back = [&](MatrixKind k, const Matrix& gy, bool need) {
        return linear_backward(lin[idx(k)], gy, a[idx(k)], g[idx(k)], need);
      };
      // x' = h + down(z)
      const Matrix dz = back(MatrixKind::kDown, dx, true);
      const Eigen::ArrayXXd sg = sigmoid(c.g);
      const Eigen::ArrayXXd silu = c.g.array() * sg;
      const Matrix dg = (dz.array() * c.u.array() * sg * (1.0 + c.g.array() * (1.0 - sg))).matrix();
      const Matrix du = (dz.array() * silu).matrix();
      Matrix dh = dx;
      dh += back(MatrixKind::kGate, dg, true);
      dh += back(MatrixKind::kUp, du, true);
      const Matrix dattn = back(MatrixKind::kProj, dh, true);

      Matrix dq = Matrix::Zero(c.q.rows(), c.q.cols());
      Matrix dkm = Matrix::Zero(c.k.rows(), c.k.cols());
      Matrix dv = Matrix::Zero(c.v.rows(), c.v.cols());
      std::size_t p = 0;
      for (std::size_t b = 0; b < batch.batch; ++b) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(b) * C;
        for (std::size_t h = 0; h < cfg.n_heads; ++h, ++p) {
          const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
          const Matrix& P = c.probs[p];
          const auto dA = dattn.block(r0, c0, C, dk);
          dv.block(r0, c0, C, dk) = P.transpose() * dA;
          const Matrix dP = dA * c.v.block(r0, c0, C, dk).transpose();
          const Eigen::VectorXd rowdot = (dP.array() * P.array()).rowwise().sum();
          const Matrix dS = (P.array() * (dP.array().colwise() - rowdot.array())).matrix() * inv_sqrt;
          dq.block(r0, c0, C, dk) = dS * c.k.block(r0, c0, C, dk);
          dkm.block(r0, c0, C, dk) = dS.transpose() * c.q.block(r0, c0, C, dk);
        }
      }
      // The embedding is frozen, so layer 0 needs no input gradient.
      const bool need = l > 0;
      Matrix dq_in = back(MatrixKind::kQ, dq, need);
      Matrix dk_in = back(MatrixKind::kK, dkm, need);
      Matrix dv_in = back(MatrixKind::kV, dv, need);
      if (need) dx = dq_in + dk_in + dv_in;
    }
  }
};

LoraModel::LoraModel(ToyModelConfig cfg, std::shared_ptr<const BaseModel> base, LoraAdapters adapters,
                     std::unique_ptr<MatmulBackend> backend)
    : cfg_(std::move(cfg)), base_(std::move(base)), adapters_(std::move(adapters)) {
  cfg_.validate();
  if (!base_ || base_->layers.size() != cfg_.n_layers || adapters_.layers.size() != cfg_.n_layers) {
    throw std::invalid_argument("base model or adapters do not match the configuration");
  }
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    for (MatrixKind k : kAllKinds) {
      const auto [rows, cols] = matrix_shape(cfg_, k);
      const Adapter& a = adapters_.layers[l][idx(k)];
      if (static_cast<std::size_t>(a.U.rows()) != rows || static_cast<std::size_t>(a.U.cols()) != cfg_.r ||
          static_cast<std::size_t>(a.D.rows()) != cfg_.r || static_cast<std::size_t>(a.D.cols()) != cols) {
        throw std::invalid_argument("adapter shape mismatch at layer " + std::to_string(l) + " " + matrix_name(k));
      }
    }
  }
  impl_ = std::make_unique<Impl>(cfg_, *base_, std::move(backend));
}

LoraModel::~LoraModel() = default;
LoraModel::LoraModel(LoraModel&&) noexcept = default;

namespace {

void check_batch(const ToyModelConfig& cfg, const TokenBatch& b) {
  if (b.batch == 0 || b.context == 0 || b.context > cfg.context || b.inputs.size() != b.batch * b.context ||
      b.targets.size() != b.inputs.size()) {
    throw std::invalid_argument("malformed token batch");
  }
  for (std::size_t i = 0; i < b.inputs.size(); ++i) {
    if (b.inputs[i] < 0 || static_cast<std::size_t>(b.inputs[i]) >= cfg.vocab_size || b.targets[i] < 0 ||
        static_cast<std::size_t>(b.targets[i]) >= cfg.vocab_size) {
      throw std::invalid_argument("token id outside the vocabulary");
    }
  }
}

}  // namespace

Matrix LoraModel::forward(const TokenBatch& batch) {
  check_batch(cfg_, batch);
  return impl_->forward(*base_, adapters_, batch);
}

namespace {

// Returns the mean loss and overwrites logits with d(loss)/d(logits).
double cross_entropy(Matrix& logits, const std::vector<int>& targets) {
  const auto n = logits.rows();
  double loss = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) {
    auto row = logits.row(t);
    const double mx = row.maxCoeff();
    row.array() = (row.array() - mx).exp();
    const double sum = row.sum();
    row /= sum;
    const int y = targets[static_cast<std::size_t>(t)];
    loss -= std::log(std::max(row(y), std::numeric_limits<double>::min()));
    row(y) -= 1.0;
  }
  logits /= static_cast<double>(n);
  return loss / static_cast<double>(n);
}

}  // namespace

double LoraModel::loss(const TokenBatch& batch) {
  Matrix logits = forward(batch);
  return cross_entropy(logits, batch.targets);
}

double LoraModel::loss_and_gradients(const TokenBatch& batch, LoraAdapters& grads) {
  Matrix dlogits = forward(batch);
  const double l = cross_entropy(dlogits, batch.targets);
  grads = LoraAdapters::zeros_like(adapters_);
  impl_->backward(*base_, adapters_, batch, dlogits, grads);
  return l;
}

void LoraModel::calibrate(std::span<const TokenBatch> batches) {
  const auto saved = impl_->mode;
  impl_->mode = Impl::Mode::kCalibrate;
  try {
    for (const auto& b : batches) {
      LoraAdapters scratch = LoraAdapters::zeros_like(adapters_);
      loss_and_gradients(b, scratch);
    }
  } catch (...) {
    impl_->mode = saved;
    throw;
  }
  impl_->mode = saved;
}

// ---- optimizer --------------------------------------------------------------

AdamOptimizer::AdamOptimizer(const LoraAdapters& shape, AdamConfig cfg)
    : cfg_(cfg), m_(LoraAdapters::zeros_like(shape)), v_(LoraAdapters::zeros_like(shape)) {}

void AdamOptimizer::step(LoraAdapters& params, const LoraAdapters& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto update = [&](Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    p.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    for (std::size_t k = 0; k < kMatrixKinds; ++k) {
      update(params.layers[l][k].U, grads.layers[l][k].U, m_.layers[l][k].U, v_.layers[l][k].U);
      update(params.layers[l][k].D, grads.layers[l][k].D, m_.layers[l][k].D, v_.layers[l][k].D);
    }
  }
}

double train_step(LoraModel& model, const TokenBatch& batch, AdamOptimizer& opt) {
  LoraAdapters grads = LoraAdapters::zeros_like(model.adapters());
  const double loss = model.loss_and_gradients(batch, grads);
  opt.step(model.adapters(), grads);
  return loss;
}

}  // namespace lorahe
