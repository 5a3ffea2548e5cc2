#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lorahe/loraclient.hpp"

namespace lorahe {

// ---- backends -----------------------------------------------------------------

void CleartextBackend::register_matrix(const std::string& id, const QuantTensor& w_q) {
  IntMatrix t(w_q.cols, w_q.rows);
  for (std::size_t i = 0; i < w_q.rows; ++i)
    for (std::size_t j = 0; j < w_q.cols; ++j) t(j, i) = static_cast<uint64_t>(w_q.data[i * w_q.cols + j]);
  transposed_[id] = std::move(t);
}

std::vector<int64_t> CleartextBackend::matmul(const std::string& id, const QuantTensor& x_q, std::size_t d_out) {
  const auto it = transposed_.find(id);
  if (it == transposed_.end()) throw std::invalid_argument("no matrix registered as '" + id + "'");
  const IntMatrix& wt = it->second;
  if (wt.rows() != x_q.cols || wt.cols() != d_out) throw std::invalid_argument("shape mismatch for '" + id + "'");
  std::vector<uint64_t> words(x_q.data.size());
  std::transform(x_q.data.begin(), x_q.data.end(), words.begin(), [](int64_t v) { return static_cast<uint64_t>(v); });
  // Products are far below 2^63, so the wrap-around result is the exact integer.
  const IntMatrix y = int_matmul(IntMatrix(x_q.rows, x_q.cols, std::move(words)), wt);
  std::vector<int64_t> out(y.data().size());
  std::transform(y.data().begin(), y.data().end(), out.begin(), [](uint64_t v) { return static_cast<int64_t>(v); });
  return out;
}

void HeBackend::register_matrix(const std::string& id, const QuantTensor& w_q) {
  client_->register_matrix(id, w_q.data, w_q.rows, w_q.cols, w_q.params.bits);
}

std::vector<int64_t> HeBackend::matmul(const std::string& id, const QuantTensor& x_q, std::size_t d_out) {
  std::vector<double> scales(x_q.rows);
  for (std::size_t t = 0; t < x_q.rows; ++t) scales[t] = x_q.params.scale_at(t);
  return client_->matvec(id, x_q.data, x_q.rows, x_q.cols, d_out, scales);
}

HeContext HeContext::create(const CryptoParams& params, uint64_t seed, bool with_loopback_server) {
  HeContext c;
  c.params = params;
  auto [sk, ksk] = keygen(params, seed);
  c.sk = std::make_unique<SecretKey>(std::move(sk));
  c.ksk = std::make_unique<KeySwitchKey>(std::move(ksk));
  if (with_loopback_server) c.server = std::make_unique<HeServer>(params);
  return c;
}

std::unique_ptr<MatmulBackend> HeContext::loopback_backend(uint64_t seed) {
  if (!server) throw std::logic_error("context was created without a loopback server");
  auto client = std::make_unique<HeClient>(std::make_unique<LoopbackConnection>(*server), *sk, params, seed);
  client->upload_ksk(*ksk);
  return std::make_unique<HeBackend>(std::move(client));
}

std::unique_ptr<MatmulBackend> HeContext::remote_backend(const std::string& host, uint16_t port, uint64_t seed) {
  auto client = std::make_unique<HeClient>(std::make_unique<TcpConnection>(host, port), *sk, params, seed);
  client->upload_ksk(*ksk);
  return std::make_unique<HeBackend>(std::move(client));
}

// ---- checkpoints --------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'L', 'R', 'A', 'D'};
constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& o, uint32_t v) {
  for (int i = 0; i < 4; ++i) o.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = in.get();
    if (c == EOF) throw std::runtime_error("truncated adapter checkpoint");
    v |= static_cast<uint32_t>(c) << (8 * i);
  }
  return v;
}

void put_matrix(std::ostream& o, const Matrix& m) {
  put_u32(o, static_cast<uint32_t>(m.rows()));
  put_u32(o, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) put_u32(o, std::bit_cast<uint32_t>(static_cast<float>(m.data()[i])));
}

Matrix get_matrix(std::istream& in) {
  const uint32_t rows = get_u32(in), cols = get_u32(in);
  if (std::size_t{rows} * cols > (std::size_t{1} << 28)) throw std::runtime_error("implausible matrix in checkpoint");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<float>(get_u32(in));
  return m;
}

}  // namespace

void save_adapters(const LoraAdapters& a, const std::filesystem::path& path) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o.write(kMagic, 4);
  put_u32(o, kCheckpointVersion);
  put_u32(o, static_cast<uint32_t>(a.layers.size() * kMatrixKinds * 2));
  for (const auto& layer : a.layers) {
    for (const auto& ad : layer) {
      put_matrix(o, ad.U);
      put_matrix(o, ad.D);
    }
  }
  if (!o) throw std::runtime_error("write failed for " + path.string());
}

LoraAdapters load_adapters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) throw std::runtime_error("not an adapter checkpoint");
  if (get_u32(in) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  const uint32_t count = get_u32(in);
  if (count % (kMatrixKinds * 2) != 0) throw std::runtime_error("checkpoint matrix count is not a whole number of layers");
  LoraAdapters a;
  for (uint32_t l = 0; l < count / (kMatrixKinds * 2); ++l) {
    std::array<Adapter, kMatrixKinds> layer;
    for (auto& ad : layer) {
      ad.U = get_matrix(in);
      ad.D = get_matrix(in);
    }
    a.layers.push_back(std::move(layer));
  }
  if (in.peek() != EOF) throw std::runtime_error("trailing bytes in checkpoint");
  return a;
}

// ---- corpus -------------------------------------------------------------------

Corpus::Corpus(std::string_view text, std::size_t context) : context_(context) {
  if (context == 0) throw std::invalid_argument("context must be positive");
  for (std::size_t start = 0; start + context <= text.size(); start += context) {
    std::vector<int> s{kBosToken};
    for (std::size_t i = 0; i < context; ++i) {
      const auto byte = static_cast<unsigned char>(text[start + i]);
      if (byte == kBosToken) throw std::invalid_argument("corpus contains the reserved byte 0");
      s.push_back(byte);
    }
    samples_.push_back(std::move(s));
  }
  if (samples_.empty()) throw std::invalid_argument("corpus is shorter than one context window");
}

Corpus Corpus::from_file(const std::filesystem::path& path, std::size_t context) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return Corpus(ss.str(), context);
}

std::string_view Corpus::builtin_text() noexcept {
  return "the cat sat on the mat. the dog sat on the log. a bird sang in the tree. "
         "the sun rose over the hill and the sky turned gold. we walked to the river "
         "and watched the boats drift by. the baker made fresh bread every morning. "
         "children played in the park until the lamps came on. the old clock in the "
         "hall struck nine. she read a book by the window while the rain fell. he "
         "fixed the bike and rode it down the lane. the garden was full of red and "
         "yellow flowers. a small fox ran across the field at dusk. the train left "
         "the station on time. they ate soup and bread for supper. the wind blew the "
         "leaves across the yard. the teacher wrote the sums on the board. we counted "
         "the stars from the roof. the kettle sang on the stove. a ship sailed into "
         "the harbour at noon. the farmer fed the hens and the goats. the library was "
         "quiet and warm. my friend sent a letter from the coast. the snow covered the "
         "road and the fields. the music played softly in the next room. the team won "
         "the match in the last minute. the moon was bright above the lake. the shop "
         "sold apples, pears and plums. a green frog sat on a stone by the pond. the "
         "painter mixed blue and white to make the sky. the bus was late again today. "
         "the baby laughed at the little dog. the mountain path was steep and narrow.\n";
}

TokenBatch Corpus::batch(std::size_t first, std::size_t count) const {
  TokenBatch b;
  b.batch = count;
  b.context = context_;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& s = samples_[(first + i) % samples_.size()];
    b.inputs.insert(b.inputs.end(), s.begin(), s.end() - 1);
    b.targets.insert(b.targets.end(), s.begin() + 1, s.end());
  }
  return b;
}

std::vector<TokenBatch> Corpus::schedule(std::size_t steps, std::size_t batch, uint64_t seed) const {
  ChaChaStream rng(seed, StreamDomain::kModel);
  std::vector<std::size_t> order;
  std::size_t pos = 0;
  auto next = [&] {
    if (pos == order.size()) {
      order.resize(samples_.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
      }
      pos = 0;
    }
    return order[pos++];
  };
  std::vector<TokenBatch> out;
  for (std::size_t s = 0; s < steps; ++s) {
    TokenBatch b;
    b.batch = batch;
    b.context = context_;
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& sample = samples_[next()];
      b.inputs.insert(b.inputs.end(), sample.begin(), sample.end() - 1);
      b.targets.insert(b.targets.end(), sample.begin() + 1, sample.end());
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---- estimates and studies ----------------------------------------------------

double client_flops_estimate(std::size_t n_layers, std::size_t d, std::size_t m, std::size_t r, std::size_t context) {
  const double dd = static_cast<double>(d), mm = static_cast<double>(m), rr = static_cast<double>(r),
               cc = static_cast<double>(context);
  // One forward pass plus a backward pass costing twice as much.
  return 3.0 * static_cast<double>(n_layers) * (2.0 * dd * cc * cc + 22.0 * dd * rr + 6.0 * mm * rr);
}

double client_flops_estimate(const ToyModelConfig& cfg) {
  return client_flops_estimate(cfg.n_layers, cfg.d, cfg.m, cfg.r, cfg.context);
}

std::string AblationSpec::label() const {
  return strategy == "fp32" ? std::string("fp32") : strategy + "/" + std::to_string(bits);
}

double corpus_loss(LoraModel& model, const Corpus& corpus) {
  const std::size_t per = model.config().batch;
  double total = 0.0;
  for (std::size_t first = 0; first < corpus.size(); first += per) {
    const std::size_t n = std::min(per, corpus.size() - first);
    total += model.loss(corpus.batch(first, n)) * static_cast<double>(n);
  }
  return total / static_cast<double>(corpus.size());
}

AblationResult quant_ablation_run(const ToyModelConfig& cfg, std::span<const AblationSpec> specs,
                                  const Corpus& corpus, std::size_t steps, AdamConfig adam,
                                  std::size_t calibration_batches) {
  cfg.validate();
  if (corpus.context() != cfg.context) throw std::invalid_argument("corpus context differs from the model context");
  const auto base = std::make_shared<const BaseModel>(make_base_model(cfg));
  const LoraAdapters init = LoraAdapters::init(cfg, cfg.seed + 1);
  const auto batches = corpus.schedule(steps, cfg.batch, cfg.seed + 2);
  AblationResult result;
  for (const AblationSpec& spec : specs) {
    ToyModelConfig c = cfg;
    std::unique_ptr<MatmulBackend> backend;
    if (spec.strategy == "fp32") {
      c.backend = Backend::kFp32;
    } else {
      c.backend = Backend::kQuantized;
      c.quant = parse_strategy(spec.strategy, spec.bits);
      backend = std::make_unique<CleartextBackend>();
    }
    LoraModel model(c, base, init, std::move(backend));
    if (c.backend != Backend::kFp32 &&
        (c.quant.activation.mode == RangeMode::kStatic || c.quant.weight.mode == RangeMode::kStatic)) {
      const std::size_t n = std::min(calibration_batches, batches.size());
      model.calibrate(std::span(batches).first(n));
    }
    AdamOptimizer opt(model.adapters(), adam);
    for (std::size_t s = 0; s < steps; ++s) {
      result.rows.push_back({spec.strategy, spec.strategy == "fp32" ? 0 : spec.bits, s, train_step(model, batches[s], opt)});
    }
    result.finals.emplace_back(spec.label(), corpus_loss(model, corpus));
  }
  return result;
}

double AblationResult::final_loss(std::string_view label) const {
  for (const auto& [l, v] : finals)
    if (l == label) return v;
  throw std::invalid_argument("no result for " + std::string(label));
}

}  // namespace lorahe
