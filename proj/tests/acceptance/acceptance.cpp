// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: lorahe_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>

#include "lorahe/loraclient.hpp"

using namespace lorahe;

namespace {

// Tolerances.
constexpr std::size_t kInputBytes = 9992;
constexpr std::size_t kOutputBytes = 13312;
constexpr double kInputFactor = 4.88;
constexpr double kOutputFactor = 4.33;
constexpr double kFactorTol = 0.01;

constexpr std::size_t kBitErrorTrials = 1000;
constexpr double kHighBitErrorMax = 0.01;
constexpr double kMonotoneSigmas = 3.0;

constexpr double kMsbFailureMax = 0.01;

constexpr std::size_t kAblationSteps = 400;
constexpr std::size_t kAblationBatch = 8;
constexpr double kAblationLr = 2e-4;
constexpr double kDtokSc8Max = 0.05;
constexpr double kDtSt16Max = 0.02;
constexpr double kStSt8Min = 1.5;

constexpr std::size_t kFidelitySteps = 5;
constexpr double kFidelityLr = 2e-4;
constexpr double kFidelityMax = 0.02;
constexpr double kFidelityOutlier = 3.0;

constexpr double kFlopsTarget = 86.5e6;
constexpr double kFlopsTol = 0.005;

constexpr double kFdStep = 1e-5;
constexpr double kFdMax = 1e-4;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<int64_t> random_values(std::mt19937_64& rng, std::size_t n, int64_t lo, int64_t hi) {
  std::uniform_int_distribution<int64_t> d(lo, hi);
  std::vector<int64_t> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<int64_t> oracle_matvec(std::span<const int64_t> w, std::span<const int64_t> x, std::size_t d_out,
                                   std::size_t d_in) {
  std::vector<int64_t> y(d_out, 0);
  for (std::size_t j = 0; j < d_out; ++j)
    for (std::size_t i = 0; i < d_in; ++i) y[j] += w[j * d_in + i] * x[i];
  return y;
}

struct Keys {
  SecretKey sk;
  KeySwitchKey ksk;
};

const Keys& default_keys() {
  static const Keys k = [] {
    auto [sk, ksk] = keygen(CryptoParams{}, 2024);
    return Keys{std::move(sk), std::move(ksk)};
  }();
  return k;
}

// ---- 1: wire sizes ------------------------------------------------------------

Outcome wire_sizes() {
  const CryptoParams p;
  const auto& k = default_keys();
  ChaChaStream rng(1, StreamDomain::kSeeds);
  std::mt19937_64 gen(1);
  const auto x = random_values(gen, p.poly_size, -127, 127);
  const auto w = random_values(gen, 4 * p.poly_size, -127, 127);
  const EncryptedActivation act = encrypt_activation(k.sk, x, p, rng);
  const std::size_t in = serialize_input(act.blocks[0], p).size();
  const auto out = server_matvec(encode_weights("w", w, 4, p.poly_size, p), std::span(&act, 1), k.ksk);
  const std::size_t outb = serialize_output(out[0].ciphertexts[0], p).size();
  const ExpansionReport r = expansion_report(p);
  const bool ok = in == kInputBytes && outb == kOutputBytes && r.input_bytes == kInputBytes &&
                  r.output_bytes == kOutputBytes && std::abs(r.input_factor - kInputFactor) <= kFactorTol &&
                  std::abs(r.output_factor - kOutputFactor) <= kFactorTol;
  return {ok, fmt("input %zu B, output %zu B, factors %.4f / %.4f", in, outb, r.input_factor, r.output_factor)};
}

// ---- 2: bit-error contract ----------------------------------------------------

Outcome bit_errors() {
  const CryptoParams p;
  const auto& k = default_keys();
  const std::vector<std::size_t> dims{768, 2048, 8192};
  const auto rows = bit_error_study(dims, kBitErrorTrials, k.sk, k.ksk, 99);
  bool ok = true;
  double worst_high = 0.0;
  std::vector<double> lsb(dims.size(), 0.0);
  for (const auto& r : rows) {
    if (r.trials < kBitErrorTrials) ok = false;
    const auto idx = static_cast<std::size_t>(std::find(dims.begin(), dims.end(), r.d_in) - dims.begin());
    if (r.bit_position == 0) lsb[idx] = r.error_rate;
    if (r.bit_position >= p.gamma) worst_high = std::max(worst_high, r.error_rate);
  }
  if (worst_high >= kHighBitErrorMax) ok = false;
  // Non-decreasing up to sampling error of the difference of two rates.
  bool monotone = true;
  for (std::size_t i = 1; i < lsb.size(); ++i) {
    const double n = static_cast<double>(kBitErrorTrials);
    const double se = std::sqrt(lsb[i - 1] * (1 - lsb[i - 1]) / n + lsb[i] * (1 - lsb[i]) / n);
    if (lsb[i] < lsb[i - 1] - kMonotoneSigmas * se) monotone = false;
  }
  ok = ok && monotone;
  return {ok, fmt("worst rate at bits >= %d: %.4f; LSB rates %.4f, %.4f, %.4f (%s)", p.gamma, worst_high, lsb[0],
                  lsb[1], lsb[2], monotone ? "non-decreasing within 3 SE" : "decreasing")};
}

// ---- 3: oracle equivalence ----------------------------------------------------

Outcome oracle_equivalence() {
  const CryptoParams p;
  const auto& k = default_keys();
  const std::vector<std::pair<std::size_t, std::size_t>> shapes{{768, 768},   {3072, 768},  {2048, 2048},
                                                                {768, 3072},  {8192, 2048}, {2048, 8192},
                                                                {100, 37},    {2049, 5}};
  std::mt19937_64 gen(3);
  ChaChaStream rng(3, StreamDomain::kSeeds);
  bool ok = true;
  double worst = 0.0;
  for (const auto& [d_in, d_out] : shapes) {
    const auto w = random_values(gen, d_in * d_out, -127, 127);
    const auto x = random_values(gen, d_in, -127, 127);
    const auto y = enc_matvec(x, encode_weights("w", w, d_out, d_in, p), k.sk, k.ksk, rng);
    const auto exact = oracle_matvec(w, x, d_out, d_in);
    std::size_t fail = 0;
    for (std::size_t j = 0; j < d_out; ++j) fail += msb_agree(y[j], exact[j], p) ? 0 : 1;
    const double rate = static_cast<double>(fail) / static_cast<double>(d_out);
    worst = std::max(worst, rate);
    if (rate >= kMsbFailureMax) ok = false;
  }

  // Batched key switch against the sequential definition on real dot-product outputs.
  const std::size_t d_in = 2048, d_out = 16;
  const auto w = random_values(gen, d_in * d_out, -127, 127);
  const auto x = random_values(gen, d_in, -127, 127);
  const ServerWeights sw = encode_weights("w", w, d_out, d_in, p);
  const EncryptedActivation act = encrypt_activation(k.sk, x, p, rng);
  const LweBatch lwes = enc_dot_products(act, sw, p);
  const int scale = p.input_scale_bits();
  const auto batched = keyswitch_batched(lwes.a, lwes.b, k.ksk, scale);
  bool ks_equal = batched.size() == d_out;
  for (std::size_t j = 0; ks_equal && j < d_out; ++j) ks_equal = batched[j] == keyswitch(lwes.sample(j), k.ksk);

  // Multi-token, multi-threaded, SIMD schedule against one token at a time, serial, scalar.
  std::vector<EncryptedActivation> tokens;
  for (int t = 0; t < 3; ++t) tokens.push_back(encrypt_activation(k.sk, random_values(gen, d_in, -127, 127), p, rng));
  const auto fast = server_matvec(sw, tokens, k.ksk, {.threads = std::max(2u, std::thread::hardware_concurrency())});
  bool sched_equal = fast.size() == tokens.size();
  for (std::size_t t = 0; sched_equal && t < tokens.size(); ++t) {
    const auto slow = server_matvec(sw, std::span(&tokens[t], 1), k.ksk, {.threads = 1, .allow_simd = false});
    sched_equal = slow[0].ciphertexts == fast[t].ciphertexts;
  }
  ok = ok && ks_equal && sched_equal;
  return {ok, fmt("worst MSB failure rate %.4f over %zu shapes; batched key switch %s; schedules %s", worst,
                  shapes.size(), ks_equal ? "bit-identical" : "DIFFER", sched_equal ? "bit-identical" : "DIFFER")};
}

// ---- 4: quantization ablation -------------------------------------------------

Outcome ablation() {
  ToyModelConfig c;
  c.batch = kAblationBatch;
  const Corpus corpus(Corpus::builtin_text(), c.context);
  const std::vector<AblationSpec> specs{{"fp32", 0}, {"DTok-SC", 8}, {"DT-ST", 16}, {"ST-ST", 8}};
  const AblationResult r = quant_ablation_run(c, specs, corpus, kAblationSteps, AdamConfig{.lr = kAblationLr});
  const double fp = r.final_loss("fp32");
  const double dtok = r.final_loss("DTok-SC/8");
  const double dtst = r.final_loss("DT-ST/16");
  const double stst = r.final_loss("ST-ST/8");
  const double e_dtok = std::abs(dtok - fp) / fp;
  const double e_dtst = std::abs(dtst - fp) / fp;
  const bool diverged = !std::isfinite(stst);
  const bool ok = std::isfinite(fp) && e_dtok <= kDtokSc8Max && e_dtst <= kDtSt16Max && (diverged || stst >= kStSt8Min * fp);
  return {ok, fmt("fp32 %.4f; DTok-SC/8 %.4f (%.2f%%); DT-ST/16 %.4f (%.2f%%); ST-ST/8 %.4f (%.2fx)", fp, dtok,
                  100 * e_dtok, dtst, 100 * e_dtst, stst, stst / fp)};
}

// ---- 5: HE execution fidelity -------------------------------------------------

std::vector<double> train_losses(ToyModelConfig c, std::unique_ptr<MatmulBackend> backend) {
  const Corpus corpus(Corpus::builtin_text(), c.context);
  auto base = std::make_shared<const BaseModel>(make_base_model(c));
  LoraModel model(c, base, LoraAdapters::init(c, c.seed + 1), std::move(backend));
  AdamOptimizer opt(model.adapters(), AdamConfig{.lr = kFidelityLr});
  std::vector<double> losses;
  for (const auto& b : corpus.schedule(kFidelitySteps, c.batch, c.seed + 2)) losses.push_back(train_step(model, b, opt));
  return losses;
}

struct Fidelity {
  double worst = 0.0;
  std::string per_step;
};

Fidelity fidelity_run(double outlier_scale) {
  ToyModelConfig c;
  c.d = 32;
  c.m = 128;
  c.context = 16;
  c.outlier_scale = outlier_scale;
  c.backend = Backend::kQuantized;
  const auto clear = train_losses(c, std::make_unique<CleartextBackend>());
  HeContext he = HeContext::create(CryptoParams{}, 101, true);
  c.backend = Backend::kHeLoopback;
  const auto enc = train_losses(c, he.loopback_backend(102));
  Fidelity f;
  for (std::size_t s = 0; s < clear.size(); ++s) {
    const double d = std::abs(clear[s] - enc[s]);
    f.worst = std::max(f.worst, d);
    f.per_step += (s ? " " : "") + fmt("%.3f", d);
  }
  if (enc.size() != kFidelitySteps) f.worst = INFINITY;
  return f;
}

// Decided with the mild outlier. With the 300x outlier every HE product on the
// outlier row is pure noise scaled by that row's quantization step; it is reported only.
Outcome he_fidelity() {
  const Fidelity mild = fidelity_run(kFidelityOutlier);
  const Fidelity strong = fidelity_run(ToyModelConfig{}.outlier_scale);
  return {mild.worst < kFidelityMax,
          fmt("outlier %g: max |loss diff| %.4f (%s); outlier %g, informational: max %.4f (%s)", kFidelityOutlier,
              mild.worst, mild.per_step.c_str(), ToyModelConfig{}.outlier_scale, strong.worst,
              strong.per_step.c_str())};
}

// ---- 6: client FLOPs ----------------------------------------------------------

Outcome flops() {
  const double f = client_flops_estimate(16, 2048, 8192, 8, 16);
  return {std::abs(f - kFlopsTarget) <= kFlopsTol * kFlopsTarget, fmt("%.0f FLOPs", f)};
}

// ---- 7: gradient correctness --------------------------------------------------

Outcome gradients() {
  ToyModelConfig c;
  c.n_layers = 2;
  c.d = 8;
  c.m = 16;
  c.n_heads = 2;
  c.r = 2;
  c.alpha = 4.0;
  c.vocab_size = 16;
  c.context = 3;
  c.batch = 2;
  c.outlier_scale = 3.0;
  auto base = std::make_shared<const BaseModel>(make_base_model(c));
  LoraModel model(c, base, LoraAdapters::init(c, 5));
  std::mt19937_64 gen(21);
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto& layer : model.adapters().layers)
    for (auto& ad : layer) {
      for (Eigen::Index i = 0; i < ad.U.size(); ++i) ad.U.data()[i] = n(gen);
      for (Eigen::Index i = 0; i < ad.D.size(); ++i) ad.D.data()[i] += n(gen);
    }
  std::uniform_int_distribution<int> tok(1, 15);
  TokenBatch b{2, 3, {}, {}};
  for (int i = 0; i < 6; ++i) {
    b.inputs.push_back(i % 3 == 0 ? kBosToken : tok(gen));
    b.targets.push_back(tok(gen));
  }
  LoraAdapters grads;
  model.loss_and_gradients(b, grads);
  double worst = 0.0;
  bool nonzero = true;
  for (std::size_t l = 0; l < c.n_layers; ++l)
    for (std::size_t k = 0; k < kMatrixKinds; ++k)
      for (int which = 0; which < 2; ++which) {
        Matrix& p = which == 0 ? model.adapters().layers[l][k].U : model.adapters().layers[l][k].D;
        const Matrix& g = which == 0 ? grads.layers[l][k].U : grads.layers[l][k].D;
        Matrix fd(p.rows(), p.cols());
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          const double saved = p.data()[i];
          p.data()[i] = saved + kFdStep;
          const double up = model.loss(b);
          p.data()[i] = saved - kFdStep;
          const double down = model.loss(b);
          p.data()[i] = saved;
          fd.data()[i] = (up - down) / (2 * kFdStep);
        }
        nonzero = nonzero && fd.norm() > 0.0;
        worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-300));
      }
  return {nonzero && worst < kFdMax, fmt("worst per-matrix relative error %.3e", worst)};
}

// ---- 8: protocol equivalence --------------------------------------------------

Outcome protocol() {
  const CryptoParams p;
  const auto& k = default_keys();
  const std::size_t d_out = 70, d_in = 300, tokens = 3;
  std::mt19937_64 gen(8);
  const auto w = random_values(gen, d_out * d_in, -127, 127);
  const auto x = random_values(gen, tokens * d_in, -127, 127);
  constexpr uint64_t seed = 12;

  const ServerWeights sw = encode_weights("w", w, d_out, d_in, p);
  ChaChaStream rng(seed, StreamDomain::kSeeds);
  std::vector<int64_t> local;
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto y = enc_matvec(std::span(x).subspan(t * d_in, d_in), sw, k.sk, k.ksk, rng);
    local.insert(local.end(), y.begin(), y.end());
  }
  auto over = [&](std::unique_ptr<Connection> conn) {
    HeClient client(std::move(conn), k.sk, p, seed);
    client.upload_ksk(k.ksk);
    client.register_matrix("w", w, d_out, d_in);
    return client.matvec("w", x, tokens, d_in, d_out);
  };
  HeServer loop_server(p);
  const auto loop = over(std::make_unique<LoopbackConnection>(loop_server));
  HeServer tcp_server(p);
  TcpServer tcp(tcp_server, "127.0.0.1", 0);
  const auto sock = over(std::make_unique<TcpConnection>("127.0.0.1", tcp.port()));
  tcp.stop();
  const bool equal = local == loop && loop == sock;

  // Canonical round trips: decode then encode reproduces the bytes.
  ChaChaStream rng2(seed + 1, StreamDomain::kSeeds);
  MatVecRequest req{7, "w", {0.5, 0.25, 2.0}, {}};
  for (std::size_t t = 0; t < tokens; ++t)
    req.tokens.push_back(encrypt_activation(k.sk, std::span(x).subspan(t * d_in, d_in), p, rng2));
  const MatVecResponse resp{7, server_matvec(sw, req.tokens, k.ksk)};
  const std::vector<Frame> frames{make_frame(RegisterMatrix{"w", uint32_t(d_out), uint32_t(d_in), 8, w}),
                                  make_frame(make_ksk_upload(k.ksk), p),
                                  make_frame(req, p),
                                  make_frame(resp, p),
                                  make_frame(ErrorMessage{7, ErrorCode::kUnknownMatrix, "no such matrix"}),
                                  make_frame(Ack{7})};
  bool canonical = true;
  for (const auto& f : frames) {
    const Bytes bytes = encode_frame(f);
    canonical = canonical && encode_frame(decode_frame(bytes)) == bytes;
  }
  canonical = canonical && parse_request(frames[2], p) == req;
  const Bytes in = serialize_input(req.tokens[0].blocks[0], p);
  canonical = canonical && serialize_input(deserialize_input(in, p), p) == in;
  const Bytes out = serialize_output(resp.tokens[0].ciphertexts[0], p);
  canonical = canonical && serialize_output(deserialize_output(out, p), p) == out;
  const Bytes packed = serialize_packed(resp.tokens[0], p);
  canonical = canonical && serialize_packed(deserialize_packed(packed, d_out, p), p) == packed;

  return {equal && canonical, fmt("socket, loopback and in-process results %s; round trips %s",
                                  equal ? "bit-identical" : "DIFFER", canonical ? "canonical" : "NOT canonical")};
}

// ---- 9: privacy boundary ------------------------------------------------------

template <typename T>
concept Sendable = requires(const T& m) { make_frame(m); } || requires(const T& m, const CryptoParams& p) {
  make_frame(m, p);
};

// Every message kind has a constructor, and no secret or cleartext client type reaches one.
static_assert(Sendable<RegisterMatrix> && Sendable<KskUpload> && Sendable<MatVecRequest> &&
              Sendable<MatVecResponse> && Sendable<ErrorMessage> && Sendable<Ack>);
static_assert(!Sendable<SecretKey> && !Sendable<LoraAdapters> && !Sendable<Adapter> && !Sendable<Matrix> &&
              !Sendable<QuantTensor> && !Sendable<TokenBatch> && !Sendable<std::vector<int64_t>> &&
              !Sendable<std::vector<double>> && !Sendable<KeySwitchKey>);
// Activations reach a request only as ciphertexts.
static_assert(std::is_same_v<decltype(MatVecRequest::tokens), std::vector<EncryptedActivation>>);
static_assert(std::is_same_v<decltype(EncryptedActivation::blocks), std::vector<SeededRlweCiphertext>>);
static_assert(std::is_same_v<decltype(MatVecResponse::tokens), std::vector<PackedOutput>>);
static_assert(std::is_same_v<decltype(KskUpload::body), IntMatrix>);
// The key-switching key upload is built from the key-switching key, never the secret key.
static_assert(std::is_invocable_v<decltype(&make_ksk_upload), const KeySwitchKey&>);
static_assert(!std::is_invocable_v<decltype(&make_ksk_upload), const SecretKey&>);

bool contains(const Bytes& hay, std::span<const uint8_t> needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

template <typename T>
Bytes le_bytes(std::span<const T> values) {
  Bytes out(values.size() * sizeof(T));
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

Outcome privacy() {
  CryptoParams p;
  const auto& k = default_keys();
  std::vector<std::string> leaks;

  // Taint run: one training step and one explicit product over a recording transport.
  ToyModelConfig c;
  c.n_layers = 1;
  c.d = 16;
  c.m = 32;
  c.n_heads = 2;
  c.r = 2;
  c.context = 4;
  c.backend = Backend::kHeLoopback;
  HeServer server(p);
  auto rec = std::make_unique<RecordingConnection>(std::make_unique<LoopbackConnection>(server));
  RecordingConnection* recorder = rec.get();
  auto client = std::make_unique<HeClient>(std::move(rec), k.sk, p, 5);
  client->upload_ksk(k.ksk);
  HeClient* raw_client = client.get();
  auto base = std::make_shared<const BaseModel>(make_base_model(c));
  LoraModel model(c, base, LoraAdapters::init(c, 6), std::make_unique<HeBackend>(std::move(client)));
  const Corpus corpus(Corpus::builtin_text(), c.context);
  AdamOptimizer opt(model.adapters());
  train_step(model, corpus.batch(0, 1), opt);
  train_step(model, corpus.batch(1, 1), opt);

  std::vector<int64_t> act(64);
  std::iota(act.begin(), act.end(), -32);
  std::vector<int64_t> wt(64 * 8);
  for (std::size_t i = 0; i < wt.size(); ++i) wt[i] = static_cast<int64_t>((i * 37) % 251) - 125;
  raw_client->register_matrix("probe", wt, 8, 64);
  raw_client->matvec("probe", act, 1, 64, 8);
  const Bytes& sent = recorder->sent();

  // Control: the public probe weights, packed as 8-bit two's complement, must be visible.
  const std::vector<int8_t> w8(wt.begin(), wt.end());
  const bool control = contains(sent, le_bytes(std::span<const int8_t>(w8)));

  // Secret key in any plausible encoding.
  const std::vector<uint64_t> bits(k.sk.bits().begin(), k.sk.bits().end());
  const Bytes packed = pack_bits(bits, 1);
  for (std::size_t off = 0; off + 16 <= packed.size(); off += 16)
    if (contains(sent, std::span(packed).subspan(off, 16))) {
      leaks.push_back("packed secret key");
      break;
    }
  if (contains(sent, std::span(k.sk.bits()).first(64))) leaks.push_back("secret key bytes");
  if (contains(sent, le_bytes(k.sk.as_clear_poly().first(16)))) leaks.push_back("secret key words");

  // Adapter values as double or float.
  std::size_t probes = 0;
  for (const auto& layer : model.adapters().layers)
    for (const auto& ad : layer)
      for (const Matrix* m : {&ad.U, &ad.D})
        for (Eigen::Index i = 0; i + 1 < m->size(); i += 7) {
          const double d = m->data()[i];
          if (d == 0.0) continue;
          const float f2[2] = {static_cast<float>(m->data()[i]), static_cast<float>(m->data()[i + 1])};
          ++probes;
          if (contains(sent, le_bytes(std::span(&d, 1))) || contains(sent, le_bytes(std::span<const float>(f2)))) {
            leaks.push_back("adapter values");
            goto adapters_done;
          }
        }
adapters_done:

  // The cleartext probe activation at common integer widths.
  {
    std::vector<int8_t> a8(act.begin(), act.end());
    std::vector<int16_t> a16(act.begin(), act.end());
    std::vector<int32_t> a32(act.begin(), act.end());
    const auto window = [](const Bytes& b) { return std::span(b).first(std::min<std::size_t>(b.size(), 32)); };
    const Bytes b8 = le_bytes(std::span<const int8_t>(a8)), b16 = le_bytes(std::span<const int16_t>(a16)),
                b32 = le_bytes(std::span<const int32_t>(a32)), b64 = le_bytes(std::span<const int64_t>(act));
    if (contains(sent, window(b8)) || contains(sent, window(b16)) || contains(sent, window(b32)) ||
        contains(sent, window(b64)))
      leaks.push_back("cleartext activation");
  }

  // Every frame on the wire is one of the three client message kinds, and requests carry
  // nothing beyond the header, per-token scales and input ciphertexts.
  std::size_t frames = 0, requests = 0;
  std::span<const uint8_t> rest(sent);
  while (!rest.empty()) {
    const auto len = frame_length(rest);
    if (!len || *len > rest.size()) {
      leaks.push_back("unparseable stream");
      break;
    }
    const Frame f = decode_frame(rest.first(*len));
    rest = rest.subspan(*len);
    ++frames;
    switch (f.kind) {
      case MessageKind::kKskUpload:
      case MessageKind::kRegisterMatrix:
        break;
      case MessageKind::kMatVecRequest: {
        ++requests;
        const MatVecRequest r = parse_request(f, p);
        std::size_t cts = 0;
        for (const auto& t : r.tokens) cts += t.blocks.size();
        const std::size_t header = f.payload.size() - cts * input_ciphertext_size(p) - 8 * r.token_scales.size();
        if (header > 32 + r.matrix_id.size()) leaks.push_back("extra request payload");
        break;
      }
      default:
        leaks.push_back(std::string("unexpected ") + to_string(f.kind));
    }
  }

  if (!control) leaks.push_back("control failed: public weights not found");
  std::string detail = fmt("%zu frames (%zu requests, %zu KiB) scanned, %zu adapter probes; ", frames, requests,
                           sent.size() / 1024, probes);
  if (leaks.empty()) {
    detail += "public weights visible, no secret key, adapter or cleartext activation bytes found";
  } else {
    detail += "found:";
    for (const auto& l : leaks) detail += " " + l + ";";
  }
  return {leaks.empty() && requests > 0 && probes > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"wire sizes", wire_sizes},       {"bit-error contract", bit_errors},
      {"oracle equivalence", oracle_equivalence}, {"quantization ablation", ablation},
      {"HE execution fidelity", he_fidelity},      {"client FLOPs", flops},
      {"gradient correctness", gradients},         {"protocol equivalence", protocol},
      {"privacy boundary", privacy}};
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.contains(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %zu (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str(), s);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
