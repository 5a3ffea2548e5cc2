// lorahe: key generation, server, benchmarks, studies and the training demo.
// Every data-producing command writes CSV preceded by one "# {json}" line
// holding the fully resolved configuration.

#include <csignal>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "keyfile.hpp"
#include "lorahe/loraclient.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace lorahe::cli {
namespace {

struct RunConfig {
  std::string command;
  CryptoParams crypto;
  ToyModelConfig model;
  std::string strategy = "DTok-SC";
  int bits = 8;
  std::string backend = "fp32";
  uint64_t seed = 1;
  std::string out;
  std::string server = "127.0.0.1:7878";

  // keygen / serve
  std::string out_dir;
  std::string key_dir;
  std::string ksk_file;
  std::string weights_dir;
  std::string bind = "127.0.0.1:7878";

  // bench-matmul / bit-error
  std::vector<std::string> dims{"768x768", "3072x768", "2048x2048", "768x3072", "8192x2048", "2048x8192"};
  std::size_t trials = 5;
  std::size_t warmup = 1;
  std::vector<std::size_t> d_in_list{768, 2048, 8192};

  // training
  std::size_t steps = 5;
  double lr = 1e-3;
  std::string corpus;
  std::vector<std::string> strategies{"fp32",    "DTok-SC/8", "DTok-ST/8", "DT-SC/8",
                                      "DT-ST/8", "ST-ST/8",   "DT-ST/16"};
  std::size_t calibration_batches = 4;
  std::string export_weights;

  // flops
  double step_seconds = 0.0;
};

json crypto_json(const CryptoParams& p) {
  return {{"poly_size", p.poly_size},   {"beta", p.beta},
          {"gamma", p.gamma},           {"q_in_bits", p.q_in_bits},
          {"q_out_bits", p.q_out_bits}, {"sigma_input", p.sigma_input},
          {"sigma_ksk", p.sigma_ksk},   {"ksk_base_log", p.ksk_base_log},
          {"ksk_levels", p.ksk_levels}};
}

json model_json(const ToyModelConfig& m) {
  return {{"n_layers", m.n_layers},     {"d", m.d},
          {"m", m.m},                   {"n_heads", m.n_heads},
          {"r", m.r},                   {"alpha", m.alpha},
          {"vocab_size", m.vocab_size}, {"context", m.context},
          {"batch", m.batch},           {"backend", to_string(m.backend)},
          {"quant", m.quant.name()},    {"bits", m.quant.bits},
          {"outlier_scale", m.outlier_scale}, {"seed", m.seed}};
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// CSV sink: a file when a path is given, stdout otherwise.
class Artifact {
 public:
  Artifact(const std::string& path, const json& config, const std::vector<std::string>& columns) {
    if (!path.empty()) {
      file_.open(path, std::ios::trunc);
      if (!file_) throw std::runtime_error("cannot write " + path);
      os_ = &file_;
    }
    *os_ << "# " << config.dump() << '\n';
    row(columns);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) *os_ << (i ? "," : "") << cells[i];
    *os_ << '\n';
    os_->flush();
    if (!*os_) throw std::runtime_error("write failed");
  }

 private:
  std::ofstream file_;
  std::ostream* os_ = &std::cout;
};

std::pair<std::string, uint16_t> split_host_port(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0) throw std::invalid_argument("expected host:port, got '" + addr + "'");
  const int port = std::stoi(addr.substr(colon + 1));
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range in '" + addr + "'");
  return {addr.substr(0, colon), static_cast<uint16_t>(port)};
}

std::pair<std::size_t, std::size_t> parse_dims(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw std::invalid_argument("expected D_INxD_OUT, got '" + s + "'");
  return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
}

AblationSpec parse_spec(const std::string& s) {
  if (s == "fp32") return {"fp32", 0};
  const auto slash = s.find('/');
  if (slash == std::string::npos) return {s, 8};
  return {s.substr(0, slash), std::stoi(s.substr(slash + 1))};
}

Corpus load_corpus(const RunConfig& cfg) {
  return cfg.corpus.empty() ? Corpus(Corpus::builtin_text(), cfg.model.context)
                            : Corpus::from_file(cfg.corpus, cfg.model.context);
}

json base_config(const RunConfig& cfg) {
  return {{"command", cfg.command}, {"seed", cfg.seed}, {"crypto", crypto_json(cfg.crypto)}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- keygen -------------------------------------------------------------------

int cmd_keygen(const RunConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  if (!fs::is_directory(dir)) throw std::runtime_error("output directory " + dir.string() + " does not exist");
  const auto [sk, ksk] = keygen(cfg.crypto, cfg.seed);
  write_secret_key(sk, dir / kSecretKeyFile);
  write_ksk(ksk, dir / kKskFile);
  json c = base_config(cfg);
  c["out_dir"] = cfg.out_dir;
  Artifact a(cfg.out, c, {"file", "bytes"});
  for (const char* f : {kSecretKeyFile, kKskFile}) a.row({f, std::to_string(fs::file_size(dir / f))});
  return 0;
}

// ---- serve --------------------------------------------------------------------

int cmd_serve(const RunConfig& cfg) {
  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t stop;
  sigemptyset(&stop);
  sigaddset(&stop, SIGINT);
  sigaddset(&stop, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop, nullptr);

  HeServer server(cfg.crypto);
  if (!cfg.ksk_file.empty()) {
    auto ksk = std::make_shared<const KeySwitchKey>(read_ksk(cfg.ksk_file));
    if (!(ksk->params() == cfg.crypto)) throw std::runtime_error("key-switching key was made for different parameters");
    server.set_default_ksk(std::move(ksk));
  }
  std::size_t preloaded = 0;
  if (!cfg.weights_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(cfg.weights_dir))
      if (e.path().extension() == ".frame") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const RegisterMatrix m = parse_register(decode_frame(read_file(f)));
      server.register_matrix(encode_weights(m.matrix_id, m.weights, m.d_out, m.d_in, cfg.crypto, m.weight_bits));
      ++preloaded;
    }
  }
  const auto [host, port] = split_host_port(cfg.bind);
  TcpServer tcp(server, host, port);
  std::cout << "listening on " << host << ":" << tcp.port() << " (" << preloaded << " preloaded matrices"
            << (cfg.ksk_file.empty() ? ", no default key" : ", default key loaded") << ")" << std::endl;
  int sig = 0;
  sigwait(&stop, &sig);
  tcp.stop();
  std::cout << "stopped" << std::endl;
  return 0;
}

// ---- bench-matmul -------------------------------------------------------------

int cmd_bench_matmul(const RunConfig& cfg) {
  if (cfg.trials < 5) throw std::invalid_argument("--trials must be at least 5");
  const auto [sk, ksk] = keygen(cfg.crypto, cfg.seed);
  json c = base_config(cfg);
  c["dims"] = cfg.dims;
  c["trials"] = cfg.trials;
  c["warmup"] = cfg.warmup;
  Artifact a(cfg.out, c, {"d_in", "d_out", "trials", "mean_s", "std_s", "msb_failure_rate"});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int64_t> byte(-127, 127);
  ChaChaStream enc_rng(cfg.seed, StreamDomain::kSeeds);
  for (const auto& spec : cfg.dims) {
    const auto [d_in, d_out] = parse_dims(spec);
    std::vector<int64_t> w(d_in * d_out), x(d_in);
    for (auto& v : w) v = byte(rng);
    for (auto& v : x) v = byte(rng);
    const ServerWeights sw = encode_weights("bench", w, d_out, d_in, cfg.crypto);
    const EncryptedActivation act = encrypt_activation(sk, x, cfg.crypto, enc_rng);
    std::vector<double> times;
    std::vector<PackedOutput> out;
    for (std::size_t t = 0; t < cfg.warmup + cfg.trials; ++t) {
      const auto t0 = std::chrono::steady_clock::now();
      out = server_matvec(sw, std::span(&act, 1), ksk);
      if (t >= cfg.warmup) times.push_back(seconds_since(t0));
    }
    const auto y = decrypt_packed(sk, out[0]);
    std::size_t failures = 0;
    for (std::size_t j = 0; j < d_out; ++j) {
      int64_t exact = 0;
      for (std::size_t i = 0; i < d_in; ++i) exact += w[j * d_in + i] * x[i];
      if (!msb_agree(y[j], exact, cfg.crypto)) ++failures;
    }
    const double rate = static_cast<double>(failures) / static_cast<double>(d_out);
    if (rate >= 0.01) throw std::runtime_error("correctness check failed for " + spec);
    const double mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    const double sd = std::sqrt(var / static_cast<double>(times.size() - 1));
    a.row({std::to_string(d_in), std::to_string(d_out), std::to_string(times.size()), num(mean), num(sd), num(rate)});
  }
  return 0;
}

// ---- bit-error ----------------------------------------------------------------

int cmd_bit_error(const RunConfig& cfg) {
  const auto [sk, ksk] = keygen(cfg.crypto, cfg.seed);
  const auto rows = bit_error_study(cfg.d_in_list, cfg.trials, sk, ksk, cfg.seed + 1);
  json c = base_config(cfg);
  c["d_in"] = cfg.d_in_list;
  c["trials"] = cfg.trials;
  Artifact a(cfg.out, c, {"d_in", "bit", "error_rate", "trials"});
  for (const auto& r : rows)
    a.row({std::to_string(r.d_in), std::to_string(r.bit_position), num(r.error_rate), std::to_string(r.trials)});
  return 0;
}

// ---- expansion ----------------------------------------------------------------

int cmd_expansion(const RunConfig& cfg) {
  const ExpansionReport r = expansion_report(cfg.crypto);
  Artifact a(cfg.out, base_config(cfg), {"direction", "ciphertext_bytes", "plaintext_bytes", "factor"});
  a.row({"input", std::to_string(r.input_bytes), std::to_string(r.input_plain_bytes), num(r.input_factor)});
  a.row({"output", std::to_string(r.output_bytes), std::to_string(r.output_plain_bytes), num(r.output_factor)});
  return 0;
}

// ---- quant-ablation -----------------------------------------------------------

int cmd_quant_ablation(const RunConfig& cfg) {
  std::vector<AblationSpec> specs;
  for (const auto& s : cfg.strategies) specs.push_back(parse_spec(s));
  for (const auto& s : specs)
    if (s.strategy != "fp32") parse_strategy(s.strategy, s.bits);
  const Corpus corpus = load_corpus(cfg);
  json c = base_config(cfg);
  c.erase("crypto");
  c["model"] = model_json(cfg.model);
  c["strategies"] = cfg.strategies;
  c["steps"] = cfg.steps;
  c["lr"] = cfg.lr;
  c["corpus"] = cfg.corpus.empty() ? "builtin" : cfg.corpus;
  c["corpus_samples"] = corpus.size();
  c["calibration_batches"] = cfg.calibration_batches;
  Artifact a(cfg.out, c, {"strategy", "bits", "kind", "step", "loss"});
  ToyModelConfig m = cfg.model;
  m.seed = cfg.seed;
  const AblationResult r = quant_ablation_run(m, specs, corpus, cfg.steps, AdamConfig{.lr = cfg.lr}, cfg.calibration_batches);
  for (const auto& row : r.rows)
    a.row({row.strategy, std::to_string(row.bits), "train", std::to_string(row.step), num(row.loss)});
  for (std::size_t i = 0; i < specs.size(); ++i)
    a.row({specs[i].strategy, std::to_string(specs[i].bits), "eval", std::to_string(cfg.steps), num(r.finals[i].second)});
  return 0;
}

// ---- train-demo ---------------------------------------------------------------

/// Writes every registered base matrix as a RegisterMatrix frame, for `serve --weights-dir`.
class ExportingBackend : public MatmulBackend {
 public:
  ExportingBackend(std::unique_ptr<MatmulBackend> inner, fs::path dir) : inner_(std::move(inner)), dir_(std::move(dir)) {}

  void register_matrix(const std::string& id, const QuantTensor& w_q) override {
    RegisterMatrix m{id, static_cast<uint32_t>(w_q.rows), static_cast<uint32_t>(w_q.cols),
                     static_cast<uint8_t>(w_q.params.bits), w_q.data};
    std::string name = id;
    std::replace(name.begin(), name.end(), '^', '_');
    write_file(dir_ / (name + ".frame"), encode_frame(make_frame(m)));
    inner_->register_matrix(id, w_q);
  }
  std::vector<int64_t> matmul(const std::string& id, const QuantTensor& x_q, std::size_t d_out) override {
    return inner_->matmul(id, x_q, d_out);
  }

 private:
  std::unique_ptr<MatmulBackend> inner_;
  fs::path dir_;
};

int cmd_train_demo(RunConfig cfg) {
  const std::string b = cfg.backend == "quant" ? "quantized" : cfg.backend;
  cfg.model.backend = parse_backend(b);
  cfg.model.seed = cfg.seed;
  const Corpus corpus = load_corpus(cfg);

  HeContext he;
  std::unique_ptr<MatmulBackend> backend;
  switch (cfg.model.backend) {
    case Backend::kFp32:
      break;
    case Backend::kQuantized:
      backend = std::make_unique<CleartextBackend>();
      break;
    case Backend::kHeLoopback:
    case Backend::kHeRemote: {
      const bool loopback = cfg.model.backend == Backend::kHeLoopback;
      if (cfg.key_dir.empty()) {
        he = HeContext::create(cfg.crypto, cfg.seed + 100, loopback);
      } else {
        he.params = cfg.crypto;
        he.sk = std::make_unique<SecretKey>(read_secret_key(fs::path(cfg.key_dir) / kSecretKeyFile));
        he.ksk = std::make_unique<KeySwitchKey>(read_ksk(fs::path(cfg.key_dir) / kKskFile));
        if (!(he.ksk->params() == cfg.crypto)) throw std::runtime_error("key files were made for different parameters");
        if (loopback) he.server = std::make_unique<HeServer>(cfg.crypto);
      }
      if (loopback) {
        backend = he.loopback_backend(cfg.seed + 101);
      } else {
        const auto [host, port] = split_host_port(cfg.server);
        backend = he.remote_backend(host, port, cfg.seed + 101);
      }
      break;
    }
  }
  if (!cfg.export_weights.empty()) {
    if (!backend) throw std::invalid_argument("--export-weights needs a quantized or HE backend");
    if (!fs::is_directory(cfg.export_weights)) throw std::runtime_error(cfg.export_weights + " does not exist");
    backend = std::make_unique<ExportingBackend>(std::move(backend), cfg.export_weights);
  }

  json c = base_config(cfg);
  if (cfg.model.backend == Backend::kFp32 || cfg.model.backend == Backend::kQuantized) c.erase("crypto");
  c["model"] = model_json(cfg.model);
  c["steps"] = cfg.steps;
  c["lr"] = cfg.lr;
  c["corpus"] = cfg.corpus.empty() ? "builtin" : cfg.corpus;
  if (cfg.model.backend == Backend::kHeRemote) c["server"] = cfg.server;
  Artifact a(cfg.out, c, {"step", "loss", "seconds"});

  auto base = std::make_shared<const BaseModel>(make_base_model(cfg.model));
  LoraModel model(cfg.model, base, LoraAdapters::init(cfg.model, cfg.seed + 1), std::move(backend));
  const auto batches = corpus.schedule(cfg.steps, cfg.model.batch, cfg.seed + 2);
  if (cfg.model.quant.activation.mode == RangeMode::kStatic && cfg.model.backend != Backend::kFp32) {
    model.calibrate(std::span(batches).first(std::min(cfg.calibration_batches, batches.size())));
  }
  AdamOptimizer opt(model.adapters(), AdamConfig{.lr = cfg.lr});
  for (std::size_t s = 0; s < batches.size(); ++s) {
    const auto t0 = std::chrono::steady_clock::now();
    const double loss = train_step(model, batches[s], opt);
    a.row({std::to_string(s), num(loss), num(seconds_since(t0))});
  }
  return 0;
}

// ---- flops --------------------------------------------------------------------

int cmd_flops(const RunConfig& cfg) {
  const ToyModelConfig& m = cfg.model;
  const double flops = client_flops_estimate(m.n_layers, m.d, m.m, m.r, m.context);
  json c{{"command", cfg.command},
         {"n_layers", m.n_layers},
         {"d", m.d},
         {"m", m.m},
         {"r", m.r},
         {"context", m.context},
         {"step_seconds", cfg.step_seconds}};
  Artifact a(cfg.out, c, {"n_layers", "d", "m", "r", "context", "flops", "flops_per_second"});
  a.row({std::to_string(m.n_layers), std::to_string(m.d), std::to_string(m.m), std::to_string(m.r),
         std::to_string(m.context), num(flops), cfg.step_seconds > 0 ? num(flops / cfg.step_seconds) : ""});
  return 0;
}

// ---- option wiring ------------------------------------------------------------

void add_common(CLI::App* app, RunConfig& cfg) {
  app->add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
  app->add_option("-o,--out", cfg.out, "Output CSV path (default: stdout)");
}

void add_crypto(CLI::App* app, CryptoParams& p) {
  app->add_option("--poly-size", p.poly_size, "Ring degree N (power of two)")->capture_default_str();
  app->add_option("--beta", p.beta, "Plaintext bits reserved for results")->capture_default_str();
  app->add_option("--gamma", p.gamma, "Trusted most significant result bits")->capture_default_str();
  app->add_option("--q-in-bits", p.q_in_bits, "Input ciphertext modulus bits")->capture_default_str();
  app->add_option("--q-out-bits", p.q_out_bits, "Output ciphertext modulus bits")->capture_default_str();
  app->add_option("--sigma-input", p.sigma_input, "Input noise std as a fraction of q_in")->capture_default_str();
  app->add_option("--sigma-ksk", p.sigma_ksk, "Key-switching key noise std as a fraction of q_in")->capture_default_str();
  app->add_option("--ksk-base-log", p.ksk_base_log, "Key-switch decomposition bits per digit")->capture_default_str();
  app->add_option("--ksk-levels", p.ksk_levels, "Key-switch decomposition digits")->capture_default_str();
}

void add_model(CLI::App* app, RunConfig& cfg) {
  ToyModelConfig& m = cfg.model;
  app->add_option("--layers", m.n_layers, "Transformer layers")->capture_default_str();
  app->add_option("--d", m.d, "Hidden size")->capture_default_str();
  app->add_option("--m", m.m, "FFN size")->capture_default_str();
  app->add_option("--heads", m.n_heads, "Attention heads")->capture_default_str();
  app->add_option("--rank", m.r, "LoRA rank")->capture_default_str();
  app->add_option("--alpha", m.alpha, "LoRA alpha (scale alpha/rank)")->capture_default_str();
  app->add_option("--vocab", m.vocab_size, "Vocabulary size (byte tokens, at most 256)")->capture_default_str();
  app->add_option("--context", m.context, "Tokens per sample")->capture_default_str();
  app->add_option("--batch", m.batch, "Samples per step")->capture_default_str();
  app->add_option("--outlier-scale", m.outlier_scale, "Magnitude of the sequence-start outlier channel")
      ->capture_default_str();
  app->add_option("--strategy", cfg.strategy, "Quantization strategy: ST-ST, DT-ST, DT-SC, DTok-ST, DTok-SC")
      ->capture_default_str();
  app->add_option("--bits", cfg.bits, "Quantization bits")->capture_default_str();
}

void add_training(CLI::App* app, RunConfig& cfg) {
  app->add_option("--steps", cfg.steps, "Training steps")->capture_default_str();
  app->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--corpus", cfg.corpus, "Text file to train on (default: built-in text)")->check(CLI::ExistingFile);
  app->add_option("--calibration-batches", cfg.calibration_batches, "Batches used to calibrate static ranges")
      ->capture_default_str();
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Split LoRA fine-tuning with homomorphically encrypted base-model products"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lorahe 1.0");

  // Each subcommand owns its config, so per-command defaults never leak.
  std::map<std::string, RunConfig> cfgs;
  std::vector<std::pair<CLI::App*, int (*)(RunConfig)>> commands;
  auto add = [&](const std::string& name, const std::string& help, int (*fn)(RunConfig)) {
    RunConfig& c = cfgs[name];
    c.command = name;
    CLI::App* sub = app.add_subcommand(name, help);
    commands.emplace_back(sub, fn);
    return std::pair<CLI::App*, RunConfig&>(sub, c);
  };

  {
    auto [sub, cfg] = add("keygen", "Generate a secret key and key-switching key",
                          [](RunConfig c) { return cmd_keygen(c); });
    add_common(sub, cfg);
    add_crypto(sub, cfg.crypto);
    sub->add_option("--out-dir", cfg.out_dir, "Existing directory for secret.key and ksk.bin")->required();
  }
  {
    auto [sub, cfg] = add("serve", "Run the encrypted matmul server until SIGINT/SIGTERM",
                          [](RunConfig c) { return cmd_serve(c); });
    add_crypto(sub, cfg.crypto);
    sub->add_option("--bind", cfg.bind, "host:port to listen on (port 0 picks a free port)")->capture_default_str();
    sub->add_option("--ksk", cfg.ksk_file, "Default key-switching key for clients that do not upload one")
        ->check(CLI::ExistingFile);
    sub->add_option("--weights-dir", cfg.weights_dir, "Directory of RegisterMatrix *.frame files to preload")
        ->check(CLI::ExistingDirectory);
  }
  {
    auto [sub, cfg] = add("bench-matmul", "Time one encrypted token times a clear matrix",
                          [](RunConfig c) { return cmd_bench_matmul(c); });
    add_common(sub, cfg);
    add_crypto(sub, cfg.crypto);
    sub->add_option("--dims", cfg.dims, "Shapes as D_INxD_OUT")->capture_default_str()->delimiter(',');
    sub->add_option("--trials", cfg.trials, "Timed trials per shape (at least 5)")->capture_default_str();
    sub->add_option("--warmup", cfg.warmup, "Untimed warmup runs per shape")->capture_default_str();
  }
  {
    auto [sub, cfg] = add("bit-error", "Per-bit error rates of encrypted dot products",
                          [](RunConfig c) { return cmd_bit_error(c); });
    add_common(sub, cfg);
    add_crypto(sub, cfg.crypto);
    sub->add_option("--d-in", cfg.d_in_list, "Input dimensions")->capture_default_str()->delimiter(',');
    sub->add_option("--trials", cfg.trials, "Dot products per input dimension")->default_val(1000);
  }
  {
    auto [sub, cfg] = add("expansion", "Ciphertext sizes and expansion factors",
                          [](RunConfig c) { return cmd_expansion(c); });
    add_common(sub, cfg);
    add_crypto(sub, cfg.crypto);
  }
  {
    auto [sub, cfg] = add("quant-ablation", "Train once per quantization strategy and compare losses",
                          [](RunConfig c) { return cmd_quant_ablation(c); });
    cfg.steps = 400;
    cfg.lr = 2e-4;
    cfg.model.batch = 8;
    add_common(sub, cfg);
    add_model(sub, cfg);
    add_training(sub, cfg);
    sub->add_option("--strategies", cfg.strategies, "fp32 or NAME/BITS entries")->capture_default_str()->delimiter(',');
  }
  {
    auto [sub, cfg] = add("train-demo", "Train the toy model and print the loss per step",
                          [](RunConfig c) { return cmd_train_demo(c); });
    cfg.model.d = 32;
    cfg.model.m = 128;
    cfg.model.context = 16;
    cfg.lr = 2e-4;
    add_common(sub, cfg);
    add_crypto(sub, cfg.crypto);
    add_model(sub, cfg);
    add_training(sub, cfg);
    sub->add_option("--backend", cfg.backend, "fp32, quant, he-loopback or he-remote")
        ->capture_default_str()
        ->check(CLI::IsMember({"fp32", "quant", "quantized", "he-loopback", "he-remote"}));
    sub->add_option("--server", cfg.server, "host:port of a running server (he-remote)")
        ->capture_default_str()
        ->envname("LORAHE_SERVER");
    sub->add_option("--key-dir", cfg.key_dir, "Use secret.key and ksk.bin from keygen instead of fresh keys")
        ->check(CLI::ExistingDirectory);
    sub->add_option("--export-weights", cfg.export_weights, "Also write the registered base matrices as *.frame files");
  }
  {
    auto [sub, cfg] = add("flops", "Client FLOPs per training step", [](RunConfig c) { return cmd_flops(c); });
    cfg.model.n_layers = 16;
    cfg.model.d = 2048;
    cfg.model.m = 8192;
    cfg.model.r = 8;
    cfg.model.context = 16;
    sub->add_option("-o,--out", cfg.out, "Output CSV path (default: stdout)");
    sub->add_option("--layers", cfg.model.n_layers, "Transformer layers")->capture_default_str();
    sub->add_option("--d", cfg.model.d, "Hidden size")->capture_default_str();
    sub->add_option("--m", cfg.model.m, "FFN size")->capture_default_str();
    sub->add_option("--rank", cfg.model.r, "LoRA rank")->capture_default_str();
    sub->add_option("--context", cfg.model.context, "Tokens per sequence")->capture_default_str();
    sub->add_option("--step-seconds", cfg.step_seconds, "Wall time of one step, to report a FLOP rate");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto& [sub, fn] : commands) {
      if (!sub->parsed()) continue;
      RunConfig& cfg = cfgs.at(sub->get_name());
      cfg.crypto.validate();
      cfg.model.quant = parse_strategy(cfg.strategy, cfg.bits);
      return fn(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 1;
}

}  // namespace lorahe::cli

int main(int argc, char** argv) { return lorahe::cli::run(argc, argv); }
