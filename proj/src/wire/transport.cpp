#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <list>
#include <thread>

#include "lorahe/wire.hpp"

namespace lorahe {

// ---- server ---------------------------------------------------------------

HeServer::HeServer(CryptoParams params, MatmulOptions opts) : params_(params), opts_(opts) { params_.validate(); }

void HeServer::register_matrix(ServerWeights w) {
  if (w.poly_size() != params_.poly_size) throw std::invalid_argument("matrix encoded for a different ring degree");
  auto id = w.matrix_id();
  auto ptr = std::make_shared<const ServerWeights>(std::move(w));
  std::unique_lock lock(mu_);
  matrices_[id] = std::move(ptr);
}

bool HeServer::has_matrix(const std::string& id) const { return find(id) != nullptr; }

void HeServer::set_default_ksk(std::shared_ptr<const KeySwitchKey> ksk) {
  if (ksk && !(ksk->params() == params_)) throw std::invalid_argument("key-switching key parameter mismatch");
  std::unique_lock lock(mu_);
  default_ksk_ = std::move(ksk);
}

std::shared_ptr<const ServerWeights> HeServer::find(const std::string& id) const {
  std::shared_lock lock(mu_);
  const auto it = matrices_.find(id);
  return it == matrices_.end() ? nullptr : it->second;
}

Frame HeServer::Session::handle(const Frame& request) {
  const CryptoParams& p = server_.params_;
  uint64_t request_id = 0;
  auto error = [&](ErrorCode code, std::string msg) { return make_frame(ErrorMessage{request_id, code, std::move(msg)}); };
  try {
    switch (request.kind) {
      case MessageKind::kKskUpload: {
        KskUpload up = parse_ksk(request);
        if (!(up.params == p)) return error(ErrorCode::kParameterMismatch, "key parameters differ from the server's");
        ksk_ = std::make_shared<const KeySwitchKey>(up.params, std::move(up.seeds), std::move(up.body));
        return make_frame(Ack{0});
      }
      case MessageKind::kRegisterMatrix: {
        const RegisterMatrix m = parse_register(request);
        server_.register_matrix(encode_weights(m.matrix_id, m.weights, m.d_out, m.d_in, p, m.weight_bits));
        return make_frame(Ack{0});
      }
      case MessageKind::kMatVecRequest: {
        const MatVecRequest req = parse_request(request, p);
        request_id = req.request_id;
        const auto w = server_.find(req.matrix_id);
        if (!w) return error(ErrorCode::kUnknownMatrix, "no matrix registered as '" + req.matrix_id + "'");
        std::shared_ptr<const KeySwitchKey> ksk = ksk_;
        if (!ksk) {
          std::shared_lock lock(server_.mu_);
          ksk = server_.default_ksk_;
        }
        if (!ksk) return error(ErrorCode::kNoKey, "no key-switching key uploaded");
        if (!req.tokens.empty() && req.tokens.front().d_in != w->d_in()) {
          return error(ErrorCode::kMalformed, "request d_in " + std::to_string(req.tokens.front().d_in) +
                                                  " does not match matrix d_in " + std::to_string(w->d_in()));
        }
        MatVecResponse resp{req.request_id, server_matvec(*w, req.tokens, *ksk, server_.opts_)};
        return make_frame(resp, p);
      }
      default:
        return error(ErrorCode::kMalformed, std::string("unexpected ") + to_string(request.kind) + " frame");
    }
  } catch (const WireError& e) {
    return error(ErrorCode::kMalformed, e.what());
  } catch (const std::invalid_argument& e) {
    return error(ErrorCode::kMalformed, e.what());
  } catch (const std::exception& e) {
    return error(ErrorCode::kInternal, e.what());
  }
}

// ---- loopback / recording -------------------------------------------------

void LoopbackConnection::send(const Frame& frame) {
  const Bytes wire = encode_frame(frame);
  const Frame reply = session_.handle(decode_frame(wire));
  replies_.push_back(encode_frame(reply));
}

Frame LoopbackConnection::receive() {
  if (replies_.empty()) throw WireError("loopback: no reply pending");
  Bytes b = std::move(replies_.front());
  replies_.erase(replies_.begin());
  return decode_frame(b);
}

void RecordingConnection::send(const Frame& frame) {
  const Bytes wire = encode_frame(frame);
  sent_.insert(sent_.end(), wire.begin(), wire.end());
  inner_->send(frame);
}

// ---- TCP ------------------------------------------------------------------

namespace {

void write_all(int fd, std::span<const uint8_t> b) {
  while (!b.empty()) {
    const ssize_t n = ::send(fd, b.data(), b.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw WireError(std::string("send failed: ") + std::strerror(errno));
    b = b.subspan(static_cast<std::size_t>(n));
  }
}

// False on a clean end of stream before the first byte.
bool read_all(int fd, std::span<uint8_t> b) {
  std::size_t got = 0;
  while (got < b.size()) {
    const ssize_t n = ::recv(fd, b.data() + got, b.size() - got, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n == 0 && got == 0) return false;
    if (n <= 0) throw WireError("connection closed mid-frame");
    got += static_cast<std::size_t>(n);
  }
  return true;
}

std::optional<Frame> read_frame(int fd) {
  Bytes buf(kFrameHeaderSize);
  if (!read_all(fd, buf)) return std::nullopt;
  const std::size_t total = *frame_length(buf);
  buf.resize(total);
  if (!read_all(fd, std::span(buf).subspan(kFrameHeaderSize))) throw WireError("connection closed mid-frame");
  return decode_frame(buf);
}

struct AddrInfo {
  addrinfo* head = nullptr;
  AddrInfo(const std::string& host, uint16_t port, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    const std::string service = std::to_string(port);
    const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &head);
    if (rc != 0) throw WireError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  ~AddrInfo() {
    if (head) ::freeaddrinfo(head);
  }
};

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

TcpConnection::TcpConnection(const std::string& host, uint16_t port) {
  AddrInfo ai(host, port, false);
  for (addrinfo* a = ai.head; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
      fd_ = fd;
      break;
    }
    ::close(fd);
  }
  if (fd_ < 0) throw WireError("cannot connect to " + host + ":" + std::to_string(port));
  set_nodelay(fd_);
}

TcpConnection::~TcpConnection() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpConnection::send(const Frame& frame) { write_all(fd_, encode_frame(frame)); }

Frame TcpConnection::receive() {
  auto f = read_frame(fd_);
  if (!f) throw WireError("server closed the connection");
  return std::move(*f);
}

struct TcpServer::Impl {
  HeServer& server;
  int listen_fd = -1;
  std::atomic<bool> stopping{false};
  std::mutex mu;
  std::list<int> client_fds;
  std::list<std::jthread> workers;
  std::jthread acceptor;

  explicit Impl(HeServer& s) : server(s) {}

  void serve(int fd) {
    HeServer::Session session(server);
    try {
      while (!stopping) {
        std::optional<Frame> f;
        try {
          f = read_frame(fd);
        } catch (const WireError& e) {
          // A malformed frame poisons the byte stream: report and drop the connection.
          write_all(fd, encode_frame(make_frame(ErrorMessage{0, ErrorCode::kMalformed, e.what()})));
          break;
        }
        if (!f) break;
        write_all(fd, encode_frame(session.handle(*f)));
      }
    } catch (const std::exception&) {
      // Peer went away; nothing to report to.
    }
    std::lock_guard lock(mu);
    ::shutdown(fd, SHUT_RDWR);
  }

  void accept_loop() {
    while (!stopping) {
      const int fd = ::accept(listen_fd, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        break;
      }
      set_nodelay(fd);
      std::lock_guard lock(mu);
      if (stopping) {
        ::close(fd);
        break;
      }
      client_fds.push_back(fd);
      workers.emplace_back([this, fd] { serve(fd); });
    }
  }
};

TcpServer::TcpServer(HeServer& server, const std::string& host, uint16_t port) : impl_(std::make_unique<Impl>(server)) {
  AddrInfo ai(host, port, true);
  for (addrinfo* a = ai.head; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      impl_->listen_fd = fd;
      break;
    }
    ::close(fd);
  }
  if (impl_->listen_fd < 0) throw WireError("cannot listen on " + host + ":" + std::to_string(port));
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(impl_->listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                     : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  impl_->acceptor = std::jthread([impl = impl_.get()] { impl->accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::stop() {
  if (!impl_ || impl_->stopping.exchange(true)) return;
  ::shutdown(impl_->listen_fd, SHUT_RDWR);
  if (impl_->acceptor.joinable()) impl_->acceptor.join();
  ::close(impl_->listen_fd);
  {
    std::lock_guard lock(impl_->mu);
    for (int fd : impl_->client_fds) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& w : impl_->workers) w.join();
  for (int fd : impl_->client_fds) ::close(fd);
}

// ---- client ---------------------------------------------------------------

HeClient::HeClient(std::unique_ptr<Connection> conn, const SecretKey& sk, CryptoParams params, uint64_t seed)
    : conn_(std::move(conn)), sk_(sk), params_(params), rng_(seed, StreamDomain::kSeeds) {
  params_.validate();
  if (sk.degree() != params_.poly_size) throw std::invalid_argument("secret key degree does not match parameters");
}

Frame HeClient::exchange(const Frame& f) {
  conn_->send(f);
  Frame reply = conn_->receive();
  if (reply.kind == MessageKind::kError) {
    const ErrorMessage e = parse_error(reply);
    throw WireError("server error " + std::to_string(static_cast<int>(e.code)) + ": " + e.message);
  }
  return reply;
}

void HeClient::upload_ksk(const KeySwitchKey& ksk) {
  std::lock_guard lock(mu_);
  parse_ack(exchange(make_frame(make_ksk_upload(ksk), params_)));
}

void HeClient::register_matrix(const std::string& matrix_id, std::span<const int64_t> w, std::size_t d_out,
                               std::size_t d_in, int weight_bits) {
  RegisterMatrix m{matrix_id, static_cast<uint32_t>(d_out), static_cast<uint32_t>(d_in),
                   static_cast<uint8_t>(weight_bits), {w.begin(), w.end()}};
  std::lock_guard lock(mu_);
  parse_ack(exchange(make_frame(m)));
}

std::vector<int64_t> HeClient::matvec(const std::string& matrix_id, std::span<const int64_t> x_q,
                                      std::size_t tokens, std::size_t d_in, std::size_t d_out,
                                      std::span<const double> token_scales) {
  if (x_q.size() != tokens * d_in) throw std::invalid_argument("x_q size does not match tokens x d_in");
  std::lock_guard lock(mu_);
  MatVecRequest req;
  req.request_id = next_request_++;
  req.matrix_id = matrix_id;
  req.token_scales.assign(token_scales.begin(), token_scales.end());
  for (std::size_t t = 0; t < tokens; ++t) {
    req.tokens.push_back(encrypt_activation(sk_, x_q.subspan(t * d_in, d_in), params_, rng_));
  }
  const MatVecResponse resp = parse_response(exchange(make_frame(req, params_)), params_);
  if (resp.request_id != req.request_id || resp.tokens.size() != tokens) {
    throw WireError("response does not answer the request");
  }
  std::vector<int64_t> y;
  y.reserve(tokens * d_out);
  for (const auto& t : resp.tokens) {
    if (t.d_out != d_out) throw WireError("response d_out " + std::to_string(t.d_out) + " differs from expected");
    const auto row = decrypt_packed(sk_, t);
    y.insert(y.end(), row.begin(), row.end());
  }
  return y;
}

}  // namespace lorahe
