#include "teleop/server.hpp"

#include <chrono>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "teleop/runtime.hpp"

namespace teleop {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

std::pair<std::string, int> parse_listen_address(const std::string& addr) {
  std::string host = "0.0.0.0";
  std::string port_text = addr;
  if (const auto colon = addr.rfind(':'); colon != std::string::npos) {
    if (colon > 0) host = addr.substr(0, colon);
    port_text = addr.substr(colon + 1);
  }
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_text, &used);
    if (used != port_text.size()) port = -1;
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) {
    throw Error(ErrorCode::kBadConfig, "bad listen address '" + addr + "'");
  }
  return {host, port};
}

namespace {

class Connection;
using ConnectionPtr = std::shared_ptr<Connection>;

// Callbacks from a connection into the server.
struct Hub {
  virtual ~Hub() = default;
  virtual void on_frame(const ConnectionPtr& c, std::string frame) = 0;
  virtual void on_closed(const ConnectionPtr& c) = 0;
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(Hub& hub, ClientId id, net::steady_timer timer, std::size_t max_queue)
      : hub_(hub), id_(id), handshake_timer_(std::move(timer)), max_queue_(max_queue) {}
  virtual ~Connection() = default;

  ClientId id() const { return id_; }
  bool greeted() const { return greeted_; }
  void mark_greeted() {
    greeted_ = true;
    handshake_timer_.cancel();
  }

  virtual void start(std::string initial) = 0;

  // `line` is an encoded frame including its LF.
  void send(std::string line) {
    if (closed_ || close_pending_) return;
    if (outbox_.size() >= max_queue_) {
      close_now();
      return;
    }
    outbox_.push_back(std::move(line));
    if (!writing_) write_next();
  }

  void close_after_flush() {
    if (closed_) return;
    close_pending_ = true;
    if (!writing_) close_now();
  }

  void close_now() {
    if (closed_) return;
    closed_ = true;
    handshake_timer_.cancel();
    shutdown_transport();
    hub_.on_closed(shared_from_this());
  }

  void arm_handshake_timer() {
    handshake_timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->greeted_ || self->closed_) return;
      self->send(encode(ErrorMsg{std::string(to_string(ErrorCode::kHandshakeTimeout)),
                                 "no Hello before the deadline"}));
      self->close_after_flush();
    });
  }

 protected:
  virtual void write_frame(const std::string& line) = 0;
  virtual void shutdown_transport() = 0;

  void write_next() {
    writing_ = true;
    write_frame(outbox_.front());
  }

  void on_written(beast::error_code ec) {
    outbox_.pop_front();
    writing_ = false;
    if (ec) {
      close_now();
      return;
    }
    if (!outbox_.empty()) {
      write_next();
    } else if (close_pending_) {
      close_now();
    }
  }

  bool reading_allowed() const { return !closed_ && !close_pending_; }

  Hub& hub_;
  ClientId id_;
  net::steady_timer handshake_timer_;
  std::size_t max_queue_;
  std::deque<std::string> outbox_;
  bool writing_ = false;
  bool close_pending_ = false;
  bool closed_ = false;
  bool greeted_ = false;
};

class TcpConnection : public Connection {
 public:
  TcpConnection(Hub& hub, ClientId id, net::steady_timer timer, std::size_t max_queue,
                tcp::socket socket)
      : Connection(hub, id, std::move(timer), max_queue), socket_(std::move(socket)) {}

  void start(std::string initial) override {
    consume(initial);
    read();
  }

 private:
  void read() {
    if (!reading_allowed()) return;
    socket_.async_read_some(net::buffer(buf_), [self = shared_from_this(), this](
                                                   beast::error_code ec, std::size_t n) {
      if (ec) {
        close_now();
        return;
      }
      consume(std::string_view(buf_.data(), n));
      read();
    });
  }

  void consume(std::string_view bytes) {
    if (bytes.empty()) return;
    std::vector<std::string> frames;
    try {
      frames = frames_.feed(bytes);
    } catch (const Error& e) {
      send(encode(ErrorMsg{std::string(to_string(e.code())), e.detail()}));
      close_after_flush();
      return;
    }
    auto self = shared_from_this();
    for (auto& f : frames) {
      if (!reading_allowed()) return;
      hub_.on_frame(self, std::move(f));
    }
  }

  void write_frame(const std::string& line) override {
    net::async_write(socket_, net::buffer(line),
                     [self = shared_from_this(), this](beast::error_code ec, std::size_t) {
                       on_written(ec);
                     });
  }

  void shutdown_transport() override {
    beast::error_code ec;
    socket_.shutdown(tcp::socket::shutdown_both, ec);
    socket_.close(ec);
  }

  tcp::socket socket_;
  std::array<char, 8192> buf_{};
  FrameBuffer frames_;
};

class WsConnection : public Connection {
 public:
  WsConnection(Hub& hub, ClientId id, net::steady_timer timer, std::size_t max_queue,
               tcp::socket socket)
      : Connection(hub, id, std::move(timer), max_queue), ws_(std::move(socket)) {}

  void start(std::string initial) override {
    auto buf = http_buf_.prepare(initial.size());
    net::buffer_copy(buf, net::buffer(initial));
    http_buf_.commit(initial.size());
    http::async_read(ws_.next_layer(), http_buf_, request_,
                     [self = shared_from_this(), this](beast::error_code ec, std::size_t) {
                       if (ec) {
                         close_now();
                         return;
                       }
                       if (request_.target() != "/ws" || !websocket::is_upgrade(request_)) {
                         reject_http();
                         return;
                       }
                       ws_.read_message_max(kMaxFrameBytes);
                       ws_.text(true);
                       ws_.async_accept(request_, [self, this](beast::error_code ec2) {
                         if (ec2) {
                           close_now();
                           return;
                         }
                         upgraded_ = true;
                         read();
                       });
                     });
  }

 private:
  void reject_http() {
    response_ = {http::status::not_found, request_.version()};
    response_.set(http::field::content_type, "text/plain");
    response_.body() = "websocket endpoint is /ws\n";
    response_.keep_alive(false);
    response_.prepare_payload();
    http::async_write(ws_.next_layer(), response_,
                      [self = shared_from_this(), this](beast::error_code, std::size_t) {
                        close_now();
                      });
  }

  void read() {
    if (!reading_allowed()) return;
    ws_.async_read(read_buf_, [self = shared_from_this(), this](beast::error_code ec,
                                                                std::size_t) {
      if (ec) {
        if (ec == websocket::error::message_too_big) {
          closed_ = true;  // beast has already failed the stream
          shutdown_transport();
          hub_.on_closed(shared_from_this());
          return;
        }
        close_now();
        return;
      }
      std::string frame = beast::buffers_to_string(read_buf_.data());
      read_buf_.consume(read_buf_.size());
      while (!frame.empty() && (frame.back() == '\n' || frame.back() == '\r')) frame.pop_back();
      hub_.on_frame(shared_from_this(), std::move(frame));
      read();
    });
  }

  void write_frame(const std::string& line) override {
    // one message per text frame, without the NDJSON terminator
    std::string_view payload(line);
    if (!payload.empty() && payload.back() == '\n') payload.remove_suffix(1);
    ws_.async_write(net::buffer(payload.data(), payload.size()),
                    [self = shared_from_this(), this](beast::error_code ec, std::size_t) {
                      on_written(ec);
                    });
  }

  void shutdown_transport() override {
    beast::error_code ec;
    auto& sock = beast::get_lowest_layer(ws_).socket();
    if (upgraded_ && sock.is_open()) {
      ws_.async_close(websocket::close_code::normal,
                      [self = shared_from_this(), this](beast::error_code) {
                        beast::error_code ec2;
                        beast::get_lowest_layer(ws_).socket().close(ec2);
                      });
      return;
    }
    sock.shutdown(tcp::socket::shutdown_both, ec);
    sock.close(ec);
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer http_buf_;
  beast::flat_buffer read_buf_;
  http::request<http::string_body> request_;
  http::response<http::string_body> response_;
  bool upgraded_ = false;
};

// Reads the first bytes of a fresh connection to tell NDJSON from an HTTP upgrade.
struct Sniffer : std::enable_shared_from_this<Sniffer> {
  tcp::socket socket;
  net::steady_timer timer;
  std::string initial;
  std::array<char, 512> buf{};
  std::function<void(tcp::socket, net::steady_timer, std::string)> done;
  bool finished = false;

  Sniffer(tcp::socket s, net::steady_timer t) : socket(std::move(s)), timer(std::move(t)) {}

  void start() {
    timer.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->finished) return;
      self->finished = true;
      const std::string line = encode(ErrorMsg{std::string(to_string(ErrorCode::kHandshakeTimeout)),
                                               "no Hello before the deadline"});
      beast::error_code ignored;
      net::write(self->socket, net::buffer(line), ignored);
      self->socket.close(ignored);
    });
    read();
  }

  void read() {
    socket.async_read_some(net::buffer(buf), [self = shared_from_this()](beast::error_code ec,
                                                                         std::size_t n) {
      if (self->finished) return;
      if (ec) {
        self->finished = true;
        self->timer.cancel();
        beast::error_code ignored;
        self->socket.close(ignored);
        return;
      }
      self->initial.append(self->buf.data(), n);
      if (self->initial.size() < 4 && self->initial.find('\n') == std::string::npos) {
        self->read();
        return;
      }
      self->finished = true;
      // The deadline keeps running on the connection; detach it from this waiter.
      const auto expiry = self->timer.expiry();
      self->timer.cancel();
      net::steady_timer t(self->socket.get_executor());
      t.expires_at(expiry);
      self->done(std::move(self->socket), std::move(t), std::move(self->initial));
    });
  }
};

std::int64_t micros_since(std::chrono::steady_clock::time_point epoch) {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() -
                                                               epoch)
      .count();
}

}  // namespace

struct Server::Impl : Hub {
  Impl(const TeleopConfig& cfg, const RigidTransform& calibration, const ServerOptions& opts)
      : config(cfg),
        options(opts),
        runtime(cfg, calibration),
        acceptor(ioc),
        tick_timer(ioc),
        period(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(1.0 / cfg.sim.tick_rate_hz))),
        epoch(std::chrono::steady_clock::now()) {
    const std::string where = options.host + ":" + std::to_string(options.port);
    try {
      tcp::resolver resolver(ioc);
      const auto results = resolver.resolve(options.host, std::to_string(options.port));
      const tcp::endpoint ep = results.begin()->endpoint();
      acceptor.open(ep.protocol());
      acceptor.set_option(net::socket_base::reuse_address(true));
      acceptor.bind(ep);
      acceptor.listen();
    } catch (const boost::system::system_error& e) {
      throw Error(ErrorCode::kBindFailure, where + ": " + e.code().message());
    }
    if (options.record_path) {
      record.open(*options.record_path, std::ios::out | std::ios::trunc);
      if (!record) throw Error(ErrorCode::kBadConfig, "cannot write recording " + *options.record_path);
    }
    accept();
    tick_timer.expires_after(period);
    schedule_tick();
  }

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec == net::error::operation_aborted || !acceptor.is_open()) return;
        accept();
        return;
      }
      beast::error_code ignored;
      socket.set_option(tcp::no_delay(true), ignored);
      net::steady_timer deadline(ioc);
      deadline.expires_after(std::chrono::milliseconds(config.handshake_timeout_ms));
      auto sniffer = std::make_shared<Sniffer>(std::move(socket), std::move(deadline));
      sniffer->done = [this](tcp::socket s, net::steady_timer t, std::string initial) {
        open_connection(std::move(s), std::move(t), std::move(initial));
      };
      sniffer->start();
      accept();
    });
  }

  void open_connection(tcp::socket socket, net::steady_timer timer, std::string initial) {
    const ClientId id = runtime.connect();
    ConnectionPtr c;
    if (initial.rfind("GET ", 0) == 0) {
      c = std::make_shared<WsConnection>(*this, id, std::move(timer), options.max_queued_frames,
                                         std::move(socket));
    } else {
      c = std::make_shared<TcpConnection>(*this, id, std::move(timer), options.max_queued_frames,
                                          std::move(socket));
    }
    connections[id] = c;
    c->arm_handshake_timer();
    c->start(std::move(initial));
  }

  void on_frame(const ConnectionPtr& c, std::string frame) override {
    std::lock_guard lock(mutex);
    if (record.is_open()) {
      nlohmann::json msg = nlohmann::json::parse(frame, nullptr, false);
      write_record("in", std::to_string(c->id()), msg.is_discarded() ? nlohmann::json(frame) : msg);
    }
    if (!c->greeted()) {
      try {
        handshake_verdict(frame);
      } catch (const Error& e) {
        send(c, ErrorMsg{std::string(to_string(e.code())), e.detail()});
        c->close_after_flush();
        return;
      }
      c->mark_greeted();
    }
    std::vector<Outbound> replies;
    try {
      replies = runtime.deliver_frame(c->id(), frame);
    } catch (const Error& e) {
      send(c, ErrorMsg{std::string(to_string(e.code())), e.detail()});
      c->close_after_flush();
      return;
    }
    route(replies);
  }

  void on_closed(const ConnectionPtr& c) override {
    // may run inside a handler that already holds the lock
    std::lock_guard lock(mutex);
    if (!connections.erase(c->id())) return;
    route(runtime.disconnect(c->id()));
  }

  void send(const ConnectionPtr& c, const WireMessage& msg) {
    if (record.is_open()) write_record("out", std::to_string(c->id()), to_json(msg));
    c->send(encode(msg));
  }

  void route(const std::vector<Outbound>& replies) {
    for (const auto& r : replies) {
      if (r.to) {
        auto it = connections.find(*r.to);
        if (it != connections.end()) send(it->second, r.msg);
      } else {
        broadcast(r.msg);
      }
    }
  }

  void broadcast(const WireMessage& msg) {
    std::vector<ConnectionPtr> targets;
    for (const auto& [id, c] : connections) {
      if (runtime.session().admitted(id)) targets.push_back(c);
    }
    if (targets.empty()) return;
    if (record.is_open()) write_record("out", "*", to_json(msg));
    const std::string line = encode(msg);
    for (const auto& c : targets) c->send(line);
  }

  void write_record(const char* dir, const std::string& client, const nlohmann::json& msg) {
    record << nlohmann::json{{"server_ts_us", micros_since(epoch)},
                             {"dir", dir},
                             {"client", client},
                             {"msg", msg}}
                  .dump()
           << '\n';
  }

  void schedule_tick() {
    tick_timer.async_wait([this](beast::error_code ec) {
      if (ec) return;
      {
        std::lock_guard lock(mutex);
        const StateBroadcast b = runtime.tick();
        ++tick_count;
        broadcast(b);
      }
      auto next = tick_timer.expiry() + period;
      const auto now = std::chrono::steady_clock::now();
      if (next + 5 * period < now) next = now + period;  // no catch-up burst after a stall
      tick_timer.expires_at(next);
      schedule_tick();
    });
  }

  void shutdown() {
    beast::error_code ignored;
    acceptor.close(ignored);
    tick_timer.cancel();
    const auto snapshot = connections;
    for (const auto& [id, c] : snapshot) c->close_now();
    if (record.is_open()) record.flush();
    ioc.stop();
  }

  TeleopConfig config;
  ServerOptions options;
  net::io_context ioc;
  Runtime runtime;
  tcp::acceptor acceptor;
  net::steady_timer tick_timer;
  std::chrono::steady_clock::duration period;
  std::chrono::steady_clock::time_point epoch;
  std::map<ClientId, ConnectionPtr> connections;
  std::ofstream record;
  mutable std::recursive_mutex mutex;
  std::uint64_t tick_count = 0;
  std::thread thread;
  bool stopped = false;
};

Server::Server(const TeleopConfig& config, const RigidTransform& calibration,
               const ServerOptions& options)
    : impl_(std::make_unique<Impl>(config, calibration, options)) {}

Server::~Server() { stop(); }

int Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run() { impl_->ioc.run(); }

void Server::start() {
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void Server::stop() {
  if (impl_->stopped) return;
  impl_->stopped = true;
  net::post(impl_->ioc, [impl = impl_.get()] { impl->shutdown(); });
  if (impl_->thread.joinable()) {
    impl_->thread.join();
  } else if (!impl_->ioc.stopped()) {
    impl_->ioc.run();  // drain the shutdown handler
  }
}

std::vector<LatencyPair> Server::latency_log() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->runtime.latency_log();
}

std::uint64_t Server::ticks() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->tick_count;
}

}  // namespace teleop
