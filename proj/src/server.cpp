#include <chrono>
#include <deque>
#include <map>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "ctf/server.hpp"

namespace ctf {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

// Frames queued for a client that does not read are dropped past this.
constexpr std::size_t kMaxQueued = 4096;

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  using Handler = std::function<void(int, const std::string&)>;
  using Closer = std::function<void(int)>;

  Connection(tcp::socket sock, int id, Handler on_message, Closer on_close)
      : ws_(std::move(sock)), id_(id), on_message_(std::move(on_message)), on_close_(std::move(on_close)) {}

  void start(std::function<void()> on_open) {
    ws_.text(true);
    ws_.async_accept([self = shared_from_this(), on_open = std::move(on_open)](beast::error_code ec) {
      if (ec) return self->close();
      self->open_ = true;
      on_open();
      self->read();
    });
  }

  void send(const std::string& text) {
    if (!open_) return;
    if (queue_.size() >= kMaxQueued) {
      beast::error_code ignored;
      beast::get_lowest_layer(ws_).close(ignored);
      return;
    }
    queue_.push_back(text);
    if (queue_.size() == 1) write();
  }

  void shutdown() {
    beast::error_code ignored;
    beast::get_lowest_layer(ws_).close(ignored);
  }

 private:
  void read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->on_message_(self->id_, beast::buffers_to_string(self->buf_.data()));
      self->buf_.consume(self->buf_.size());
      self->read();
    });
  }

  void write() {
    ws_.async_write(asio::buffer(queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    open_ = false;
    queue_.clear();
    on_close_(id_);
  }

  websocket::stream<tcp::socket> ws_;
  int id_;
  Handler on_message_;
  Closer on_close_;
  beast::flat_buffer buf_;
  std::deque<std::string> queue_;
  bool open_ = false;
  bool closed_ = false;
};

}  // namespace

struct SessionServer::Impl {
  asio::io_context io{1};
  tcp::acceptor acceptor{io};
  asio::steady_timer timer{io};
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::chrono::steady_clock::duration period;
  std::chrono::steady_clock::time_point next_tick;
  std::map<int, std::shared_ptr<Connection>> conns;
  int next_id = 1;
  asio::signal_set signals{io};
  unsigned short port = 0;
  std::unique_ptr<Session> session;

  void shutdown() {
    beast::error_code ignored;
    signals.cancel(ignored);
    acceptor.close(ignored);
    timer.cancel();
    for (auto& [id, c] : conns) c->shutdown();
  }

  double now() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); }

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket sock) {
      if (ec) return;  // acceptor closed
      sock.set_option(tcp::no_delay(true));
      const int id = next_id++;
      auto c = std::make_shared<Connection>(
          std::move(sock), id, [this](int cid, const std::string& text) { session->handle(cid, text, now()); },
          [this](int cid) {
            session->disconnect(cid, now());
            conns.erase(cid);
          });
      conns[id] = c;
      c->start([this, id] { session->connect(id); });
      accept();
    });
  }

  // Absolute deadlines keep the mean period exact even when a tick runs late.
  void schedule() {
    next_tick += period;
    timer.expires_at(next_tick);
    timer.async_wait([this](beast::error_code ec) {
      if (ec) return;
      session->on_clock(now());
      schedule();
    });
  }
};

SessionServer::SessionServer(SessionConfig cfg, unsigned short port, std::optional<PolicySource> bot,
                             const std::string& address)
    : impl_(std::make_unique<Impl>()) {
  Impl& m = *impl_;
  m.period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(cfg.arena.tick_dt));
  m.session = std::make_unique<Session>(std::move(cfg), std::move(bot), [this](int conn, const std::string& text) {
    auto it = impl_->conns.find(conn);
    if (it != impl_->conns.end()) it->second->send(text);
  });
  beast::error_code ec;
  const auto addr = asio::ip::make_address(address, ec);
  if (ec) throw ConfigError("bad listen address '" + address + "'");
  const tcp::endpoint ep(addr, port);
  m.acceptor.open(ep.protocol(), ec);
  if (!ec) m.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) m.acceptor.bind(ep, ec);
  if (!ec) m.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw IoError("cannot listen on " + address + ":" + std::to_string(port) + ": " + ec.message());
  m.port = m.acceptor.local_endpoint().port();
  m.accept();
  m.next_tick = std::chrono::steady_clock::now();
  m.schedule();
}

SessionServer::~SessionServer() { stop(); }

unsigned short SessionServer::port() const { return impl_->port; }

void SessionServer::start() {
  if (thread_.joinable()) return;
  thread_ = std::thread([this] { impl_->io.run(); });
}

void SessionServer::run() {
  impl_->signals.add(SIGINT);
  impl_->signals.add(SIGTERM);
  impl_->signals.async_wait([m = impl_.get()](beast::error_code ec, int) {
    if (!ec) m->shutdown();
  });
  impl_->io.run();
}

void SessionServer::stop() {
  if (!impl_) return;
  asio::post(impl_->io, [m = impl_.get()] { m->shutdown(); });
  if (thread_.joinable()) {
    thread_.join();
  } else if (!impl_->io.stopped()) {
    // run() on the caller's thread: let the posted shutdown drain.
    impl_->io.run();
  }
}

const Session& SessionServer::session() const { return *impl_->session; }

std::unique_ptr<SessionServer> start_session(const SessionConfig& cfg, unsigned short port,
                                             const std::optional<std::string>& bot_checkpoint,
                                             const std::string& address) {
  std::optional<PolicySource> bot;
  if (bot_checkpoint) {
    auto ckpt = std::make_shared<const nn::Checkpoint>(nn::load_checkpoint(*bot_checkpoint));
    bot = PolicySource::from_checkpoint(std::move(ckpt), *bot_checkpoint);
  }
  auto s = std::make_unique<SessionServer>(cfg, port, std::move(bot), address);
  s->start();
  return s;
}

}  // namespace ctf
