#include "asyncsteer/server.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <deque>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <thread>

#include "asyncsteer/errors.hpp"
#include "asyncsteer/framing.hpp"

namespace asyncsteer {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using Payload = std::shared_ptr<const std::string>;

namespace {

class Client;

}  // namespace

struct Server::Impl {
  Impl(Session& s, const std::string& address, std::uint16_t port)
      : session(s), acceptor(ioc, tcp::endpoint(asio::ip::make_address(address), port)) {}

  void accept();
  void sniff(tcp::socket socket);
  void attach(const std::shared_ptr<Client>& client);
  void detach(const std::shared_ptr<Client>& client);
  void broadcast(Payload frame);

  Session& session;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::optional<asio::executor_work_guard<asio::io_context::executor_type>> work;
  std::thread thread;
  std::set<std::shared_ptr<Client>> clients;  // io thread only
  std::atomic<std::size_t> client_count{0};
  std::atomic<std::size_t> dropped{0};
  bool started = false;
};

namespace {

/// Per-connection outbound queue and command intake. All members are
/// touched on the io thread only.
class Client : public std::enable_shared_from_this<Client> {
 public:
  explicit Client(Server::Impl& server) : server_(server) {}
  virtual ~Client() = default;

  void deliver(Payload payload, bool snapshot) {
    if (closed_) return;
    queue_.push_back({std::move(payload), snapshot});
    if (snapshot && ++queued_snapshots_ > kClientQueueDepth) {
      // The frame at the front may be on the wire already.
      const auto first = queue_.begin() + (writing_ ? 1 : 0);
      const auto oldest = std::find_if(first, queue_.end(), [](const Out& o) { return o.snapshot; });
      if (oldest != queue_.end()) {
        queue_.erase(oldest);
        --queued_snapshots_;
        ++server_.dropped;
      }
    }
    if (!writing_) write_front();
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    shutdown();
    server_.detach(shared_from_this());
  }

 protected:
  void on_payload(const std::string& payload) {
    CommandFrame command;
    try {
      auto frame = decode(payload);
      auto* c = std::get_if<CommandFrame>(&frame);
      if (c == nullptr) throw ProtocolError("clients may only send COMMAND frames");
      command = std::move(*c);
    } catch (const ProtocolError& e) {
      std::cerr << "closing client: " << e.what() << "\n";
      close();
      return;
    }
    std::weak_ptr<Client> weak = shared_from_this();
    auto& ioc = server_.ioc;
    server_.session.submit(std::move(command), [weak, &ioc](std::string reply) {
      auto frame = std::make_shared<const std::string>(std::move(reply));
      asio::post(ioc, [weak, frame] {
        if (auto self = weak.lock()) self->deliver(frame, false);
      });
    });
  }

  void on_written(beast::error_code ec) {
    writing_ = false;
    if (ec) return close();
    if (queue_.front().snapshot) --queued_snapshots_;
    queue_.pop_front();
    if (!queue_.empty()) write_front();
  }

  virtual void write(const std::string& payload) = 0;
  virtual void shutdown() = 0;

  Server::Impl& server_;
  bool closed_ = false;

 private:
  struct Out {
    Payload payload;
    bool snapshot;
  };

  void write_front() {
    if (closed_ || queue_.empty()) return;
    writing_ = true;
    write(*queue_.front().payload);
  }

  std::deque<Out> queue_;
  std::size_t queued_snapshots_ = 0;
  bool writing_ = false;
};

class RawClient final : public Client {
 public:
  RawClient(Server::Impl& server, tcp::socket socket) : Client(server), socket_(std::move(socket)) {}

  void begin(std::string_view already_read) {
    feed(already_read);
    if (!closed_) read();
  }

 private:
  void read() {
    socket_.async_read_some(asio::buffer(buffer_), [self = shared(), this](beast::error_code ec, std::size_t n) {
      if (ec) return close();
      feed(std::string_view(buffer_.data(), n));
      if (!closed_) read();
    });
  }

  void feed(std::string_view bytes) {
    std::vector<std::string> frames;
    try {
      frames = decoder_.feed(bytes);
    } catch (const ProtocolError& e) {
      std::cerr << "closing client: " << e.what() << "\n";
      return close();
    }
    for (const auto& f : frames) {
      if (closed_) return;
      on_payload(f);
    }
  }

  void write(const std::string& payload) override {
    const auto n = static_cast<std::uint32_t>(payload.size());
    header_ = {static_cast<unsigned char>(n >> 24), static_cast<unsigned char>(n >> 16),
               static_cast<unsigned char>(n >> 8), static_cast<unsigned char>(n)};
    const std::array<asio::const_buffer, 2> buffers{asio::buffer(header_), asio::buffer(payload)};
    asio::async_write(socket_, buffers,
                      [self = shared(), this](beast::error_code ec, std::size_t) { on_written(ec); });
  }

  void shutdown() override {
    beast::error_code ignored;
    socket_.shutdown(tcp::socket::shutdown_both, ignored);
    socket_.close(ignored);
  }

  std::shared_ptr<RawClient> shared() { return std::static_pointer_cast<RawClient>(shared_from_this()); }

  tcp::socket socket_;
  FrameDecoder decoder_;
  std::array<char, 8192> buffer_{};
  std::array<unsigned char, 4> header_{};
};

class WsClient final : public Client {
 public:
  WsClient(Server::Impl& server, tcp::socket socket) : Client(server), ws_(std::move(socket)) {}

  template <class Ready>
  void begin(http::request<http::string_body> request, Ready ready) {
    ws_.text(true);
    ws_.read_message_max(kMaxFrameBytes);
    ws_.async_accept(request, [self = shared(), this, ready](beast::error_code ec) {
      if (ec) return;
      ready(self);
      read();
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared(), this](beast::error_code ec, std::size_t) {
      if (ec) return close();
      const auto payload = beast::buffers_to_string(buffer_.data());
      buffer_.consume(buffer_.size());
      on_payload(payload);
      if (!closed_) read();
    });
  }

  void write(const std::string& payload) override {
    ws_.async_write(asio::buffer(payload),
                    [self = shared(), this](beast::error_code ec, std::size_t) { on_written(ec); });
  }

  void shutdown() override {
    beast::error_code ignored;
    beast::get_lowest_layer(ws_).shutdown(tcp::socket::shutdown_both, ignored);
    beast::get_lowest_layer(ws_).close(ignored);
  }

  std::shared_ptr<WsClient> shared() { return std::static_pointer_cast<WsClient>(shared_from_this()); }

  websocket::stream<tcp::socket> ws_;
  beast::flat_buffer buffer_;
};

}  // namespace

void Server::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    sniff(std::move(socket));
    accept();
  });
}

namespace {

struct Sniff {
  explicit Sniff(tcp::socket s) : socket(std::move(s)), timer(socket.get_executor()) {}
  tcp::socket socket;
  asio::steady_timer timer;
  std::array<char, 4> head{};
  std::size_t got = 0;
  bool decided = false;
};

constexpr auto kSniffWindow = std::chrono::milliseconds(200);

}  // namespace

void Server::Impl::sniff(tcp::socket s) {
  // Browsers open with "GET " right away. Raw clients may stay silent until
  // they have seen HELLO, so silence through the window also means raw.
  auto state = std::make_shared<Sniff>(std::move(s));
  auto decide = [this, state] {
    if (state->decided) return;
    state->decided = true;
    state->timer.cancel();
    const std::string_view prefix(state->head.data(), state->got);
    if (prefix != "GET ") {
      auto client = std::make_shared<RawClient>(*this, std::move(state->socket));
      attach(client);
      client->begin(prefix);
      return;
    }
    auto buffer = std::make_shared<beast::flat_buffer>();
    asio::buffer_copy(buffer->prepare(prefix.size()), asio::buffer(prefix));
    buffer->commit(prefix.size());
    auto socket = std::make_shared<tcp::socket>(std::move(state->socket));
    auto request = std::make_shared<http::request<http::string_body>>();
    http::async_read(*socket, *buffer, *request, [this, socket, buffer, request](beast::error_code ec, std::size_t) {
      if (ec || !websocket::is_upgrade(*request)) {
        beast::error_code ignored;
        socket->close(ignored);
        return;
      }
      auto client = std::make_shared<WsClient>(*this, std::move(*socket));
      client->begin(std::move(*request), [this](const std::shared_ptr<Client>& c) { attach(c); });
    });
  };
  auto read = std::make_shared<std::function<void()>>();
  *read = [state, decide, read] {
    state->socket.async_read_some(
        asio::buffer(state->head.data() + state->got, state->head.size() - state->got),
        [state, decide, read](beast::error_code ec, std::size_t n) {
          if (state->decided || ec) {
            state->decided = true;
            state->timer.cancel();
            *read = nullptr;
            return;
          }
          state->got += n;
          const std::string_view seen(state->head.data(), state->got);
          if (state->got == state->head.size() || !std::string_view("GET ").starts_with(seen)) {
            *read = nullptr;
            return decide();
          }
          (*read)();
        });
  };
  state->timer.expires_after(kSniffWindow);
  state->timer.async_wait([state, decide, read](beast::error_code ec) {
    if (ec || state->decided) return;
    // Abandon the pending read; the socket moves to the client.
    beast::error_code ignored;
    state->socket.cancel(ignored);
    *read = nullptr;
    decide();
  });
  (*read)();
}

void Server::Impl::attach(const std::shared_ptr<Client>& client) {
  clients.insert(client);
  client_count = clients.size();
  client->deliver(std::make_shared<const std::string>(session.hello()), false);
}

void Server::Impl::detach(const std::shared_ptr<Client>& client) {
  clients.erase(client);
  client_count = clients.size();
}

void Server::Impl::broadcast(Payload frame) {
  // Copy: deliver() may close and detach a client.
  const auto targets = clients;
  for (const auto& c : targets) c->deliver(frame, true);
}

Server::Server(Session& session, const std::string& address, std::uint16_t port)
    : impl_(std::make_unique<Impl>(session, address, port)) {}

Server::~Server() { stop(); }

std::uint16_t Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::start() {
  if (impl_->started) return;
  impl_->started = true;
  impl_->work.emplace(impl_->ioc.get_executor());
  impl_->accept();
  auto* impl = impl_.get();
  impl_->session.set_sink([impl](const std::string& frame, const Snapshot&) {
    auto payload = std::make_shared<const std::string>(frame);
    asio::post(impl->ioc, [impl, payload] { impl->broadcast(payload); });
  });
  impl_->thread = std::thread([impl] { impl->ioc.run(); });
}

void Server::stop() {
  if (!impl_ || !impl_->started) return;
  impl_->started = false;
  impl_->session.set_sink({});
  auto* impl = impl_.get();
  asio::post(impl->ioc, [impl] {
    beast::error_code ignored;
    impl->acceptor.close(ignored);
    const auto targets = impl->clients;
    for (const auto& c : targets) c->close();
    impl->work.reset();
    impl->ioc.stop();
  });
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::size_t Server::client_count() const { return impl_->client_count.load(); }

std::size_t Server::dropped_snapshots() const { return impl_->dropped.load(); }

}  // namespace asyncsteer
