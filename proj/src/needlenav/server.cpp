#include "needlenav/server.hpp"

#include "needlenav/error.hpp"
#include "needlenav/session.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

namespace needlenav {

OutboundQueue::OutboundQueue(std::size_t snapshot_capacity) : capacity_(snapshot_capacity) {
  if (capacity_ == 0) throw Error(ErrorCode::InvalidArgument, "outbound queue: capacity must be positive");
}

void OutboundQueue::push_snapshot(std::uint64_t tick, std::string line) {
  if (snapshots_ == capacity_) {
    const auto oldest = std::find_if(entries_.begin(), entries_.end(), [](const Entry& e) { return e.snapshot; });
    if (pending_drops_ == 0) drop_first_ = oldest->tick;
    drop_last_ = oldest->tick;
    ++pending_drops_;
    ++dropped_total_;
    entries_.erase(oldest);
    --snapshots_;
  }
  entries_.push_back({true, tick, std::move(line)});
  ++snapshots_;
}

void OutboundQueue::push_message(std::string line) { entries_.push_back({false, 0, std::move(line)}); }

std::optional<std::string> OutboundQueue::pop() {
  if (entries_.empty()) return std::nullopt;
  std::string out;
  if (pending_drops_) {
    out = drop_to_json(drop_first_, drop_last_, pending_drops_) + '\n';
    pending_drops_ = 0;
  }
  Entry e = std::move(entries_.front());
  entries_.pop_front();
  if (e.snapshot) --snapshots_;
  out += e.line;
  out += '\n';
  return out;
}

namespace {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

// Beyond this many buffered frames the client is considered gone.
constexpr std::size_t kMaxBufferedMessages = 4096;

class Connection;

struct Inbound {
  std::weak_ptr<Connection> origin;
  OperatorCommand command;
};

// The parts of the server a connection talks to.
class Hub {
 public:
  virtual ~Hub() = default;
  virtual void attach(const std::shared_ptr<Connection>& c) = 0;
  virtual void detach(const Connection* c) = 0;
  virtual void submit(Inbound in) = 0;
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, Hub& hub, std::size_t capacity)
      : ws_(std::move(socket)), executor_(ws_.get_executor()), hub_(hub), queue_(capacity) {}

  void start() {
    http::async_read(ws_.next_layer(), read_buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_request(ec); });
  }

  // Called from any thread.
  void deliver(const std::vector<std::string>& messages, std::optional<std::pair<std::uint64_t, std::string>> snapshot) {
    bool overflow;
    {
      std::lock_guard lock(mutex_);
      for (const auto& m : messages) queue_.push_message(m);
      if (snapshot) queue_.push_snapshot(snapshot->first, snapshot->second);
      overflow = queue_.size() > kMaxBufferedMessages;
    }
    net::post(executor_, [self = shared_from_this(), overflow] {
      if (overflow)
        self->close();
      else
        self->flush();
    });
  }

  // Network thread only.
  void close() {
    if (closed_) return;
    closed_ = true;
    beast::error_code ec;
    ws_.next_layer().socket().shutdown(tcp::socket::shutdown_both, ec);
    ws_.next_layer().socket().close(ec);
    hub_.detach(this);
  }

 private:
  void on_request(beast::error_code ec) {
    if (ec) return close();
    const auto raw = request_.target();
    const std::string_view target(raw.data(), raw.size());
    const std::string_view path = target.substr(0, target.find('?'));
    if (!websocket::is_upgrade(request_) || path != "/session") return reject_http();
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request_, [self = shared_from_this()](beast::error_code e) { self->on_accept(e); });
  }

  void reject_http() {
    auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found, request_.version());
    res->set(http::field::content_type, "text/plain");
    res->body() = "websocket endpoint is /session\n";
    res->keep_alive(false);
    res->prepare_payload();
    http::async_write(ws_.next_layer(), *res,
                      [self = shared_from_this(), res](beast::error_code, std::size_t) { self->close(); });
  }

  void on_accept(beast::error_code ec) {
    if (ec) return close();
    hub_.attach(shared_from_this());
    do_read();
  }

  void do_read() {
    ws_.async_read(read_buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) return close();
    const std::string text = beast::buffers_to_string(read_buffer_.data());
    read_buffer_.consume(read_buffer_.size());
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      const std::string_view line = std::string_view(text).substr(start, end - start);
      start = end + 1;
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      try {
        hub_.submit({weak_from_this(), parse_command(line)});
      } catch (const Error& e) {
        std::lock_guard lock(mutex_);
        queue_.push_message(error_to_json(e.what()));
      }
    }
    flush();
    do_read();
  }

  void flush() {
    if (writing_ || closed_) return;
    {
      std::lock_guard lock(mutex_);
      current_ = queue_.pop();
    }
    if (!current_) return;
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(*current_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) return self->close();
      self->flush();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  net::any_io_executor executor_;
  Hub& hub_;
  beast::flat_buffer read_buffer_;
  http::request<http::string_body> request_;
  std::mutex mutex_;
  OutboundQueue queue_;
  std::optional<std::string> current_;
  bool writing_ = false;
  bool closed_ = false;
};

}  // namespace

struct SessionServer::Impl : Hub {
  Impl(SimConfig config, ServerOptions opts) : cfg(std::move(config)), options(std::move(opts)) {
    beast::error_code ec;
    const auto address = net::ip::make_address(options.address, ec);
    if (ec) throw Error(ErrorCode::InvalidArgument, "serve: invalid address '" + options.address + "'");
    const tcp::endpoint endpoint(address, options.port);
    const std::string where = options.address + ":" + std::to_string(options.port);
    acceptor.open(endpoint.protocol(), ec);
    if (!ec) acceptor.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor.bind(endpoint, ec);
    if (!ec) acceptor.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw Error(ErrorCode::PortUnavailable, "cannot listen on " + where + ": " + ec.message());
    bound_port = acceptor.local_endpoint().port();

    core = std::make_unique<SessionCore>(cfg, options.seed, options.debug);
    hello = hello_to_json(*core);
    latest = snapshot_to_json(core->snapshot());
    if (options.record_path) {
      record.open(*options.record_path, std::ios::trunc);
      if (!record) throw Error(ErrorCode::Io, "cannot write " + options.record_path->string());
    }
  }

  void start() {
    accept();
    io_thread = std::thread([this] { ioc.run(); });
    sim_thread = std::thread([this] { run_simulation(); });
  }

  void stop() {
    {
      std::lock_guard lock(stop_mutex);
      if (stopping) return;
      stopping = true;
    }
    stop_cv.notify_all();
    if (sim_thread.joinable()) sim_thread.join();
    net::post(ioc, [this] {
      beast::error_code ec;
      acceptor.close(ec);
      std::vector<std::shared_ptr<Connection>> all;
      {
        std::lock_guard lock(mutex);
        all = connections;
      }
      for (const auto& c : all) c->close();
      ioc.stop();
    });
    if (io_thread.joinable()) io_thread.join();
    std::lock_guard lock(mutex);
    connections.clear();
  }

  void accept() {
    acceptor.async_accept(ioc, [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<Connection>(std::move(socket), *this, options.queue_capacity)->start();
      accept();
    });
  }

  void attach(const std::shared_ptr<Connection>& c) override {
    std::lock_guard lock(mutex);
    connections.push_back(c);
    // Under the same lock as broadcasts, so the stream starts gap-free.
    c->deliver({hello}, std::make_pair(latest_tick, latest));
  }

  void detach(const Connection* c) override {
    std::lock_guard lock(mutex);
    std::erase_if(connections, [c](const auto& p) { return p.get() == c; });
  }

  void submit(Inbound in) override {
    std::lock_guard lock(mutex);
    inbox.push_back(std::move(in));
  }

  void run_simulation() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / cfg.tick_hz));
    auto next = clock::now();
    std::int64_t sequence = 0;
    std::map<std::int64_t, Inbound> routes;
    for (;;) {
      next += period;
      if (next < clock::now()) next = clock::now();  // fell behind: do not burst
      {
        std::unique_lock lock(stop_mutex);
        if (stop_cv.wait_until(lock, next, [this] { return stopping; })) return;
      }

      std::vector<Inbound> batch;
      {
        std::lock_guard lock(mutex);
        batch.swap(inbox);
      }
      // Commands are renumbered so acknowledgements reach their sender even
      // when clients reuse ids.
      for (auto& in : batch) {
        OperatorCommand c = in.command;
        c.id = ++sequence;
        routes.emplace(c.id, std::move(in));
        core->submit(std::move(c));
      }

      TickResult r;
      try {
        r = core->tick();
      } catch (const std::exception& e) {
        broadcast({error_to_json(std::string("simulation error: ") + e.what())}, std::nullopt);
        continue;
      }

      const auto& log = core->command_log();
      const std::size_t first_logged = log.size() - r.acks.size();
      for (std::size_t i = 0; i < r.acks.size(); ++i) {
        CommandAck ack = r.acks[i];
        const auto route = routes.find(ack.id);
        ack.id = route->second.command.id;
        if (record) {
          RecordedCommand rc = log[first_logged + i];
          rc.command.id = ack.id;
          record << recorded_to_json(rc) << '\n';
        }
        if (auto origin = route->second.origin.lock()) origin->deliver({ack_to_json(ack)}, std::nullopt);
        routes.erase(route);
      }
      if (record) record.flush();

      std::vector<std::string> events;
      bool reset = false;
      for (const auto& e : r.events) {
        events.push_back(event_to_json(e));
        reset = reset || e.kind == EventKind::Reset;
      }
      if (reset) {
        std::lock_guard lock(mutex);
        hello = hello_to_json(*core);
      }
      broadcast(events, std::make_pair(r.snapshot.tick, snapshot_to_json(r.snapshot)));
    }
  }

  void broadcast(const std::vector<std::string>& messages,
                 const std::optional<std::pair<std::uint64_t, std::string>>& snapshot) {
    std::lock_guard lock(mutex);
    if (snapshot) {
      latest_tick = snapshot->first;
      latest = snapshot->second;
    }
    for (const auto& c : connections) c->deliver(messages, snapshot);
  }

  SimConfig cfg;
  ServerOptions options;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::uint16_t bound_port = 0;
  std::unique_ptr<SessionCore> core;
  std::ofstream record;

  std::mutex mutex;  // connections, inbox, hello, latest
  std::vector<std::shared_ptr<Connection>> connections;
  std::vector<Inbound> inbox;
  std::string hello;
  std::string latest;
  std::uint64_t latest_tick = 0;

  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  bool stopping = false;
  std::thread io_thread;
  std::thread sim_thread;
};

SessionServer::SessionServer(SimConfig cfg, ServerOptions options)
    : impl_(std::make_shared<Impl>(std::move(cfg), std::move(options))) {
  impl_->start();
}

SessionServer::~SessionServer() { stop(); }

std::uint16_t SessionServer::port() const { return impl_->bound_port; }

void SessionServer::stop() { impl_->stop(); }

}  // namespace needlenav
