#pragma once

#include "needlenav/config.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace needlenav {

/// Per-connection outbound buffer. Acknowledgements, events and other
/// messages are always kept; snapshots beyond `snapshot_capacity` evict the
/// oldest buffered snapshot, and the next message handed out is preceded by
/// a drop notice naming the discarded tick range. Not thread-safe.
class OutboundQueue {
 public:
  explicit OutboundQueue(std::size_t snapshot_capacity);

  void push_snapshot(std::uint64_t tick, std::string line);
  void push_message(std::string line);
  /// Next frame payload: one or more newline-terminated JSON lines.
  std::optional<std::string> pop();

  std::size_t size() const { return entries_.size(); }
  std::size_t dropped_total() const { return dropped_total_; }

 private:
  struct Entry {
    bool snapshot = false;
    std::uint64_t tick = 0;
    std::string line;
  };
  std::size_t capacity_;
  std::deque<Entry> entries_;
  std::size_t snapshots_ = 0;
  std::size_t dropped_total_ = 0;
  std::size_t pending_drops_ = 0;
  std::uint64_t drop_first_ = 0;
  std::uint64_t drop_last_ = 0;
};

struct ServerOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  bool debug = false;
  std::uint64_t seed = 1;
  std::size_t queue_capacity = 32;  // snapshots buffered per connection
  /// Appends every applied command as a replay log line.
  std::optional<std::filesystem::path> record_path;
};

/// WebSocket host of one SessionCore at `/session`. The simulation loop owns
/// the core and ticks at cfg.tick_hz; connections only exchange messages with
/// it through queues, so a slow client never stalls the loop.
class SessionServer {
 public:
  /// Binds immediately. Throws ErrorCode::PortUnavailable when the address
  /// cannot be bound.
  SessionServer(SimConfig cfg, ServerOptions options);
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  std::uint16_t port() const;
  /// Idempotent; joins the network and simulation threads.
  void stop();

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

}  // namespace needlenav
