// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtlsplit/model.hpp"
#include "mtlsplit/rng.hpp"
#include "mtlsplit/split_wire.hpp"

namespace mtlsplit {

/// Link description shared by the simulator and the analyzer.
struct ChannelModel {
  double bandwidth_bytes_per_s = 125'000'000.0;  // 1 Gbit/s
  double propagation_delay_s = 0.0;              // one way
  double per_message_overhead_s = 0.0;
  double jitter_s = 0.0;                         // uniform in [0, jitter_s]

  static ChannelModel gigabit() { return {}; }

  void validate() const;
};

/// Config-file form: bandwidth in bits/s, delays in milliseconds.
nlohmann::json to_json(const ChannelModel& ch);
ChannelModel channel_from_json(const nlohmann::json& doc);

/// overhead + propagation + bytes / bandwidth + jitter draw. `rng` may be null when jitter is zero.
double simulate_transfer(std::uint64_t bytes, const ChannelModel& ch, Rng* rng = nullptr);

enum class Paradigm { kLoC, kRoC, kSC };

std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& text);

/// Channel cost of one workload. Per-input byte counts are itemized; the
/// payload-only time ignores framing and fixed costs.
struct TransferReport {
  Paradigm paradigm = Paradigm::kLoC;
  std::uint64_t n_inputs = 0;
  std::uint64_t request_payload_bytes = 0;
  std::uint64_t request_overhead_bytes = 0;
  std::uint64_t response_bytes = 0;
  double payload_seconds = 0.0;
  double request_seconds = 0.0;
  double response_seconds = 0.0;
  double total_seconds = 0.0;
};

/// LoC sends nothing; RoC ships the flattened raw input; SC ships Z_b. Each
/// input also pays for one PredictionResponse with the given class counts.
TransferReport transfer_time_report(Paradigm paradigm, std::uint64_t n_inputs, const Shape& input_shape,
                                    std::uint64_t feature_len, const ChannelModel& ch,
                                    std::span<const std::uint32_t> n_classes = {}, std::uint64_t seed = 0);

/// Per-message overhead that would make `n_messages` transfers of `bytes` take `target_seconds`.
double overhead_to_match(double target_seconds, std::uint64_t n_messages, std::uint64_t bytes,
                         const ChannelModel& ch);

/// Moves one encoded request to the server and returns the encoded response.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::vector<std::uint8_t> round_trip(std::span<const std::uint8_t> request) = 0;
};

/// Server side of the splitting point. In SC mode it holds only the heads; in
/// RoC mode it also holds the backbone and accepts raw inputs.
class HeadServer {
 public:
  /// SC mode.
  HeadServer(ModelConfig config, std::vector<Head> heads);
  /// RoC mode.
  HeadServer(ModelConfig config, Backbone backbone, std::vector<Head> heads);

  Paradigm mode() const noexcept { return backbone_ ? Paradigm::kRoC : Paradigm::kSC; }
  bool holds_backbone() const noexcept { return backbone_.has_value(); }
  const ModelConfig& config() const noexcept { return config_; }

  /// Decodes, runs the heads, and encodes a reply. Never throws: malformed
  /// input yields an Error frame echoing the request id when it was readable.
  std::vector<std::uint8_t> handle(std::span<const std::uint8_t> request) const;

 private:
  wire::Predictions run_heads(const Tensor& z) const;

  ModelConfig config_;
  std::optional<Backbone> backbone_;
  std::vector<Head> heads_;
};

/// In-process transport: the request goes straight to the server.
class LoopbackTransport : public Transport {
 public:
  explicit LoopbackTransport(const HeadServer& server) : server_(server) {}
  std::vector<std::uint8_t> round_trip(std::span<const std::uint8_t> request) override;

 private:
  const HeadServer& server_;
};

/// Loopback plus a deterministic clock charging both directions to a channel model.
class SimulatedTransport : public Transport {
 public:
  SimulatedTransport(const HeadServer& server, ChannelModel channel, std::uint64_t seed = 0);
  std::vector<std::uint8_t> round_trip(std::span<const std::uint8_t> request) override;

  double elapsed_seconds() const noexcept { return elapsed_; }
  std::uint64_t bytes_sent() const noexcept { return sent_; }
  std::uint64_t bytes_received() const noexcept { return received_; }

 private:
  const HeadServer& server_;
  ChannelModel channel_;
  Rng rng_;
  double elapsed_ = 0.0;
  std::uint64_t sent_ = 0;
  std::uint64_t received_ = 0;
};

inline constexpr std::chrono::milliseconds kDefaultTimeout{5000};
/// Largest frame accepted on a socket.
inline constexpr std::uint32_t kMaxSocketFrame = 256u << 20;

struct SocketAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string to_string() const;
};

/// Parses "host:port".
SocketAddress parse_address(const std::string& text);

/// Client over a stream socket. Frames travel as u32 little-endian length + frame bytes.
class SocketTransport : public Transport {
 public:
  explicit SocketTransport(const SocketAddress& address, std::chrono::milliseconds timeout = kDefaultTimeout);
  ~SocketTransport() override;
  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  std::vector<std::uint8_t> round_trip(std::span<const std::uint8_t> request) override;

  /// Writes raw bytes without framing; for exercising the server's error paths.
  void send_raw(std::span<const std::uint8_t> bytes);
  /// Reads one length-delimited frame.
  std::vector<std::uint8_t> receive();

 private:
  int fd_ = -1;
  SocketAddress address_;
  std::chrono::milliseconds timeout_;
};

/// Serves a HeadServer over a stream socket, one handler thread per connection.
class SocketServer {
 public:
  /// Binds and listens immediately; port 0 picks an ephemeral port.
  SocketServer(const HeadServer& server, const SocketAddress& listen,
               std::chrono::milliseconds timeout = kDefaultTimeout);
  ~SocketServer();
  SocketServer(const SocketServer&) = delete;
  SocketServer& operator=(const SocketServer&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  /// Accepts until shutdown(); then lets in-flight requests finish and joins handlers.
  void run();
  void shutdown() noexcept { stop_.store(true); }
  std::uint64_t requests_served() const noexcept { return served_.load(); }

 private:
  void handle_connection(int fd);

  const HeadServer& server_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::chrono::milliseconds timeout_;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> served_{0};
  std::mutex threads_mutex_;
  std::vector<std::thread> handlers_;
};

/// Edge side: runs the backbone locally (SC) or ships the raw input (RoC).
class EdgeClient {
 public:
  /// SC mode: holds only the backbone.
  EdgeClient(Backbone backbone, Transport& transport);
  /// RoC mode: holds no parameters; needs the input shape only.
  EdgeClient(Shape input_shape, Transport& transport);

  Paradigm mode() const noexcept { return backbone_ ? Paradigm::kSC : Paradigm::kRoC; }

  /// Logits for one input, ordered by task id.
  std::vector<Tensor> infer(const Tensor& x);

  std::uint64_t last_request_id() const noexcept { return next_id_ - 1; }

 private:
  std::optional<Backbone> backbone_;
  Shape input_shape_;
  Transport& transport_;
  std::uint64_t next_id_ = 1;
};

}  // namespace mtlsplit
