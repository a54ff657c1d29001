// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mtlsplit/error.hpp"

namespace mtlsplit {

void ChannelModel::validate() const {
  if (!(bandwidth_bytes_per_s > 0.0)) throw ConfigError("channel bandwidth must be positive");
  if (!(propagation_delay_s >= 0.0) || !(per_message_overhead_s >= 0.0) || !(jitter_s >= 0.0)) {
    throw ConfigError("channel delays must be non-negative");
  }
}

nlohmann::json to_json(const ChannelModel& ch) {
  return {
      {"bandwidth_bits_per_s", ch.bandwidth_bytes_per_s * 8.0},
      {"propagation_delay_ms", ch.propagation_delay_s * 1e3},
      {"per_message_overhead_ms", ch.per_message_overhead_s * 1e3},
      {"jitter_ms", ch.jitter_s * 1e3},
  };
}

ChannelModel channel_from_json(const nlohmann::json& doc) {
  ChannelModel ch;
  try {
    ch.bandwidth_bytes_per_s = doc.value("bandwidth_bits_per_s", ch.bandwidth_bytes_per_s * 8.0) / 8.0;
    ch.propagation_delay_s = doc.value("propagation_delay_ms", 0.0) / 1e3;
    ch.per_message_overhead_s = doc.value("per_message_overhead_ms", 0.0) / 1e3;
    ch.jitter_s = doc.value("jitter_ms", 0.0) / 1e3;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("channel: {}", e.what()));
  }
  ch.validate();
  return ch;
}

double simulate_transfer(std::uint64_t bytes, const ChannelModel& ch, Rng* rng) {
  double jitter = 0.0;
  if (ch.jitter_s > 0.0) {
    if (rng == nullptr) throw ContractError("a jittered channel needs a random stream");
    jitter = rng->uniform(0.0, ch.jitter_s);
  }
  return ch.per_message_overhead_s + ch.propagation_delay_s +
         static_cast<double>(bytes) / ch.bandwidth_bytes_per_s + jitter;
}

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::kLoC: return "LoC";
    case Paradigm::kRoC: return "RoC";
    case Paradigm::kSC: return "SC";
  }
  return "SC";
}

Paradigm paradigm_from_string(const std::string& text) {
  std::string lower;
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "loc") return Paradigm::kLoC;
  if (lower == "roc") return Paradigm::kRoC;
  if (lower == "sc") return Paradigm::kSC;
  throw ConfigError(fmt::format("unknown paradigm '{}' (expected loc, roc, or sc)", text));
}

TransferReport transfer_time_report(Paradigm paradigm, std::uint64_t n_inputs, const Shape& input_shape,
                                    std::uint64_t feature_len, const ChannelModel& ch,
                                    std::span<const std::uint32_t> n_classes, std::uint64_t seed) {
  ch.validate();
  TransferReport r;
  r.paradigm = paradigm;
  r.n_inputs = n_inputs;
  if (paradigm == Paradigm::kLoC) return r;
  const std::uint64_t elements = paradigm == Paradigm::kRoC ? shape_numel(input_shape) : feature_len;
  const wire::PayloadSize request = wire::feature_payload_size(elements);
  r.request_payload_bytes = request.payload_bytes;
  r.request_overhead_bytes = request.overhead_bytes;
  r.response_bytes = wire::prediction_frame_size(n_classes);
  r.payload_seconds = static_cast<double>(n_inputs) * static_cast<double>(request.payload_bytes) / ch.bandwidth_bytes_per_s;
  Rng rng(derive_seed(seed, "jitter"));
  for (std::uint64_t i = 0; i < n_inputs; ++i) {
    r.request_seconds += simulate_transfer(request.total(), ch, &rng);
    r.response_seconds += simulate_transfer(r.response_bytes, ch, &rng);
  }
  r.total_seconds = r.request_seconds + r.response_seconds;
  return r;
}

double overhead_to_match(double target_seconds, std::uint64_t n_messages, std::uint64_t bytes, const ChannelModel& ch) {
  if (n_messages == 0) return 0.0;
  const double n = static_cast<double>(n_messages);
  return (target_seconds - n * static_cast<double>(bytes) / ch.bandwidth_bytes_per_s) / n - ch.propagation_delay_s;
}

// ---------------------------------------------------------------------------
// HeadServer

HeadServer::HeadServer(ModelConfig config, std::vector<Head> heads)
    : config_(std::move(config)), heads_(std::move(heads)) {
  config_.validate();
  if (heads_.empty() || heads_.size() != config_.tasks.size()) throw ContractError("server needs one head per task");
}

HeadServer::HeadServer(ModelConfig config, Backbone backbone, std::vector<Head> heads)
    : HeadServer(std::move(config), std::move(heads)) {
  backbone_ = std::move(backbone);
}

wire::Predictions HeadServer::run_heads(const Tensor& z) const {
  wire::Predictions out;
  for (std::size_t j = 0; j < heads_.size(); ++j) {
    const Tensor logits = head_forward(heads_[j], z);
    out.tasks.push_back({static_cast<std::uint8_t>(j), flatten_feature(logits)});
  }
  return out;
}

std::vector<std::uint8_t> HeadServer::handle(std::span<const std::uint8_t> request) const {
  std::uint64_t id = 0;
  try {
    try {
      id = wire::decode_header(request).request_id;
    } catch (const WireError&) {
    }
    const wire::SplitFrame frame = wire::decode(request);
    if (frame.type == wire::MsgType::kFeatureRequest) {
      const auto& t = std::get<wire::TensorPayload>(frame.body);
      if (t.data.size() != config_.feature_len) {
        return wire::encode(wire::SplitFrame::error(
            id, static_cast<std::uint16_t>(WireErrorCode::kDimension),
            fmt::format("feature has {} elements, heads expect {}", t.data.size(), config_.feature_len)));
      }
      return wire::encode(wire::SplitFrame::prediction_response(id, run_heads(Tensor({t.data.size()}, t.data))));
    }
    if (frame.type == wire::MsgType::kRawInputRequest) {
      if (!backbone_) {
        return wire::encode(wire::SplitFrame::error(id, static_cast<std::uint16_t>(WireErrorCode::kUnsupportedRequest),
                                                    "raw inputs need a server in RoC mode"));
      }
      const auto& t = std::get<wire::TensorPayload>(frame.body);
      if (t.data.size() != config_.input_len()) {
        return wire::encode(wire::SplitFrame::error(
            id, static_cast<std::uint16_t>(WireErrorCode::kDimension),
            fmt::format("input has {} elements, backbone expects {}", t.data.size(), config_.input_len())));
      }
      const Tensor z = backbone_forward(*backbone_, Tensor(config_.input_shape(), t.data));
      return wire::encode(wire::SplitFrame::prediction_response(id, run_heads(z)));
    }
    return wire::encode(wire::SplitFrame::error(id, static_cast<std::uint16_t>(WireErrorCode::kUnsupportedRequest),
                                                "server accepts only request frames"));
  } catch (const WireError& e) {
    return wire::encode(wire::SplitFrame::error(id, static_cast<std::uint16_t>(e.code()), e.what()));
  } catch (const std::exception& e) {
    return wire::encode(wire::SplitFrame::error(id, static_cast<std::uint16_t>(WireErrorCode::kInternal), e.what()));
  }
}

std::vector<std::uint8_t> LoopbackTransport::round_trip(std::span<const std::uint8_t> request) {
  return server_.handle(request);
}

SimulatedTransport::SimulatedTransport(const HeadServer& server, ChannelModel channel, std::uint64_t seed)
    : server_(server), channel_(channel), rng_(derive_seed(seed, "jitter")) {
  channel_.validate();
}

std::vector<std::uint8_t> SimulatedTransport::round_trip(std::span<const std::uint8_t> request) {
  elapsed_ += simulate_transfer(request.size(), channel_, &rng_);
  sent_ += request.size();
  auto response = server_.handle(request);
  elapsed_ += simulate_transfer(response.size(), channel_, &rng_);
  received_ += response.size();
  return response;
}

// ---------------------------------------------------------------------------
// Sockets

namespace {

using Clock = std::chrono::steady_clock;

enum class IoStatus { kOk, kClosed, kTimeout, kStopped, kError };

// Waits until `fd` is readable. `deadline` of nullopt waits forever (polling `stop`).
IoStatus wait_readable(int fd, std::optional<Clock::time_point> deadline, const std::atomic<bool>* stop) {
  for (;;) {
    if (stop != nullptr && stop->load()) return IoStatus::kStopped;
    int slice_ms = 100;
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()).count();
      if (left <= 0) return IoStatus::kTimeout;
      slice_ms = static_cast<int>(std::min<long long>(left, slice_ms));
    }
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, slice_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      return IoStatus::kError;
    }
    if (rc > 0) return IoStatus::kOk;
  }
}

// Reads exactly out.size() bytes. The first byte may wait without a deadline
// when `idle_ok`; everything after it must arrive before the deadline.
IoStatus read_exact(int fd, std::span<std::uint8_t> out, std::chrono::milliseconds timeout, bool idle_ok,
                    const std::atomic<bool>* stop) {
  std::size_t got = 0;
  std::optional<Clock::time_point> deadline;
  if (!idle_ok) deadline = Clock::now() + timeout;
  while (got < out.size()) {
    const IoStatus ready = wait_readable(fd, deadline, got == 0 && idle_ok ? stop : nullptr);
    if (ready != IoStatus::kOk) return ready;
    const ssize_t n = ::recv(fd, out.data() + got, out.size() - got, 0);
    if (n == 0) return IoStatus::kClosed;
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return IoStatus::kError;
    }
    if (got == 0 && !deadline) deadline = Clock::now() + timeout;
    got += static_cast<std::size_t>(n);
  }
  return IoStatus::kOk;
}

bool write_all(int fd, std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

bool write_frame(int fd, std::span<const std::uint8_t> frame) {
  std::uint8_t len[4];
  const auto n = static_cast<std::uint32_t>(frame.size());
  for (int i = 0; i < 4; ++i) len[i] = static_cast<std::uint8_t>(n >> (8 * i));
  return write_all(fd, len) && write_all(fd, frame);
}

std::uint32_t read_len(const std::uint8_t (&len)[4]) {
  return static_cast<std::uint32_t>(len[0]) | (static_cast<std::uint32_t>(len[1]) << 8) |
         (static_cast<std::uint32_t>(len[2]) << 16) | (static_cast<std::uint32_t>(len[3]) << 24);
}

std::vector<std::uint8_t> error_frame(WireErrorCode code, const std::string& message) {
  return wire::encode(wire::SplitFrame::error(0, static_cast<std::uint16_t>(code), message));
}

}  // namespace

std::string SocketAddress::to_string() const { return fmt::format("{}:{}", host, port); }

SocketAddress parse_address(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ConfigError(fmt::format("address '{}' is not HOST:PORT", text));
  }
  SocketAddress addr;
  addr.host = text.substr(0, colon);
  try {
    const unsigned long port = std::stoul(text.substr(colon + 1));
    if (port > 65535) throw std::out_of_range("port");
    addr.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("address '{}' has an invalid port", text));
  }
  return addr;
}

namespace {

sockaddr_in resolve(const SocketAddress& address) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(address.port);
  if (::inet_pton(AF_INET, address.host.c_str(), &sa.sin_addr) == 1) return sa;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(address.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw TransportError(fmt::format("cannot resolve host '{}'", address.host));
  }
  sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return sa;
}

}  // namespace

SocketTransport::SocketTransport(const SocketAddress& address, std::chrono::milliseconds timeout)
    : address_(address), timeout_(timeout) {
  const sockaddr_in sa = resolve(address);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError(fmt::format("socket(): {}", std::strerror(errno)));
  if (::connect(fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0) {
    const int err = errno;
    ::close(fd_);
    fd_ = -1;
    throw TransportError(fmt::format("cannot connect to {}: {}", address.to_string(), std::strerror(err)));
  }
  const int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

SocketTransport::~SocketTransport() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketTransport::send_raw(std::span<const std::uint8_t> bytes) {
  if (!write_all(fd_, bytes)) throw TransportError(fmt::format("send to {} failed", address_.to_string()));
}

std::vector<std::uint8_t> SocketTransport::receive() {
  std::uint8_t len[4];
  auto status = read_exact(fd_, len, timeout_, false, nullptr);
  if (status == IoStatus::kOk) {
    const std::uint32_t n = read_len(len);
    if (n > kMaxSocketFrame) throw TransportError(fmt::format("response of {} bytes exceeds the frame limit", n));
    std::vector<std::uint8_t> frame(n);
    status = read_exact(fd_, frame, timeout_, false, nullptr);
    if (status == IoStatus::kOk) return frame;
  }
  switch (status) {
    case IoStatus::kTimeout:
      throw TransportError(fmt::format("timed out after {} ms waiting for {}", timeout_.count(), address_.to_string()));
    case IoStatus::kClosed:
      throw TransportError(fmt::format("{} closed the connection", address_.to_string()));
    default:
      throw TransportError(fmt::format("receive from {} failed", address_.to_string()));
  }
}

std::vector<std::uint8_t> SocketTransport::round_trip(std::span<const std::uint8_t> request) {
  if (request.size() > kMaxSocketFrame) throw TransportError("request exceeds the frame limit");
  if (!write_frame(fd_, request)) throw TransportError(fmt::format("send to {} failed", address_.to_string()));
  return receive();
}

SocketServer::SocketServer(const HeadServer& server, const SocketAddress& listen, std::chrono::milliseconds timeout)
    : server_(server), timeout_(timeout) {
  const sockaddr_in sa = resolve(listen);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw TransportError(fmt::format("socket(): {}", std::strerror(errno)));
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&sa), sizeof(sa)) != 0 || ::listen(listen_fd_, 64) != 0) {
    const int err = errno;
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw TransportError(fmt::format("cannot listen on {}: {}", listen.to_string(), std::strerror(err)));
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

SocketServer::~SocketServer() {
  shutdown();
  std::lock_guard lock(threads_mutex_);
  for (auto& t : handlers_) {
    if (t.joinable()) t.join();
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void SocketServer::run() {
  spdlog::info("serving {} heads on port {}", server_.config().tasks.size(), port_);
  while (!stop_.load()) {
    if (wait_readable(listen_fd_, std::nullopt, &stop_) != IoStatus::kOk) break;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(threads_mutex_);
    handlers_.emplace_back([this, fd] { handle_connection(fd); });
  }
  std::lock_guard lock(threads_mutex_);
  for (auto& t : handlers_) {
    if (t.joinable()) t.join();
  }
  handlers_.clear();
  spdlog::info("server drained after {} requests", served_.load());
}

void SocketServer::handle_connection(int fd) {
  for (;;) {
    std::uint8_t len[4];
    IoStatus status = read_exact(fd, len, timeout_, true, &stop_);
    if (status == IoStatus::kOk) {
      const std::uint32_t n = read_len(len);
      if (n > kMaxSocketFrame) {
        // The stream cannot be resynchronized past an absurd length.
        write_frame(fd, error_frame(WireErrorCode::kFraming, fmt::format("frame of {} bytes exceeds the limit", n)));
        break;
      }
      std::vector<std::uint8_t> frame(n);
      status = read_exact(fd, frame, timeout_, false, nullptr);
      if (status == IoStatus::kOk) {
        const auto response = server_.handle(frame);
        served_.fetch_add(1);
        if (!write_frame(fd, response)) break;
        continue;
      }
    }
    if (status == IoStatus::kTimeout) {
      write_frame(fd, error_frame(WireErrorCode::kTimeout, "timed out waiting for the rest of a frame"));
    }
    break;
  }
  ::close(fd);
}

// ---------------------------------------------------------------------------
// EdgeClient

EdgeClient::EdgeClient(Backbone backbone, Transport& transport)
    : backbone_(std::move(backbone)), transport_(transport) {
  input_shape_ = backbone_->input_shape;
}

EdgeClient::EdgeClient(Shape input_shape, Transport& transport)
    : input_shape_(std::move(input_shape)), transport_(transport) {}

std::vector<Tensor> EdgeClient::infer(const Tensor& x) {
  const std::uint64_t id = next_id_++;
  wire::TensorPayload payload;
  wire::SplitFrame request;
  if (backbone_) {
    payload.data = flatten_feature(backbone_forward(*backbone_, x));
    payload.dims = {static_cast<std::uint32_t>(payload.data.size())};
    request = wire::SplitFrame::feature_request(id, std::move(payload));
  } else {
    if (x.numel() != shape_numel(input_shape_)) {
      throw DimensionError(fmt::format("input has shape {}, expected {}", shape_to_string(x.shape()),
                                       shape_to_string(input_shape_)));
    }
    payload.data = flatten_feature(x);
    payload.dims = {static_cast<std::uint32_t>(payload.data.size())};
    request = wire::SplitFrame::raw_input_request(id, std::move(payload));
  }
  const auto response_bytes = transport_.round_trip(wire::encode(request));
  const wire::SplitFrame response = wire::decode(response_bytes);
  if (response.type == wire::MsgType::kError) {
    const auto& err = std::get<wire::ErrorPayload>(response.body);
    throw RemoteError(fmt::format("server error {}: {}", err.code, err.message), err.code);
  }
  if (response.request_id != id) {
    throw ProtocolError(fmt::format("response id {} does not match request id {}", response.request_id, id),
                        WireErrorCode::kRequestMismatch);
  }
  if (response.type != wire::MsgType::kPredictionResponse) {
    throw ProtocolError("server replied with a request frame", WireErrorCode::kUnsupportedRequest);
  }
  auto tasks = std::get<wire::Predictions>(response.body).tasks;
  std::sort(tasks.begin(), tasks.end(), [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
  std::vector<Tensor> logits;
  for (auto& t : tasks) {
    const std::size_t n = t.logits.size();
    logits.emplace_back(Shape{n}, std::move(t.logits));
  }
  return logits;
}

}  // namespace mtlsplit
