// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include "mtlsplit/split_wire.hpp"

#include <bit>
#include <cstring>
#include <limits>

#include <fmt/format.h>

#include "mtlsplit/binary_io.hpp"
#include "mtlsplit/error.hpp"

namespace mtlsplit::wire {

namespace {

bool is_tensor_type(MsgType t) { return t == MsgType::kFeatureRequest || t == MsgType::kRawInputRequest; }

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void encode_tensor(ByteWriter& w, const TensorPayload& t) {
  if (t.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw EncodingError(fmt::format("{} dims exceed the u8 ndims field", t.dims.size()));
  }
  std::uint64_t n = 1;
  for (std::uint32_t d : t.dims) n *= d;
  if (n != t.data.size()) {
    throw EncodingError(fmt::format("dims describe {} elements but {} values are present", n, t.data.size()));
  }
  w.u8(static_cast<std::uint8_t>(t.dims.size()));
  for (std::uint32_t d : t.dims) w.u32(d);
  w.u8(kDtypeF32);
  w.f32s(t.data);
}

void encode_predictions(ByteWriter& w, const Predictions& p) {
  if (p.tasks.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw EncodingError(fmt::format("{} tasks exceed the u8 n_tasks field", p.tasks.size()));
  }
  w.u8(static_cast<std::uint8_t>(p.tasks.size()));
  for (const auto& t : p.tasks) {
    if (t.logits.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw EncodingError(fmt::format("{} classes exceed the u16 n_classes field", t.logits.size()));
    }
    w.u8(t.task_id);
    w.u16(static_cast<std::uint16_t>(t.logits.size()));
    w.f32s(t.logits);
  }
}

void encode_error(ByteWriter& w, const ErrorPayload& e) {
  if (e.message.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw EncodingError("error message exceeds the u16 length field");
  }
  w.u16(e.code);
  w.u16(static_cast<std::uint16_t>(e.message.size()));
  w.raw(e.message);
}

TensorPayload decode_tensor(ByteReader<FramingError>& r) {
  TensorPayload t;
  const std::size_t ndims = r.u8();
  r.need(ndims * 4 + 1);
  t.dims.resize(ndims);
  // Compare against the bytes actually present so huge dims cannot trigger huge allocations.
  std::uint64_t n = 1;
  bool overflow = false;
  for (auto& d : t.dims) {
    d = r.u32();
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) overflow = true;
    n *= d;
  }
  const std::uint8_t dtype = r.u8();
  if (dtype != kDtypeF32) throw UnsupportedDtypeError(fmt::format("dtype {} is not supported (only 0 = f32)", dtype));
  if (overflow || n > r.remaining() / 4) {
    throw FramingError(fmt::format("tensor declares {} elements but only {} bytes remain", n, r.remaining()));
  }
  t.data.resize(static_cast<std::size_t>(n));
  r.f32s(t.data);
  return t;
}

Predictions decode_predictions(ByteReader<FramingError>& r) {
  Predictions p;
  const std::size_t n_tasks = r.u8();
  for (std::size_t i = 0; i < n_tasks; ++i) {
    TaskLogits t;
    t.task_id = r.u8();
    const std::size_t classes = r.u16();
    r.need(classes * 4);
    t.logits.resize(classes);
    r.f32s(t.logits);
    p.tasks.push_back(std::move(t));
  }
  return p;
}

ErrorPayload decode_error(ByteReader<FramingError>& r) {
  ErrorPayload e;
  e.code = r.u16();
  e.message = r.text(r.u16());
  return e;
}

}  // namespace

SplitFrame SplitFrame::feature_request(std::uint64_t id, TensorPayload payload) {
  return SplitFrame{kVersion, MsgType::kFeatureRequest, id, std::move(payload)};
}

SplitFrame SplitFrame::raw_input_request(std::uint64_t id, TensorPayload payload) {
  return SplitFrame{kVersion, MsgType::kRawInputRequest, id, std::move(payload)};
}

SplitFrame SplitFrame::prediction_response(std::uint64_t id, Predictions predictions) {
  return SplitFrame{kVersion, MsgType::kPredictionResponse, id, std::move(predictions)};
}

SplitFrame SplitFrame::error(std::uint64_t id, std::uint16_t code, std::string message) {
  return SplitFrame{kVersion, MsgType::kError, id, ErrorPayload{code, std::move(message)}};
}

bool bitwise_equal(const SplitFrame& a, const SplitFrame& b) {
  if (a.version != b.version || a.type != b.type || a.request_id != b.request_id) return false;
  if (a.body.index() != b.body.index()) return false;
  if (const auto* ta = std::get_if<TensorPayload>(&a.body)) {
    const auto& tb = std::get<TensorPayload>(b.body);
    return ta->dims == tb.dims && same_bits(ta->data, tb.data);
  }
  if (const auto* pa = std::get_if<Predictions>(&a.body)) {
    const auto& pb = std::get<Predictions>(b.body);
    if (pa->tasks.size() != pb.tasks.size()) return false;
    for (std::size_t i = 0; i < pa->tasks.size(); ++i) {
      if (pa->tasks[i].task_id != pb.tasks[i].task_id || !same_bits(pa->tasks[i].logits, pb.tasks[i].logits)) {
        return false;
      }
    }
    return true;
  }
  const auto& ea = std::get<ErrorPayload>(a.body);
  const auto& eb = std::get<ErrorPayload>(b.body);
  return ea.code == eb.code && ea.message == eb.message;
}

std::vector<std::uint8_t> encode(const SplitFrame& frame) {
  const bool ok = (is_tensor_type(frame.type) && std::holds_alternative<TensorPayload>(frame.body)) ||
                  (frame.type == MsgType::kPredictionResponse && std::holds_alternative<Predictions>(frame.body)) ||
                  (frame.type == MsgType::kError && std::holds_alternative<ErrorPayload>(frame.body));
  if (!ok) {
    throw EncodingError(fmt::format("body does not match message type {}", static_cast<int>(frame.type)));
  }
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u8(frame.version);
  w.u8(static_cast<std::uint8_t>(frame.type));
  w.u64(frame.request_id);
  const std::size_t len_offset = w.size();
  w.u32(0);
  std::visit(
      [&](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, TensorPayload>) {
          encode_tensor(w, body);
        } else if constexpr (std::is_same_v<T, Predictions>) {
          encode_predictions(w, body);
        } else {
          encode_error(w, body);
        }
      },
      frame.body);
  const std::size_t body_len = w.size() - kHeaderSize;
  if (body_len > std::numeric_limits<std::uint32_t>::max()) throw EncodingError("body exceeds the u32 length field");
  w.patch_u32(len_offset, static_cast<std::uint32_t>(body_len));
  return std::move(w).take();
}

FrameHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ProtocolError("bad magic (expected \"MTLS\")");
  }
  ByteReader<FramingError> r(bytes, "frame header");
  r.raw(4);
  FrameHeader h;
  h.version = r.u8();
  if (h.version != kVersion) throw VersionError(fmt::format("unsupported protocol version {}", h.version));
  h.type = r.u8();
  if (h.type > static_cast<std::uint8_t>(MsgType::kError)) {
    throw VersionError(fmt::format("unknown message type {}", h.type));
  }
  h.request_id = r.u64();
  h.body_len = r.u32();
  return h;
}

SplitFrame decode(std::span<const std::uint8_t> bytes) {
  const FrameHeader h = decode_header(bytes);
  const std::size_t available = bytes.size() - kHeaderSize;
  if (available < h.body_len) {
    throw FramingError(fmt::format("declared body length {} but only {} bytes present", h.body_len, available));
  }
  if (available > h.body_len) {
    throw FramingError(fmt::format("{} trailing bytes after a {}-byte body", available - h.body_len, h.body_len));
  }
  ByteReader<FramingError> r(bytes.subspan(kHeaderSize), "frame body");
  SplitFrame frame;
  frame.version = h.version;
  frame.type = static_cast<MsgType>(h.type);
  frame.request_id = h.request_id;
  if (is_tensor_type(frame.type)) {
    frame.body = decode_tensor(r);
  } else if (frame.type == MsgType::kPredictionResponse) {
    frame.body = decode_predictions(r);
  } else {
    frame.body = decode_error(r);
  }
  if (!r.done()) throw FramingError(fmt::format("{} unused bytes inside the declared body", r.remaining()));
  return frame;
}

PayloadSize tensor_frame_size(std::size_t ndims, std::uint64_t elements) {
  return {4 * elements, kHeaderSize + 1 + 4 * ndims + 1};
}

PayloadSize feature_payload_size(std::uint64_t feature_len) { return tensor_frame_size(1, feature_len); }

std::uint64_t prediction_frame_size(std::span<const std::uint32_t> n_classes) {
  std::uint64_t size = kHeaderSize + 1;
  for (std::uint32_t c : n_classes) size += 1 + 2 + 4ULL * c;
  return size;
}

}  // namespace mtlsplit::wire
