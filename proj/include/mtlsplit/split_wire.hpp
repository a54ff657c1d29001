// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mtlsplit::wire {

// Layout, all little-endian, no padding:
//   magic "MTLS" | version u8 | msg_type u8 | request_id u64 | body_len u32 | body
// FeatureRequest / RawInputRequest body:
//   ndims u8 | dims u32 x ndims | dtype u8 (0 = f32) | data f32 x prod(dims)
// PredictionResponse body:
//   n_tasks u8 | per task: task_id u8 | n_classes u16 | logits f32 x n_classes
// Error body:
//   code u16 | utf8_len u16 | message bytes

inline constexpr char kMagic[4] = {'M', 'T', 'L', 'S'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 18;
inline constexpr std::uint8_t kDtypeF32 = 0;

enum class MsgType : std::uint8_t {
  kFeatureRequest = 0,
  kPredictionResponse = 1,
  kRawInputRequest = 2,
  kError = 3,
};

/// A dense f32 tensor: the flattened feature or the raw input.
struct TensorPayload {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct TaskLogits {
  std::uint8_t task_id = 0;
  std::vector<float> logits;
};

struct Predictions {
  std::vector<TaskLogits> tasks;
};

struct ErrorPayload {
  std::uint16_t code = 0;
  std::string message;
};

struct SplitFrame {
  std::uint8_t version = kVersion;
  MsgType type = MsgType::kFeatureRequest;
  std::uint64_t request_id = 0;
  std::variant<TensorPayload, Predictions, ErrorPayload> body;

  static SplitFrame feature_request(std::uint64_t id, TensorPayload payload);
  static SplitFrame raw_input_request(std::uint64_t id, TensorPayload payload);
  static SplitFrame prediction_response(std::uint64_t id, Predictions predictions);
  static SplitFrame error(std::uint64_t id, std::uint16_t code, std::string message);
};

/// Same type, id, and body with identical float bit patterns.
bool bitwise_equal(const SplitFrame& a, const SplitFrame& b);

/// Throws EncodingError when the body does not match the message type or
/// cannot be represented (dims/data mismatch, field overflow).
std::vector<std::uint8_t> encode(const SplitFrame& frame);

/// Inverse of encode. Every failure is a WireError subclass:
/// ProtocolError (magic), VersionError (version/type), FramingError
/// (length/truncation/trailing bytes), UnsupportedDtypeError.
SplitFrame decode(std::span<const std::uint8_t> bytes);

/// Parses just the fixed header; used to echo request ids on failure.
struct FrameHeader {
  std::uint8_t version = 0;
  std::uint8_t type = 0;
  std::uint64_t request_id = 0;
  std::uint32_t body_len = 0;
};
FrameHeader decode_header(std::span<const std::uint8_t> bytes);

/// Wire cost of a 1-D f32 feature of `feature_len` elements.
struct PayloadSize {
  std::uint64_t payload_bytes = 0;   // 4 * feature_len
  std::uint64_t overhead_bytes = 0;  // header + tensor metadata
  std::uint64_t total() const { return payload_bytes + overhead_bytes; }
};
PayloadSize feature_payload_size(std::uint64_t feature_len);

/// Wire cost of an f32 tensor with `ndims` axes and `elements` values.
PayloadSize tensor_frame_size(std::size_t ndims, std::uint64_t elements);

/// Encoded size of a PredictionResponse carrying the given class counts.
std::uint64_t prediction_frame_size(std::span<const std::uint32_t> n_classes);

}  // namespace mtlsplit::wire
