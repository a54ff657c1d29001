// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "mtlsplit/error.hpp"
#include "mtlsplit/rng.hpp"
#include "mtlsplit/split_wire.hpp"

using namespace mtlsplit;
using namespace mtlsplit::wire;

namespace {

using Bytes = std::vector<std::uint8_t>;

float random_float(Rng& rng) {
  // Arbitrary bit patterns exercise NaN payloads, infinities, and subnormals.
  if (rng.below(4) == 0) {
    const auto bits = static_cast<std::uint32_t>(rng.next_u64());
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  return static_cast<float>(rng.uniform(-100.0, 100.0));
}

TensorPayload random_tensor_payload(Rng& rng) {
  TensorPayload p;
  const auto kind = rng.below(10);
  if (kind == 0) {
    p.dims = {0};  // empty feature
  } else if (kind == 1) {
    p.dims.assign(255, 1);  // maximum rank
    p.dims[rng.below(255)] = static_cast<std::uint32_t>(1 + rng.below(8));
  } else {
    const auto rank = 1 + rng.below(4);
    for (std::uint64_t i = 0; i < rank; ++i) p.dims.push_back(static_cast<std::uint32_t>(1 + rng.below(7)));
  }
  std::size_t n = 1;
  for (auto d : p.dims) n *= d;
  for (std::size_t i = 0; i < n; ++i) p.data.push_back(random_float(rng));
  return p;
}

SplitFrame random_frame(Rng& rng) {
  const std::uint64_t id = rng.below(3) == 0 ? ~std::uint64_t{0} : rng.next_u64();
  switch (rng.below(4)) {
    case 0: return SplitFrame::feature_request(id, random_tensor_payload(rng));
    case 1: return SplitFrame::raw_input_request(id, random_tensor_payload(rng));
    case 2: {
      Predictions p;
      const auto n = rng.below(6);
      for (std::uint64_t j = 0; j < n; ++j) {
        TaskLogits t;
        t.task_id = static_cast<std::uint8_t>(j);
        const auto c = rng.below(12);
        for (std::uint64_t k = 0; k < c; ++k) t.logits.push_back(random_float(rng));
        p.tasks.push_back(std::move(t));
      }
      return SplitFrame::prediction_response(id, std::move(p));
    }
    default: {
      std::string msg;
      const auto len = rng.below(40);
      for (std::uint64_t i = 0; i < len; ++i) msg.push_back(static_cast<char>('a' + rng.below(26)));
      return SplitFrame::error(id, static_cast<std::uint16_t>(rng.below(65536)), msg);
    }
  }
}

template <typename E>
void expect_decode_error(const Bytes& bytes) {
  EXPECT_THROW(decode(bytes), E);
}

}  // namespace

TEST(Encode, MinimalFeatureFrameIsLayoutForced) {
  const Bytes b = encode(SplitFrame::feature_request(0, {{0}, {}}));
  // magic 4 + version 1 + type 1 + id 8 + body_len 4 + ndims 1 + one u32 dim + dtype 1.
  const Bytes expected{'M', 'T', 'L', 'S', 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 6, 0, 0, 0, 1, 0, 0, 0, 0, 0};
  EXPECT_EQ(b, expected);
  EXPECT_EQ(b.size(), 24u);
}

TEST(Encode, OnePointZeroIsLittleEndianIeee) {
  const Bytes b = encode(SplitFrame::feature_request(7, {{1}, {1.0f}}));
  ASSERT_EQ(b.size(), 28u);
  EXPECT_EQ(b[6], 7);  // request id, least significant byte first
  EXPECT_EQ(Bytes(b.begin() + 24, b.end()), (Bytes{0x00, 0x00, 0x80, 0x3F}));
}

TEST(Encode, LengthMatchesHeaderPlusBody) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Bytes b = encode(random_frame(rng));
    const FrameHeader h = decode_header(b);
    EXPECT_EQ(b.size(), kHeaderSize + h.body_len);
  }
}

TEST(Encode, InconsistentBodyRejected) {
  EXPECT_THROW(encode(SplitFrame::feature_request(1, {{2, 2}, {1, 2, 3}})), EncodingError);
  SplitFrame mismatched = SplitFrame::feature_request(1, {{1}, {1}});
  mismatched.type = MsgType::kPredictionResponse;
  EXPECT_THROW(encode(mismatched), EncodingError);
  EXPECT_THROW(encode(SplitFrame::error(1, 2, std::string(70000, 'x'))), EncodingError);
}

TEST(Decode, FuzzRoundTripIsBitwiseLossless) {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const SplitFrame f = random_frame(rng);
    const Bytes b = encode(f);
    const SplitFrame back = decode(b);
    ASSERT_TRUE(bitwise_equal(back, f)) << "frame " << i;
    ASSERT_EQ(back.request_id, f.request_id);
    ASSERT_EQ(encode(back), b);
  }
}

TEST(Decode, BadMagic) {
  expect_decode_error<ProtocolError>(Bytes{'X', 'X', 'X', 'X', 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  expect_decode_error<ProtocolError>(Bytes{'M', 'T'});
  expect_decode_error<ProtocolError>(Bytes{});
}

TEST(Decode, UnknownVersionOrType) {
  Bytes b = encode(SplitFrame::feature_request(1, {{1}, {2.0f}}));
  Bytes v = b;
  v[4] = 2;
  expect_decode_error<VersionError>(v);
  Bytes t = b;
  t[5] = 9;
  expect_decode_error<VersionError>(t);
}

TEST(Decode, DeclaredLengthLongerThanBody) {
  Bytes b = encode(SplitFrame::feature_request(1, {{1}, {2.0f}}));
  b.resize(kHeaderSize);
  b[14] = 100;
  b[15] = b[16] = b[17] = 0;
  b.resize(kHeaderSize + 10, 0);
  expect_decode_error<FramingError>(b);
}

TEST(Decode, TruncatedAndTrailingBytes) {
  const Bytes b = encode(SplitFrame::prediction_response(3, {{{0, {1, 2}}, {1, {3}}}}));
  for (std::size_t cut = 6; cut < b.size(); ++cut) {
    EXPECT_THROW(decode(Bytes(b.begin(), b.begin() + cut)), WireError) << cut;
  }
  Bytes longer = b;
  longer.push_back(0);
  expect_decode_error<FramingError>(longer);
  // Body length consistent with the buffer but the body itself claims more logits.
  Bytes inner = b;
  inner[kHeaderSize + 2] = 9;
  expect_decode_error<FramingError>(inner);
}

TEST(Decode, NonFloatDtype) {
  Bytes b = encode(SplitFrame::raw_input_request(1, {{2}, {1.0f, 2.0f}}));
  b[kHeaderSize + 1 + 4] = 1;
  expect_decode_error<UnsupportedDtypeError>(b);
}

TEST(Decode, ErrorClassesCarryCodes) {
  try {
    decode(Bytes{'X', 'X', 'X', 'X'});
  } catch (const WireError& e) {
    EXPECT_EQ(e.code(), WireErrorCode::kBadMagic);
  }
  Bytes b = encode(SplitFrame::feature_request(1, {{1}, {2.0f}}));
  b[kHeaderSize + 5] = 3;
  try {
    decode(b);
  } catch (const WireError& e) {
    EXPECT_EQ(e.code(), WireErrorCode::kUnsupportedDtype);
  }
}

TEST(Decode, TotalOnArbitraryBytes) {
  Rng rng(77);
  std::vector<Bytes> seeds;
  for (int i = 0; i < 50; ++i) seeds.push_back(encode(random_frame(rng)));
  for (int i = 0; i < 5000; ++i) {
    Bytes b = seeds[rng.below(seeds.size())];
    const auto edits = 1 + rng.below(4);
    for (std::uint64_t e = 0; e < edits && !b.empty(); ++e) {
      switch (rng.below(3)) {
        case 0: b[rng.below(b.size())] = static_cast<std::uint8_t>(rng.next_u64()); break;
        case 1: b.resize(rng.below(b.size() + 1)); break;
        default: b.push_back(static_cast<std::uint8_t>(rng.next_u64())); break;
      }
    }
    try {
      decode(b);
    } catch (const WireError&) {
    } catch (const std::exception& e) {
      FAIL() << "unclassified failure: " << e.what();
    }
  }
}

TEST(PayloadSize, Features) {
  EXPECT_EQ(feature_payload_size(0).payload_bytes, 0u);
  EXPECT_EQ(feature_payload_size(0).overhead_bytes, 24u);
  EXPECT_EQ(feature_payload_size(55'300).payload_bytes, 221'200u);
  EXPECT_NEAR(feature_payload_size(55'300).payload_bytes / 1048576.0, 0.21, 0.005);
  EXPECT_EQ(feature_payload_size(406'060).payload_bytes, 1'624'240u);
  EXPECT_NEAR(feature_payload_size(406'060).payload_bytes / 1048576.0, 1.55, 0.005);
  EXPECT_EQ(feature_payload_size(10).total(), encode(SplitFrame::feature_request(1, {{10}, std::vector<float>(10)})).size());
}

TEST(PayloadSize, PredictionFrame) {
  const std::vector<std::uint32_t> classes{6, 4, 4};
  Predictions p;
  for (std::uint8_t j = 0; j < 3; ++j) p.tasks.push_back({j, std::vector<float>(classes[j])});
  EXPECT_EQ(prediction_frame_size(classes), encode(SplitFrame::prediction_response(1, p)).size());
}
