// SPDX-License-Identifier: Apache-2.0
//
// Byte-exact frames exchanged by workers and the coordinator. All integers
// are little-endian.
//
//   TensorMsg  "SNNM" u16 version, u16 step, u8 src, u8 dst, u8 dtype,
//              u16 channels_sent, u16 channels_total, u16 height, u16 width,
//              u32 payload_len, payload (channel-major, then row-major)
//   Handshake  "SNNH" u16 version, u64 policy hash, u8 node_id, u8 nodes
//   Request    "SNNQ" u16 version, u32 request id
//   Error      "SNNE" u16 version, u16 step, u32 len, UTF-8 text
//   Timing     "SNNT" u16 version, u32 len, JSON text
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "snn/tensor.hpp"

namespace snn {

enum class WireDtype : std::uint8_t { kF32 = 0, kF16 = 1 };

int dtype_bytes(WireDtype d);
std::string to_string(WireDtype d);
WireDtype parse_dtype(const std::string& s);

constexpr std::uint16_t kWireVersion = 1;
constexpr std::size_t kMsgHeaderBytes = 23;
/// step_index of coordinator request and response messages.
constexpr std::uint16_t kControlStep = 0xFFFF;
/// node_id the coordinator uses in handshakes and messages.
constexpr std::uint8_t kCoordinatorId = 0xFF;

struct MsgHeader {
  std::uint16_t version = kWireVersion;
  std::uint16_t step = 0;
  std::uint8_t src = 0;
  std::uint8_t dst = 0;
  WireDtype dtype = WireDtype::kF32;
  std::uint16_t channels_sent = 0;
  std::uint16_t channels_total = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint32_t payload_len = 0;

  /// channels_sent * height * width * dtype bytes.
  std::uint64_t expected_payload() const;
  friend bool operator==(const MsgHeader&, const MsgHeader&) = default;
};

/// Serializes the first `channels_sent` channels of `chunk` (batch 1).
std::vector<std::uint8_t> encode_msg(const Tensor4& chunk, int channels_sent, std::uint16_t step, std::uint8_t src,
                                     std::uint8_t dst, WireDtype dtype);

struct DecodedMsg {
  MsgHeader header;
  Tensor4 chunk;  // (1, channels_total, h, w); unsent channels are zero
};

/// Parses and validates a 23-byte header. Throws FramingError.
MsgHeader decode_header(std::span<const std::uint8_t> bytes);
/// Parses a complete frame. Rejects bad magic, version, dtype, lengths,
/// trailing bytes, and non-finite payload values with FramingError.
DecodedMsg decode_msg(std::span<const std::uint8_t> bytes);

struct Handshake {
  std::uint64_t policy_hash = 0;
  std::uint8_t node_id = 0;
  std::uint8_t nodes = 0;
  friend bool operator==(const Handshake&, const Handshake&) = default;
};
std::vector<std::uint8_t> encode_handshake(const Handshake& h);
Handshake decode_handshake(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_request(std::uint32_t request);
std::uint32_t decode_request(std::span<const std::uint8_t> bytes);

struct ErrorFrame {
  std::uint16_t step = kControlStep;
  std::string text;
};
std::vector<std::uint8_t> encode_error(const ErrorFrame& e);
ErrorFrame decode_error(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_timing(const std::string& json);
std::string decode_timing(std::span<const std::uint8_t> bytes);

enum class FrameKind { kTensor, kHandshake, kRequest, kError, kTiming };
FrameKind frame_kind(std::span<const std::uint8_t> bytes);

/// Reads exactly n bytes into dst or throws.
using ReadExact = std::function<void(std::uint8_t* dst, std::size_t n)>;
/// Reads one complete frame of any kind from a byte stream.
std::vector<std::uint8_t> read_frame(const ReadExact& read, std::size_t max_payload = 1u << 28);

}  // namespace snn
