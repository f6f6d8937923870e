// SPDX-License-Identifier: Apache-2.0
#include "snn/wire.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "snn/error.hpp"
#include "snn/half.hpp"

namespace snn {

int dtype_bytes(WireDtype d) {
  switch (d) {
    case WireDtype::kF32:
      return 4;
    case WireDtype::kF16:
      return 2;
  }
  throw ConfigError("unknown wire dtype");
}

std::string to_string(WireDtype d) { return d == WireDtype::kF16 ? "f16" : "f32"; }

WireDtype parse_dtype(const std::string& s) {
  if (s == "f32") return WireDtype::kF32;
  if (s == "f16") return WireDtype::kF16;
  throw ConfigError("unknown dtype '" + s + "' (expected f32 or f16)");
}

std::uint64_t MsgHeader::expected_payload() const {
  return static_cast<std::uint64_t>(channels_sent) * height * width * dtype_bytes(dtype);
}

namespace {

constexpr char kTensorMagic[4] = {'S', 'N', 'N', 'M'};
constexpr char kHandshakeMagic[4] = {'S', 'N', 'N', 'H'};
constexpr char kRequestMagic[4] = {'S', 'N', 'N', 'Q'};
constexpr char kErrorMagic[4] = {'S', 'N', 'N', 'E'};
constexpr char kTimingMagic[4] = {'S', 'N', 'N', 'T'};
constexpr std::size_t kHandshakeBytes = 16;
constexpr std::size_t kRequestBytes = 10;

class Writer {
 public:
  explicit Writer(std::size_t reserve = 0) { out_.reserve(reserve); }
  void magic(const char (&m)[4]) { out_.insert(out_.end(), m, m + 4); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void text(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t pos() const noexcept { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FramingError(std::string("truncated frame: missing ") + what, pos_);
  }
  void magic(const char (&m)[4]) {
    need(4, "magic");
    if (std::memcmp(b_.data() + pos_, m, 4) != 0) throw FramingError("bad magic", pos_);
    pos_ += 4;
  }
  std::uint8_t u8() {
    need(1, "field");
    return b_[pos_++];
  }
  std::uint16_t u16() {
    need(2, "field");
    const std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4, "field");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "field");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  void version() {
    const std::size_t at = pos_;
    if (u16() != kWireVersion) throw FramingError("unsupported frame version", at);
  }
  std::string text(std::size_t n) {
    need(n, "text");
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void end() const {
    if (pos_ != b_.size()) throw FramingError("trailing bytes after frame", pos_);
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_msg(const Tensor4& chunk, int channels_sent, std::uint16_t step, std::uint8_t src,
                                     std::uint8_t dst, WireDtype dtype) {
  if (chunk.n() != 1) throw ShapeError("encode_msg: batch must be 1, got " + std::to_string(chunk.n()));
  if (channels_sent < 0 || channels_sent > chunk.c()) throw ShapeError("encode_msg: channels_sent out of range");
  if (chunk.c() > 0xFFFF || chunk.h() > 0xFFFF || chunk.w() > 0xFFFF) throw ShapeError("encode_msg: dims exceed u16");
  MsgHeader h;
  h.step = step;
  h.src = src;
  h.dst = dst;
  h.dtype = dtype;
  h.channels_sent = static_cast<std::uint16_t>(channels_sent);
  h.channels_total = static_cast<std::uint16_t>(chunk.c());
  h.height = static_cast<std::uint16_t>(chunk.h());
  h.width = static_cast<std::uint16_t>(chunk.w());
  const std::uint64_t payload = h.expected_payload();
  if (payload > 0xFFFFFFFFu) throw ShapeError("encode_msg: payload exceeds u32");
  h.payload_len = static_cast<std::uint32_t>(payload);

  Writer w(kMsgHeaderBytes + payload);
  w.magic(kTensorMagic);
  w.u16(h.version);
  w.u16(h.step);
  w.u8(h.src);
  w.u8(h.dst);
  w.u8(static_cast<std::uint8_t>(h.dtype));
  w.u16(h.channels_sent);
  w.u16(h.channels_total);
  w.u16(h.height);
  w.u16(h.width);
  w.u32(h.payload_len);
  const std::size_t n = static_cast<std::size_t>(channels_sent) * chunk.h() * chunk.w();
  const float* src_data = chunk.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == WireDtype::kF32) {
      w.u32(std::bit_cast<std::uint32_t>(src_data[i]));
    } else {
      w.u16(float_to_half(src_data[i]));
    }
  }
  return w.take();
}

MsgHeader decode_header(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kTensorMagic);
  r.version();
  MsgHeader h;
  h.step = r.u16();
  h.src = r.u8();
  h.dst = r.u8();
  const std::size_t dtype_at = r.pos();
  const std::uint8_t dt = r.u8();
  if (dt > 1) throw FramingError("unknown dtype code " + std::to_string(dt), dtype_at);
  h.dtype = static_cast<WireDtype>(dt);
  const std::size_t sent_at = r.pos();
  h.channels_sent = r.u16();
  h.channels_total = r.u16();
  if (h.channels_sent > h.channels_total) throw FramingError("channels_sent exceeds channels_total", sent_at);
  h.height = r.u16();
  h.width = r.u16();
  const std::size_t len_at = r.pos();
  h.payload_len = r.u32();
  if (h.payload_len != h.expected_payload()) {
    throw FramingError("payload_len " + std::to_string(h.payload_len) + " does not match dims (" +
                           std::to_string(h.expected_payload()) + ")",
                       len_at);
  }
  return h;
}

DecodedMsg decode_msg(std::span<const std::uint8_t> bytes) {
  DecodedMsg m;
  m.header = decode_header(bytes);
  const MsgHeader& h = m.header;
  if (bytes.size() < kMsgHeaderBytes + h.payload_len) {
    throw FramingError("truncated payload: " + std::to_string(bytes.size() - kMsgHeaderBytes) + " of " +
                           std::to_string(h.payload_len) + " bytes",
                       bytes.size());
  }
  if (bytes.size() > kMsgHeaderBytes + h.payload_len) {
    throw FramingError("trailing bytes after payload", kMsgHeaderBytes + h.payload_len);
  }
  m.chunk = Tensor4({1, h.channels_total, h.height, h.width});
  const std::size_t n = static_cast<std::size_t>(h.channels_sent) * h.height * h.width;
  const std::uint8_t* p = bytes.data() + kMsgHeaderBytes;
  float* dst = m.chunk.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    float v;
    if (h.dtype == WireDtype::kF32) {
      const std::uint8_t* q = p + 4 * i;
      v = std::bit_cast<float>(static_cast<std::uint32_t>(q[0] | (q[1] << 8) | (q[2] << 16)) |
                               (static_cast<std::uint32_t>(q[3]) << 24));
    } else {
      const std::uint8_t* q = p + 2 * i;
      v = half_to_float(static_cast<std::uint16_t>(q[0] | (q[1] << 8)));
    }
    if (!std::isfinite(v)) {
      throw FramingError("non-finite payload value", kMsgHeaderBytes + i * dtype_bytes(h.dtype));
    }
    dst[i] = v;
  }
  return m;
}

std::vector<std::uint8_t> encode_handshake(const Handshake& h) {
  Writer w(kHandshakeBytes);
  w.magic(kHandshakeMagic);
  w.u16(kWireVersion);
  w.u64(h.policy_hash);
  w.u8(h.node_id);
  w.u8(h.nodes);
  return w.take();
}

Handshake decode_handshake(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kHandshakeMagic);
  r.version();
  Handshake h;
  h.policy_hash = r.u64();
  h.node_id = r.u8();
  h.nodes = r.u8();
  r.end();
  return h;
}

std::vector<std::uint8_t> encode_request(std::uint32_t request) {
  Writer w(kRequestBytes);
  w.magic(kRequestMagic);
  w.u16(kWireVersion);
  w.u32(request);
  return w.take();
}

std::uint32_t decode_request(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kRequestMagic);
  r.version();
  const std::uint32_t id = r.u32();
  r.end();
  return id;
}

std::vector<std::uint8_t> encode_error(const ErrorFrame& e) {
  Writer w(12 + e.text.size());
  w.magic(kErrorMagic);
  w.u16(kWireVersion);
  w.u16(e.step);
  w.u32(static_cast<std::uint32_t>(e.text.size()));
  w.text(e.text);
  return w.take();
}

ErrorFrame decode_error(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kErrorMagic);
  r.version();
  ErrorFrame e;
  e.step = r.u16();
  e.text = r.text(r.u32());
  r.end();
  return e;
}

std::vector<std::uint8_t> encode_timing(const std::string& json) {
  Writer w(10 + json.size());
  w.magic(kTimingMagic);
  w.u16(kWireVersion);
  w.u32(static_cast<std::uint32_t>(json.size()));
  w.text(json);
  return w.take();
}

std::string decode_timing(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic(kTimingMagic);
  r.version();
  std::string s = r.text(r.u32());
  r.end();
  return s;
}

FrameKind frame_kind(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FramingError("truncated frame: missing magic", 0);
  const auto is = [&](const char (&m)[4]) { return std::memcmp(bytes.data(), m, 4) == 0; };
  if (is(kTensorMagic)) return FrameKind::kTensor;
  if (is(kHandshakeMagic)) return FrameKind::kHandshake;
  if (is(kRequestMagic)) return FrameKind::kRequest;
  if (is(kErrorMagic)) return FrameKind::kError;
  if (is(kTimingMagic)) return FrameKind::kTiming;
  throw FramingError("bad magic", 0);
}

std::vector<std::uint8_t> read_frame(const ReadExact& read, std::size_t max_payload) {
  std::vector<std::uint8_t> f(6);
  read(f.data(), 6);
  const FrameKind kind = frame_kind(f);
  Reader probe(f);
  probe.u32();
  probe.version();
  auto grow = [&](std::size_t n) {
    const std::size_t at = f.size();
    f.resize(at + n);
    read(f.data() + at, n);
  };
  auto tail_len = [&](std::size_t len_offset) {
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(f[len_offset + i]) << (8 * i);
    if (len > max_payload) throw FramingError("frame length exceeds limit", len_offset);
    return static_cast<std::size_t>(len);
  };
  switch (kind) {
    case FrameKind::kTensor: {
      grow(kMsgHeaderBytes - 6);
      decode_header(f);
      grow(tail_len(19));
      break;
    }
    case FrameKind::kHandshake:
      grow(kHandshakeBytes - 6);
      break;
    case FrameKind::kRequest:
      grow(kRequestBytes - 6);
      break;
    case FrameKind::kError:
      grow(6);
      grow(tail_len(8));
      break;
    case FrameKind::kTiming:
      grow(4);
      grow(tail_len(6));
      break;
  }
  return f;
}

}  // namespace snn
