#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "elastic/error.hpp"

namespace elastic::net {

// Frame: "EAVG" | version u8 (=1) | type u8 | payload length u32 LE | payload.
inline constexpr std::array<std::uint8_t, 4> kMagic{'E', 'A', 'V', 'G'};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MsgType : std::uint8_t {
  fetch = 0x01,
  fetch_reply = 0x02,
  push_elastic = 0x03,
  push_grad = 0x04,
  ack = 0x05,
  shutdown = 0x06,
  error = 0x07,
};

inline std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::fetch: return "FETCH";
    case MsgType::fetch_reply: return "FETCH_REPLY";
    case MsgType::push_elastic: return "PUSH_ELASTIC";
    case MsgType::push_grad: return "PUSH_GRAD";
    case MsgType::ack: return "ACK";
    case MsgType::shutdown: return "SHUTDOWN";
    case MsgType::error: return "ERROR";
  }
  return "?";
}

// Decoded message. Which fields are meaningful depends on type:
//   FETCH_REPLY: version + values; PUSH_*: values; ACK: version; ERROR: text.
// values are kept as raw doubles (no finiteness check on the wire).
struct WireMessage {
  MsgType type = MsgType::fetch;
  std::uint64_t version = 0;
  std::vector<double> values;
  std::string text;

  friend bool operator==(const WireMessage& a, const WireMessage& b) {
    if (a.type != b.type || a.version != b.version || a.text != b.text ||
        a.values.size() != b.values.size())
      return false;
    // bitwise, so NaN payloads compare equal to themselves
    for (std::size_t i = 0; i < a.values.size(); ++i)
      if (std::bit_cast<std::uint64_t>(a.values[i]) != std::bit_cast<std::uint64_t>(b.values[i]))
        return false;
    return true;
  }
};

inline WireMessage make_fetch() { return {MsgType::fetch, 0, {}, {}}; }
inline WireMessage make_fetch_reply(std::uint64_t version, std::vector<double> x) {
  return {MsgType::fetch_reply, version, std::move(x), {}};
}
inline WireMessage make_push_elastic(std::vector<double> e) {
  return {MsgType::push_elastic, 0, std::move(e), {}};
}
inline WireMessage make_push_grad(std::vector<double> u) {
  return {MsgType::push_grad, 0, std::move(u), {}};
}
inline WireMessage make_ack(std::uint64_t version) { return {MsgType::ack, version, {}, {}}; }
inline WireMessage make_shutdown() { return {MsgType::shutdown, 0, {}, {}}; }
inline WireMessage make_error(std::string text) { return {MsgType::error, 0, {}, std::move(text)}; }

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_vector(std::vector<std::uint8_t>& out, const std::vector<double>& v) {
  if (v.size() > 0xffffffffu) throw ProtocolError("vector too long for the wire");
  put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (double x : v) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

inline std::vector<double> get_vector(const std::uint8_t* p, std::size_t len) {
  if (len < 4) throw ProtocolError("vector payload shorter than its dim field");
  const std::uint32_t dim = get_u32(p);
  if (len != 4 + 8 * static_cast<std::size_t>(dim))
    throw ProtocolError("vector dim " + std::to_string(dim) + " inconsistent with payload length " +
                        std::to_string(len));
  std::vector<double> v(dim);
  for (std::uint32_t i = 0; i < dim; ++i) v[i] = std::bit_cast<double>(get_u64(p + 4 + 8 * i));
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_payload(const WireMessage& m) {
  std::vector<std::uint8_t> out;
  switch (m.type) {
    case MsgType::fetch:
    case MsgType::shutdown: break;
    case MsgType::fetch_reply:
      detail::put_u64(out, m.version);
      detail::put_vector(out, m.values);
      break;
    case MsgType::push_elastic:
    case MsgType::push_grad: detail::put_vector(out, m.values); break;
    case MsgType::ack: detail::put_u64(out, m.version); break;
    case MsgType::error: out.assign(m.text.begin(), m.text.end()); break;
  }
  return out;
}

inline std::vector<std::uint8_t> encode(const WireMessage& m) {
  const auto payload = encode_payload(m);
  if (payload.size() > kMaxPayload) throw ProtocolError("payload exceeds frame limit");
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.push_back(kWireVersion);
  out.push_back(static_cast<std::uint8_t>(m.type));
  detail::put_u32(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct FrameHeader {
  MsgType type = MsgType::fetch;
  std::uint32_t length = 0;
};

inline FrameHeader decode_header(const std::uint8_t* h) {
  if (std::memcmp(h, kMagic.data(), kMagic.size()) != 0) throw ProtocolError("bad magic");
  if (h[4] != kWireVersion) throw ProtocolError("unsupported wire version " + std::to_string(h[4]));
  const std::uint8_t t = h[5];
  if (t < 0x01 || t > 0x07) throw ProtocolError("unknown message type " + std::to_string(t));
  const std::uint32_t len = detail::get_u32(h + 6);
  if (len > kMaxPayload) throw ProtocolError("payload length " + std::to_string(len) + " too large");
  return {static_cast<MsgType>(t), len};
}

inline WireMessage decode_payload(MsgType type, const std::uint8_t* p, std::size_t len) {
  WireMessage m;
  m.type = type;
  auto expect_len = [&](std::size_t want) {
    if (len != want)
      throw ProtocolError(std::string(to_string(type)) + ": payload length " + std::to_string(len) +
                          ", expected " + std::to_string(want));
  };
  switch (type) {
    case MsgType::fetch:
    case MsgType::shutdown: expect_len(0); break;
    case MsgType::fetch_reply:
      if (len < 8) throw ProtocolError("FETCH_REPLY: payload too short");
      m.version = detail::get_u64(p);
      m.values = detail::get_vector(p + 8, len - 8);
      break;
    case MsgType::push_elastic:
    case MsgType::push_grad: m.values = detail::get_vector(p, len); break;
    case MsgType::ack:
      expect_len(8);
      m.version = detail::get_u64(p);
      break;
    case MsgType::error: m.text.assign(reinterpret_cast<const char*>(p), len); break;
  }
  return m;
}

// Whole-frame decode; the buffer must hold exactly one frame.
inline WireMessage decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderSize) throw ProtocolError("frame shorter than header");
  const FrameHeader h = decode_header(bytes.data());
  if (bytes.size() - kHeaderSize != h.length)
    throw ProtocolError("declared length " + std::to_string(h.length) + " but " +
                        std::to_string(bytes.size() - kHeaderSize) + " payload bytes");
  return decode_payload(h.type, bytes.data() + kHeaderSize, h.length);
}

}  // namespace elastic::net
