#pragma once

// Bit-exact wire formats: the FLW1 weight blob and length-prefixed frames.
//
// WeightBlob (all integers little-endian):
//   "FLW1" | u32 version | u32 round
//   | u8 cell | u32 input | u32 hidden | u32 lookback | u32 horizon
//   | u32 tensor_count
//   | per tensor: u16 name_len, name (UTF-8), u32 rank, u32 dims[rank],
//                 float32 payload (IEEE-754 LE, row-major)
//
// Frame: u32 payload_length | u8 message type | payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedload/error.hpp"
#include "fedload/json_util.hpp"
#include "fedload/params.hpp"

namespace fedload {

using Bytes = std::vector<std::uint8_t>;

inline constexpr char kBlobMagic[4] = {'F', 'L', 'W', '1'};
inline constexpr std::uint32_t kBlobVersion = 1;
inline constexpr std::size_t kDefaultMaxFrameBytes = 64u << 20;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

  Bytes take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

// Bounds-checked little-endian reader; truncation is a protocol error.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw ProtocolError("truncated message: need " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", have " + std::to_string(remaining()));
    }
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Weight blob

struct DecodedWeights {
  ModelArch arch;
  std::uint32_t round = 0;
  ModelParams params;
};

inline void write_weights(ByteWriter& w, const ModelParams& params, const ModelArch& arch,
                          std::uint32_t round) {
  if (!params.matches(arch)) throw DataError("serialize: params do not match arch");
  w.raw(std::string_view(kBlobMagic, 4));
  w.u32(kBlobVersion);
  w.u32(round);
  w.u8(static_cast<std::uint8_t>(arch.cell));
  w.u32(static_cast<std::uint32_t>(arch.input_dim));
  w.u32(static_cast<std::uint32_t>(arch.hidden_dim));
  w.u32(static_cast<std::uint32_t>(arch.lookback));
  w.u32(static_cast<std::uint32_t>(arch.horizon));
  w.u32(static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.raw(t.name);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float v : t.values) w.f32(v);
  }
}

inline Bytes serialize_weights(const ModelParams& params, const ModelArch& arch,
                               std::uint32_t round) {
  ByteWriter w;
  write_weights(w, params, arch, round);
  return w.take();
}

inline DecodedWeights read_weights(ByteReader& r) {
  const auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kBlobMagic, 4) != 0) throw ProtocolError("weight blob: bad magic");
  if (r.u32() != kBlobVersion) throw ProtocolError("weight blob: unsupported version");
  DecodedWeights out;
  out.round = r.u32();
  const std::uint8_t cell = r.u8();
  if (cell > 1) throw ProtocolError("weight blob: unknown cell type");
  out.arch.cell = static_cast<CellType>(cell);
  out.arch.input_dim = r.u32();
  out.arch.hidden_dim = r.u32();
  out.arch.lookback = r.u32();
  out.arch.horizon = r.u32();
  try {
    out.arch.validate();
  } catch (const ConfigError& e) {
    throw ProtocolError(std::string("weight blob: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  if (count > 64) throw ProtocolError("weight blob: implausible tensor count");
  std::vector<Tensor<float>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor<float> t;
    const std::uint16_t len = r.u16();
    const auto name = r.raw(len);
    t.name.assign(name.begin(), name.end());
    const std::uint32_t rank = r.u32();
    if (rank > 4) throw ProtocolError("weight blob: implausible tensor rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u32());
      n *= t.dims.back();
      if (n * 4 > r.remaining()) throw ProtocolError("weight blob: payload exceeds message");
    }
    t.values.resize(static_cast<std::size_t>(n));
    for (auto& v : t.values) v = r.f32();
    if (!tensors.empty() && !(tensors.back().name < t.name)) {
      throw ProtocolError("weight blob: tensors not in canonical order");
    }
    tensors.push_back(std::move(t));
  }
  out.params = ModelParams::from_tensors(std::move(tensors));
  if (!out.params.matches(out.arch)) {
    throw ProtocolError("weight blob: tensor shapes do not match arch");
  }
  return out;
}

inline DecodedWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  DecodedWeights out = read_weights(r);
  if (r.remaining() != 0) throw ProtocolError("weight blob: trailing bytes");
  return out;
}

// ---------------------------------------------------------------------------
// Frames

enum class MessageType : std::uint8_t {
  hello = 1,
  assign = 2,
  global_weights = 3,
  local_weights = 4,
  round_done = 5,
  shutdown = 6,
  error = 7,
};

inline std::string_view to_string(MessageType t) {
  switch (t) {
    case MessageType::hello: return "HELLO";
    case MessageType::assign: return "ASSIGN";
    case MessageType::global_weights: return "GLOBAL_WEIGHTS";
    case MessageType::local_weights: return "LOCAL_WEIGHTS";
    case MessageType::round_done: return "ROUND_DONE";
    case MessageType::shutdown: return "SHUTDOWN";
    case MessageType::error: return "ERROR";
  }
  return "?";
}

inline MessageType parse_message_type(std::uint8_t v) {
  if (v < 1 || v > 7) throw ProtocolError("unknown message type " + std::to_string(v));
  return static_cast<MessageType>(v);
}

struct Frame {
  MessageType type = MessageType::error;
  Bytes payload;
};

inline constexpr std::size_t kFrameHeaderBytes = 5;

inline Bytes encode_frame(MessageType type, std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.u8(static_cast<std::uint8_t>(type));
  w.raw(payload);
  return w.take();
}

// Incremental frame parser for a byte stream. Oversized or mistyped frames
// raise ProtocolError before any payload is buffered.
class FrameDecoder {
 public:
  explicit FrameDecoder(std::size_t max_payload = kDefaultMaxFrameBytes) : max_(max_payload) {}

  void feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  std::optional<Frame> next() {
    if (buf_.size() - pos_ < kFrameHeaderBytes) return std::nullopt;
    ByteReader r(std::span<const std::uint8_t>(buf_).subspan(pos_, kFrameHeaderBytes));
    const std::uint32_t len = r.u32();
    const MessageType type = parse_message_type(r.u8());
    if (len > max_) {
      throw ProtocolError("frame payload of " + std::to_string(len) + " bytes exceeds limit " +
                          std::to_string(max_));
    }
    if (buf_.size() - pos_ - kFrameHeaderBytes < len) return std::nullopt;
    Frame f;
    f.type = type;
    const auto begin = buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + kFrameHeaderBytes);
    f.payload.assign(begin, begin + len);
    pos_ += kFrameHeaderBytes + len;
    if (pos_ == buf_.size()) {
      buf_.clear();
      pos_ = 0;
    }
    return f;
  }

  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::size_t max_;
  Bytes buf_;
  std::size_t pos_ = 0;
};

// Decodes exactly one frame occupying all of `bytes`.
inline Frame decode_frame(std::span<const std::uint8_t> bytes,
                          std::size_t max_payload = kDefaultMaxFrameBytes) {
  FrameDecoder d(max_payload);
  d.feed(bytes);
  auto f = d.next();
  if (!f) throw ProtocolError("truncated frame");
  if (d.buffered() != 0) throw ProtocolError("trailing bytes after frame");
  return std::move(*f);
}

// ---------------------------------------------------------------------------
// Message payloads

// LOCAL_WEIGHTS: u64 train sample count | f64 mean local loss | weight blob.
struct LocalWeights {
  std::uint64_t n_samples = 0;
  double mean_loss = 0.0;
  DecodedWeights weights;
};

inline Bytes encode_local_weights(std::uint64_t n_samples, double mean_loss,
                                  const ModelParams& params, const ModelArch& arch,
                                  std::uint32_t round) {
  ByteWriter w;
  w.u64(n_samples);
  w.f64(mean_loss);
  write_weights(w, params, arch, round);
  return w.take();
}

inline LocalWeights decode_local_weights(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  LocalWeights out;
  out.n_samples = r.u64();
  out.mean_loss = r.f64();
  out.weights = read_weights(r);
  if (r.remaining() != 0) throw ProtocolError("LOCAL_WEIGHTS: trailing bytes");
  return out;
}

inline Bytes encode_u32(std::uint32_t v) {
  ByteWriter w;
  w.u32(v);
  return w.take();
}

inline std::uint32_t decode_u32(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  const auto v = r.u32();
  if (r.remaining() != 0) throw ProtocolError("trailing bytes");
  return v;
}

inline Bytes encode_json(const json& j) {
  const std::string s = j.dump();
  return Bytes(s.begin(), s.end());
}

inline json decode_json(std::span<const std::uint8_t> payload) {
  try {
    return json::parse(payload.begin(), payload.end());
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed JSON payload: ") + e.what());
  }
}

inline Bytes encode_text(std::string_view s) { return Bytes(s.begin(), s.end()); }

inline std::string decode_text(std::span<const std::uint8_t> payload) {
  return std::string(payload.begin(), payload.end());
}

}  // namespace fedload
