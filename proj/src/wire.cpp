#include "packetstop/wire.hpp"

#include <zlib.h>

#include "packetstop/errors.hpp"

namespace packetstop::wire {

namespace {

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v >> 8));
    u8(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v >> 16));
    u16(static_cast<std::uint16_t>(v));
  }

 private:
  Bytes& out_;
};

std::uint16_t rd16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
}

std::uint32_t rd32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{rd16(b, at)} << 16) | rd16(b, at + 2);
}

void append_crc(Bytes& out) {
  Writer(out).u32(crc32(out));
}

FrameStatus check_envelope(std::span<const std::uint8_t> b,
                           const std::array<std::uint8_t, 2>& magic,
                           std::size_t min_size) {
  if (b.size() < 2) return FrameStatus::truncated;
  if (b[0] != magic[0] || b[1] != magic[1]) return FrameStatus::bad_magic;
  if (b.size() < 3) return FrameStatus::truncated;
  if (b[2] != kVersion) return FrameStatus::bad_version;
  if (b.size() < min_size) return FrameStatus::truncated;
  return FrameStatus::ok;
}

bool crc_ok(std::span<const std::uint8_t> b) {
  const std::size_t body = b.size() - kCrcBytes;
  return crc32(b.first(body)) == rd32(b, body);
}

}  // namespace

const char* to_string(FrameStatus status) {
  switch (status) {
    case FrameStatus::ok: return "ok";
    case FrameStatus::truncated: return "truncated";
    case FrameStatus::bad_magic: return "bad_magic";
    case FrameStatus::bad_version: return "bad_version";
    case FrameStatus::bad_length: return "bad_length";
    case FrameStatus::bad_crc: return "bad_crc";
    case FrameStatus::bad_field: return "bad_field";
  }
  return "?";
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

Bytes encode(const DataFrame& frame, std::size_t frame_budget) {
  const std::size_t total = kDataHeaderBytes + frame.payload.size() + kCrcBytes;
  if (frame.payload.size() > 0xffff || total > frame_budget) {
    throw ContractViolation("data frame of " + std::to_string(total) +
                            " bytes exceeds the frame budget of " +
                            std::to_string(frame_budget));
  }
  Bytes out;
  out.reserve(total);
  Writer w(out);
  w.u8(kDataMagic[0]);
  w.u8(kDataMagic[1]);
  w.u8(kVersion);
  w.u32(frame.image_id);
  w.u32(frame.block_id);
  w.u32(frame.n_blocks);
  w.u16(frame.utility_q);
  w.u32(frame.total_utility_q);
  w.u16(static_cast<std::uint16_t>(frame.payload.size()));
  out.insert(out.end(), frame.payload.begin(), frame.payload.end());
  append_crc(out);
  return out;
}

Bytes encode(const StopFrame& frame) {
  Bytes out;
  out.reserve(kStopFrameBytes);
  Writer w(out);
  w.u8(kStopMagic[0]);
  w.u8(kStopMagic[1]);
  w.u8(kVersion);
  w.u32(frame.image_id);
  w.u32(frame.stop_step);
  w.u8(static_cast<std::uint8_t>(frame.reason));
  append_crc(out);
  return out;
}

Decoded<DataFrame> decode_data_frame(std::span<const std::uint8_t> b) {
  if (auto s = check_envelope(b, kDataMagic, kDataHeaderBytes + kCrcBytes);
      s != FrameStatus::ok) {
    return {s, std::nullopt};
  }
  const std::uint16_t len = rd16(b, 21);
  if (b.size() != kDataHeaderBytes + len + kCrcBytes) {
    return {b.size() < kDataHeaderBytes + len + kCrcBytes ? FrameStatus::truncated
                                                          : FrameStatus::bad_length,
            std::nullopt};
  }
  if (!crc_ok(b)) return {FrameStatus::bad_crc, std::nullopt};
  DataFrame f;
  f.image_id = rd32(b, 3);
  f.block_id = rd32(b, 7);
  f.n_blocks = rd32(b, 11);
  f.utility_q = rd16(b, 15);
  f.total_utility_q = rd32(b, 17);
  if (f.block_id >= f.n_blocks) return {FrameStatus::bad_field, std::nullopt};
  f.payload.assign(b.begin() + kDataHeaderBytes,
                   b.begin() + kDataHeaderBytes + len);
  return {FrameStatus::ok, std::move(f)};
}

Decoded<StopFrame> decode_stop_frame(std::span<const std::uint8_t> b) {
  if (auto s = check_envelope(b, kStopMagic, kStopFrameBytes);
      s != FrameStatus::ok) {
    return {s, std::nullopt};
  }
  if (b.size() != kStopFrameBytes) return {FrameStatus::bad_length, std::nullopt};
  if (!crc_ok(b)) return {FrameStatus::bad_crc, std::nullopt};
  StopFrame f;
  f.image_id = rd32(b, 3);
  f.stop_step = rd32(b, 7);
  const std::uint8_t reason = b[11];
  if (reason > static_cast<std::uint8_t>(StopReason::exhausted)) {
    return {FrameStatus::bad_field, std::nullopt};
  }
  f.reason = static_cast<StopReason>(reason);
  return {FrameStatus::ok, f};
}

}  // namespace packetstop::wire
