#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>

#include "packetstop/image.hpp"
#include "packetstop/policy.hpp"

namespace packetstop::wire {

// All integers are big-endian. CRC-32 (IEEE, as in zlib) covers every byte
// before the trailing checksum.
//
// DataFrame:
//   0  magic 'P''D'      2
//   2  version           1
//   3  image_id          4
//   7  block_id          4
//  11  n_blocks          4
//  15  utility_q         2   round(c_i / C_tot * 65535), 0 if C_tot == 0
//  17  total_utility_q   4   C_tot in unsigned 16.16 fixed point
//  21  payload_len       2
//  23  payload           payload_len
//  ..  crc32             4
//
// StopFrame (16 bytes):
//   0  magic 'P''S'      2
//   2  version           1
//   3  image_id          4
//   7  stop_step         4
//  11  reason            1   StopReason code
//  12  crc32             4

inline constexpr std::array<std::uint8_t, 2> kDataMagic{'P', 'D'};
inline constexpr std::array<std::uint8_t, 2> kStopMagic{'P', 'S'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kDataHeaderBytes = 23;
inline constexpr std::size_t kCrcBytes = 4;
inline constexpr std::size_t kStopFrameBytes = 16;
inline constexpr std::size_t kDefaultFrameBudget = 1200;

struct DataFrame {
  std::uint32_t image_id = 0;
  std::uint32_t block_id = 0;
  std::uint32_t n_blocks = 0;
  std::uint16_t utility_q = 0;
  std::uint32_t total_utility_q = 0;
  Bytes payload;

  bool operator==(const DataFrame&) const = default;
};

struct StopFrame {
  std::uint32_t image_id = 0;
  std::uint32_t stop_step = 0;
  StopReason reason = StopReason::none;

  bool operator==(const StopFrame&) const = default;
};

enum class FrameStatus {
  ok,
  truncated,
  bad_magic,
  bad_version,
  bad_length,
  bad_crc,
  bad_field,
};

const char* to_string(FrameStatus status);

template <typename Frame>
struct Decoded {
  FrameStatus status = FrameStatus::ok;
  std::optional<Frame> frame;

  bool ok() const { return status == FrameStatus::ok; }
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Throws ContractViolation when the frame exceeds `frame_budget` bytes.
Bytes encode(const DataFrame& frame,
             std::size_t frame_budget = kDefaultFrameBudget);
Bytes encode(const StopFrame& frame);

Decoded<DataFrame> decode_data_frame(std::span<const std::uint8_t> bytes);
Decoded<StopFrame> decode_stop_frame(std::span<const std::uint8_t> bytes);

}  // namespace packetstop::wire
