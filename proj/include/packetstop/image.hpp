#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace packetstop {

using BlockId = std::uint32_t;
using Bytes = std::vector<std::uint8_t>;

struct ImageMeta {
  int width = 0;
  int height = 0;
  int channels = 1;

  bool operator==(const ImageMeta&) const = default;
};

/// Row-major interleaved 8-bit raster. Pixel storage always holds exactly
/// width * height * channels bytes.
class ImageRaster {
 public:
  ImageRaster() = default;
  ImageRaster(int width, int height, int channels);
  ImageRaster(int width, int height, int channels, Bytes pixels);

  int width() const { return meta_.width; }
  int height() const { return meta_.height; }
  int channels() const { return meta_.channels; }
  const ImageMeta& meta() const { return meta_; }

  std::span<const std::uint8_t> pixels() const { return pixels_; }
  std::span<std::uint8_t> pixels() { return pixels_; }

  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels_[index(x, y, c)];
  }
  std::uint8_t& at(int x, int y, int c = 0) { return pixels_[index(x, y, c)]; }

  bool operator==(const ImageRaster&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * meta_.width + x) * meta_.channels + c;
  }

  ImageMeta meta_;
  Bytes pixels_;
};

struct BlockRect {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
};

/// Protocol-aligned partition. Block ids run 0..n_blocks-1 in row-major order.
struct BlockGrid {
  int block_width = 32;
  int block_height = 16;
  int cols = 0;
  int rows = 0;

  int n_blocks() const { return cols * rows; }
  int image_width() const { return cols * block_width; }
  int image_height() const { return rows * block_height; }
  bool contains(BlockId id) const {
    return id < static_cast<BlockId>(n_blocks());
  }
  BlockRect rect(BlockId id) const;
  std::size_t payload_bytes(int channels) const {
    return static_cast<std::size_t>(block_width) * block_height * channels;
  }

  bool operator==(const BlockGrid&) const = default;
};

BlockGrid partition(const ImageRaster& image, int block_width = 32,
                    int block_height = 16);

// Grid for an image of known dimensions without the pixels.
BlockGrid partition(const ImageMeta& meta, int block_width = 32,
                    int block_height = 16);

Bytes extract_block(const ImageRaster& image, const BlockGrid& grid, BlockId id);

// Writes a block payload into its fixed spatial region.
void place_block(ImageRaster& canvas, const BlockGrid& grid, BlockId id,
                 std::span<const std::uint8_t> payload);

/// Cumulative set of delivered blocks. Insertion is monotone; a block once
/// received is never removed and keeps its first arrival step.
class ReceptionSet {
 public:
  ReceptionSet() = default;
  explicit ReceptionSet(std::size_t n_blocks);

  // Returns false for duplicates (state unchanged).
  bool insert(BlockId id, std::size_t step);
  bool contains(BlockId id) const;
  std::optional<std::size_t> arrival_step(BlockId id) const;
  std::size_t size() const { return count_; }
  std::size_t capacity() const { return steps_.size(); }
  bool complete() const { return count_ == steps_.size(); }
  std::vector<BlockId> ids() const;

 private:
  static constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
  std::vector<std::size_t> steps_;
  std::size_t count_ = 0;
};

// Indexed by block id; an empty entry means "no payload".
using BlockPayloads = std::vector<Bytes>;

/// Zero-padded partial observation built from the received blocks only.
ImageRaster reconstruct(const ImageMeta& meta, const BlockGrid& grid,
                        const ReceptionSet& reception,
                        const BlockPayloads& payloads);

/// Copy of `image` with block `id` zeroed.
ImageRaster mask_block(const ImageRaster& image, const BlockGrid& grid,
                       BlockId id);

// Zero-pads right/bottom so both dimensions are block multiples.
ImageRaster pad_to_blocks(const ImageRaster& image, int block_width,
                          int block_height);

// Raster file I/O. The native format is "PSR1" + BE u32 width + BE u32
// height + u8 channels + raw bytes. Binary PGM (P5) and PPM (P6) are accepted
// on load.
ImageRaster load_raster(const std::filesystem::path& path);
void save_raster(const std::filesystem::path& path, const ImageRaster& image);
void save_pnm(const std::filesystem::path& path, const ImageRaster& image);
ImageRaster decode_raster(std::span<const std::uint8_t> bytes);
Bytes encode_raster(const ImageRaster& image);

}  // namespace packetstop
