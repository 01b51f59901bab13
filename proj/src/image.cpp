#include "packetstop/image.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "packetstop/errors.hpp"

namespace packetstop {

namespace {

constexpr char kRasterMagic[4] = {'P', 'S', 'R', '1'};
constexpr std::size_t kRasterHeader = 13;

void check_meta(int width, int height, int channels) {
  if (width <= 0 || height <= 0) {
    throw DimensionError("raster dimensions must be positive");
  }
  if (channels != 1 && channels != 3) {
    throw DimensionError("raster must have 1 or 3 channels");
  }
}

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void check_block(const BlockGrid& grid, BlockId id) {
  if (!grid.contains(id)) {
    throw ContractViolation("block id " + std::to_string(id) +
                            " out of range");
  }
}

// Skips whitespace and '#' comments in a PNM header.
std::size_t pnm_skip(std::span<const std::uint8_t> b, std::size_t pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  return pos;
}

int pnm_int(std::span<const std::uint8_t> b, std::size_t& pos) {
  pos = pnm_skip(b, pos);
  if (pos >= b.size() || !std::isdigit(b[pos])) {
    throw ParseError("malformed PNM header");
  }
  long v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    if (v > (1L << 24)) throw ParseError("PNM dimension too large");
    ++pos;
  }
  return static_cast<int>(v);
}

ImageRaster decode_pnm(std::span<const std::uint8_t> b) {
  const int channels = b[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const int width = pnm_int(b, pos);
  const int height = pnm_int(b, pos);
  const int maxval = pnm_int(b, pos);
  if (maxval != 255) throw ParseError("only 8-bit PNM is supported");
  ++pos;  // single whitespace after maxval
  check_meta(width, height, channels);
  const std::size_t n = static_cast<std::size_t>(width) * height * channels;
  if (b.size() < pos + n) throw ParseError("truncated PNM payload");
  return ImageRaster(width, height, channels,
                     Bytes(b.begin() + pos, b.begin() + pos + n));
}

}  // namespace

ImageRaster::ImageRaster(int width, int height, int channels)
    : meta_{width, height, channels} {
  check_meta(width, height, channels);
  pixels_.assign(static_cast<std::size_t>(width) * height * channels, 0);
}

ImageRaster::ImageRaster(int width, int height, int channels, Bytes pixels)
    : meta_{width, height, channels}, pixels_(std::move(pixels)) {
  check_meta(width, height, channels);
  if (pixels_.size() != static_cast<std::size_t>(width) * height * channels) {
    throw DimensionError("pixel buffer length does not match dimensions");
  }
}

BlockRect BlockGrid::rect(BlockId id) const {
  const int col = static_cast<int>(id) % cols;
  const int row = static_cast<int>(id) / cols;
  return {col * block_width, row * block_height, block_width, block_height};
}

BlockGrid partition(const ImageMeta& meta, int block_width, int block_height) {
  if (block_width <= 0 || block_height <= 0) {
    throw DimensionError("block dimensions must be positive");
  }
  if (meta.width <= 0 || meta.height <= 0 || meta.width % block_width != 0 ||
      meta.height % block_height != 0) {
    throw DimensionError("image " + std::to_string(meta.width) + "x" +
                         std::to_string(meta.height) +
                         " is not a multiple of block " +
                         std::to_string(block_width) + "x" +
                         std::to_string(block_height));
  }
  return {block_width, block_height, meta.width / block_width,
          meta.height / block_height};
}

BlockGrid partition(const ImageRaster& image, int block_width,
                    int block_height) {
  return partition(image.meta(), block_width, block_height);
}

Bytes extract_block(const ImageRaster& image, const BlockGrid& grid,
                    BlockId id) {
  check_block(grid, id);
  const BlockRect r = grid.rect(id);
  const std::size_t row_bytes =
      static_cast<std::size_t>(r.width) * image.channels();
  Bytes out;
  out.reserve(row_bytes * r.height);
  const auto px = image.pixels();
  for (int y = r.y0; y < r.y0 + r.height; ++y) {
    const std::size_t start =
        (static_cast<std::size_t>(y) * image.width() + r.x0) * image.channels();
    out.insert(out.end(), px.begin() + start, px.begin() + start + row_bytes);
  }
  return out;
}

void place_block(ImageRaster& canvas, const BlockGrid& grid, BlockId id,
                 std::span<const std::uint8_t> payload) {
  check_block(grid, id);
  if (payload.size() != grid.payload_bytes(canvas.channels())) {
    throw ContractViolation("block payload has wrong length");
  }
  const BlockRect r = grid.rect(id);
  const std::size_t row_bytes =
      static_cast<std::size_t>(r.width) * canvas.channels();
  auto px = canvas.pixels();
  for (int row = 0; row < r.height; ++row) {
    const std::size_t dst =
        (static_cast<std::size_t>(r.y0 + row) * canvas.width() + r.x0) *
        canvas.channels();
    std::copy_n(payload.begin() + row * row_bytes, row_bytes, px.begin() + dst);
  }
}

ReceptionSet::ReceptionSet(std::size_t n_blocks) : steps_(n_blocks, kAbsent) {}

bool ReceptionSet::insert(BlockId id, std::size_t step) {
  if (id >= steps_.size()) {
    throw ContractViolation("received block id out of range");
  }
  if (steps_[id] != kAbsent) return false;
  steps_[id] = step;
  ++count_;
  return true;
}

bool ReceptionSet::contains(BlockId id) const {
  return id < steps_.size() && steps_[id] != kAbsent;
}

std::optional<std::size_t> ReceptionSet::arrival_step(BlockId id) const {
  if (!contains(id)) return std::nullopt;
  return steps_[id];
}

std::vector<BlockId> ReceptionSet::ids() const {
  std::vector<BlockId> out;
  out.reserve(count_);
  for (BlockId i = 0; i < steps_.size(); ++i) {
    if (steps_[i] != kAbsent) out.push_back(i);
  }
  return out;
}

ImageRaster reconstruct(const ImageMeta& meta, const BlockGrid& grid,
                        const ReceptionSet& reception,
                        const BlockPayloads& payloads) {
  if (meta.width != grid.image_width() || meta.height != grid.image_height()) {
    throw DimensionError("image meta does not match block grid");
  }
  ImageRaster canvas(meta.width, meta.height, meta.channels);
  for (BlockId id : reception.ids()) {
    if (id >= payloads.size() || payloads[id].empty()) {
      throw ContractViolation("missing payload for received block " +
                              std::to_string(id));
    }
    place_block(canvas, grid, id, payloads[id]);
  }
  return canvas;
}

ImageRaster mask_block(const ImageRaster& image, const BlockGrid& grid,
                       BlockId id) {
  check_block(grid, id);
  ImageRaster out = image;
  const Bytes zeros(grid.payload_bytes(image.channels()), 0);
  place_block(out, grid, id, zeros);
  return out;
}

ImageRaster pad_to_blocks(const ImageRaster& image, int block_width,
                          int block_height) {
  if (block_width <= 0 || block_height <= 0) {
    throw DimensionError("block dimensions must be positive");
  }
  const int w = (image.width() + block_width - 1) / block_width * block_width;
  const int h =
      (image.height() + block_height - 1) / block_height * block_height;
  if (w == image.width() && h == image.height()) return image;
  ImageRaster out(w, h, image.channels());
  const std::size_t row_bytes =
      static_cast<std::size_t>(image.width()) * image.channels();
  for (int y = 0; y < image.height(); ++y) {
    std::copy_n(image.pixels().begin() + y * row_bytes, row_bytes,
                out.pixels().begin() +
                    static_cast<std::size_t>(y) * w * image.channels());
  }
  return out;
}

Bytes encode_raster(const ImageRaster& image) {
  Bytes out(std::begin(kRasterMagic), std::end(kRasterMagic));
  put_u32(out, static_cast<std::uint32_t>(image.width()));
  put_u32(out, static_cast<std::uint32_t>(image.height()));
  out.push_back(static_cast<std::uint8_t>(image.channels()));
  out.insert(out.end(), image.pixels().begin(), image.pixels().end());
  return out;
}

ImageRaster decode_raster(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' &&
      (bytes[1] == '5' || bytes[1] == '6')) {
    return decode_pnm(bytes);
  }
  if (bytes.size() < kRasterHeader ||
      std::memcmp(bytes.data(), kRasterMagic, 4) != 0) {
    throw ParseError("not a PSR1 or PNM raster");
  }
  const auto width = get_u32(bytes, 4);
  const auto height = get_u32(bytes, 8);
  const int channels = bytes[12];
  if (width == 0 || height == 0 || width > (1u << 20) || height > (1u << 20)) {
    throw ParseError("raster header has invalid dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height * channels;
  if (bytes.size() != kRasterHeader + n) {
    throw ParseError("raster payload length mismatch");
  }
  return ImageRaster(static_cast<int>(width), static_cast<int>(height),
                     channels, Bytes(bytes.begin() + kRasterHeader, bytes.end()));
}

ImageRaster load_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const Bytes bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return decode_raster(bytes);
}

void save_raster(const std::filesystem::path& path, const ImageRaster& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const Bytes bytes = encode_raster(image);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void save_pnm(const std::filesystem::path& path, const ImageRaster& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (image.channels() == 1 ? "P5" : "P6") << '\n'
      << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels().data()),
            static_cast<std::streamsize>(image.pixels().size()));
}

}  // namespace packetstop
