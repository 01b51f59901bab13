#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "packetstop/detector.hpp"
#include "packetstop/image.hpp"

namespace packetstop {

enum class UtilitySource { empirical_oracle, external_predictor };

/// Per-block non-negative decision utility c_i with total C_tot = sum c_i.
class UtilityMap {
 public:
  UtilityMap() = default;
  // Values must be finite and non-negative.
  explicit UtilityMap(std::vector<double> values,
                      UtilitySource source = UtilitySource::empirical_oracle);

  const std::vector<double>& values() const { return values_; }
  double total() const { return total_; }
  UtilitySource source() const { return source_; }
  std::size_t size() const { return values_.size(); }
  double operator[](BlockId id) const { return values_[id]; }

  bool operator==(const UtilityMap&) const = default;

 private:
  std::vector<double> values_;
  double total_ = 0.0;
  UtilitySource source_ = UtilitySource::empirical_oracle;
};

struct UtilitySupervisionRecord {
  std::string image_id;
  double full_confidence = 0.0;
  Detection full_detection;
  std::vector<double> matched_confidences;
  UtilityMap map;
};

/// Leave-one-block-out utility: c_i = max(0, s(x) - matched(x without p_i)).
/// Returns nullopt when the full image has no hazard detection; such images
/// are excluded from supervision. Uses exactly n_blocks + 1 detector calls.
std::optional<UtilitySupervisionRecord> compute_utility_map(
    const ImageRaster& image, const BlockGrid& grid, const Detector& detector,
    double iou_floor = 0.5, const std::string& image_id = {},
    unsigned threads = 1);

// sum(received) / (total + epsilon)
double normalize_ratio(std::span<const double> received_utilities,
                       double total, double epsilon = 1e-6);

struct ExternalUtility {
  std::string image_id;
  UtilityMap map;
  std::size_t clamped = 0;  // negative entries forced to zero
};

// JSON schema: {"image_id": str, "n_blocks": int, "values": [...], "total": x}
ExternalUtility load_external_utility(const std::filesystem::path& path,
                                      std::size_t expected_blocks);
ExternalUtility parse_utility_json(const std::string& text,
                                   std::size_t expected_blocks,
                                   UtilitySource source);
std::string utility_to_json(const std::string& image_id, const UtilityMap& map);
void save_utility(const std::filesystem::path& path, const std::string& image_id,
                  const UtilityMap& map);
UtilityMap load_utility(const std::filesystem::path& path,
                        std::size_t expected_blocks);

/// Wire form of a utility map: per-block share of C_tot in units of 1/65535
/// and C_tot in unsigned 16.16 fixed point.
struct QuantizedUtility {
  std::vector<std::uint16_t> shares;
  std::uint32_t total_q = 0;
};

std::uint16_t quantize_share(double value, double total);
std::uint32_t quantize_total(double total);
double dequantize_total(std::uint32_t total_q);
double dequantize_value(std::uint16_t share_q, std::uint32_t total_q);
QuantizedUtility quantize(const UtilityMap& map);

// Compact binary: BE u32 n_blocks, BE u32 total_q, n x BE u16 shares.
Bytes encode_quantized(const QuantizedUtility& q);
QuantizedUtility decode_quantized(std::span<const std::uint8_t> bytes);

}  // namespace packetstop
