#include "packetstop/utility.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "packetstop/errors.hpp"

namespace packetstop {

using nlohmann::json;

UtilityMap::UtilityMap(std::vector<double> values, UtilitySource source)
    : values_(std::move(values)), source_(source) {
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ContractViolation("utility values must be finite and >= 0");
    }
    total_ += v;
  }
}

std::optional<UtilitySupervisionRecord> compute_utility_map(
    const ImageRaster& image, const BlockGrid& grid, const Detector& detector,
    double iou_floor, const std::string& image_id, unsigned threads) {
  const DetectionSet full = detector.detect(image);
  const Detection* reference = full.top(kHazardClass);
  if (reference == nullptr) return std::nullopt;

  const double s_full = reference->confidence;
  const auto n = static_cast<std::size_t>(grid.n_blocks());
  std::vector<double> matched(n, 0.0);

  auto evaluate = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) {
      const ImageRaster masked =
          mask_block(image, grid, static_cast<BlockId>(i));
      matched[i] =
          match_to_reference(detector.detect(masked), *reference, iou_floor);
    }
  };

  threads = std::max(1u, threads);
  if (threads == 1) {
    evaluate(0, 1);
  } else {
    std::vector<std::future<void>> jobs;
    for (unsigned t = 0; t < threads; ++t) {
      jobs.push_back(std::async(std::launch::async, evaluate, t, threads));
    }
    for (auto& j : jobs) j.get();
  }

  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = std::max(0.0, s_full - matched[i]);
  }
  return UtilitySupervisionRecord{image_id, s_full, *reference,
                                  std::move(matched),
                                  UtilityMap(std::move(values))};
}

double normalize_ratio(std::span<const double> received_utilities, double total,
                       double epsilon) {
  if (total < 0.0 || !(epsilon > 0.0)) {
    throw ContractViolation("normalize_ratio needs total >= 0, epsilon > 0");
  }
  double sum = 0.0;
  for (double v : received_utilities) sum += v;
  return sum / (total + epsilon);
}

ExternalUtility parse_utility_json(const std::string& text,
                                   std::size_t expected_blocks,
                                   UtilitySource source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("utility map: ") + e.what());
  }
  if (!j.is_object() || !j.contains("values") || !j["values"].is_array()) {
    throw SchemaError("utility map must be an object with a values array");
  }
  const auto& vals = j["values"];
  const std::size_t declared =
      j.contains("n_blocks") ? j["n_blocks"].get<std::size_t>() : vals.size();
  if (declared != vals.size() || vals.size() != expected_blocks) {
    throw SchemaError("utility map has " + std::to_string(vals.size()) +
                      " values, grid has " + std::to_string(expected_blocks));
  }
  ExternalUtility out;
  out.image_id = j.value("image_id", std::string{});
  std::vector<double> values;
  values.reserve(vals.size());
  for (const auto& v : vals) {
    if (!v.is_number()) throw SchemaError("utility values must be numbers");
    double x = v.get<double>();
    if (!std::isfinite(x)) throw SchemaError("utility values must be finite");
    if (x < 0.0) {
      x = 0.0;
      ++out.clamped;
    }
    values.push_back(x);
  }
  out.map = UtilityMap(std::move(values), source);
  return out;
}

ExternalUtility load_external_utility(const std::filesystem::path& path,
                                      std::size_t expected_blocks) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_utility_json(ss.str(), expected_blocks,
                            UtilitySource::external_predictor);
}

std::string utility_to_json(const std::string& image_id, const UtilityMap& map) {
  const json j = {{"image_id", image_id},
                  {"n_blocks", map.size()},
                  {"source", map.source() == UtilitySource::empirical_oracle
                                 ? "empirical_oracle"
                                 : "external_predictor"},
                  {"values", map.values()},
                  {"total", map.total()}};
  return j.dump();
}

void save_utility(const std::filesystem::path& path, const std::string& image_id,
                  const UtilityMap& map) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << utility_to_json(image_id, map) << '\n';
}

UtilityMap load_utility(const std::filesystem::path& path,
                        std::size_t expected_blocks) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j = json::parse(ss.str(), nullptr, false);
  const auto source = j.is_object() && j.value("source", std::string{}) ==
                                           "external_predictor"
                          ? UtilitySource::external_predictor
                          : UtilitySource::empirical_oracle;
  return parse_utility_json(ss.str(), expected_blocks, source).map;
}

std::uint16_t quantize_share(double value, double total) {
  if (!(total > 0.0)) return 0;
  const double q = std::round(value / total * 65535.0);
  return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
}

std::uint32_t quantize_total(double total) {
  const double q = std::round(total * 65536.0);
  return static_cast<std::uint32_t>(std::clamp(q, 0.0, 4294967295.0));
}

double dequantize_total(std::uint32_t total_q) { return total_q / 65536.0; }

double dequantize_value(std::uint16_t share_q, std::uint32_t total_q) {
  return share_q / 65535.0 * dequantize_total(total_q);
}

QuantizedUtility quantize(const UtilityMap& map) {
  QuantizedUtility q;
  q.total_q = quantize_total(map.total());
  q.shares.reserve(map.size());
  for (double v : map.values()) q.shares.push_back(quantize_share(v, map.total()));
  return q;
}

Bytes encode_quantized(const QuantizedUtility& q) {
  Bytes out;
  auto u32 = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  u32(static_cast<std::uint32_t>(q.shares.size()));
  u32(q.total_q);
  for (auto s : q.shares) {
    out.push_back(static_cast<std::uint8_t>(s >> 8));
    out.push_back(static_cast<std::uint8_t>(s));
  }
  return out;
}

QuantizedUtility decode_quantized(std::span<const std::uint8_t> b) {
  auto u32 = [&](std::size_t at) {
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
           (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
  };
  if (b.size() < 8) throw ParseError("quantized utility truncated");
  const std::uint32_t n = u32(0);
  if (b.size() != 8 + 2 * static_cast<std::size_t>(n)) {
    throw ParseError("quantized utility length mismatch");
  }
  QuantizedUtility q;
  q.total_q = u32(4);
  q.shares.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    q.shares[i] = static_cast<std::uint16_t>((b[8 + 2 * i] << 8) | b[9 + 2 * i]);
  }
  return q;
}

}  // namespace packetstop
