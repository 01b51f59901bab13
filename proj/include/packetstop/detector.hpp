#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "packetstop/image.hpp"

namespace packetstop {

inline constexpr int kHazardClass = 0;

// Continuous pixel coordinates; a single pixel at (x, y) is the box
// (x, y, x + 1, y + 1).
struct Box {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool operator==(const Box&) const = default;
};

struct Detection {
  Box box;
  double confidence = 0;
  int class_id = kHazardClass;

  bool operator==(const Detection&) const = default;
};

/// Detections sorted by confidence, highest first (stable for ties).
class DetectionSet {
 public:
  DetectionSet() = default;
  DetectionSet(std::vector<Detection> detections, int width, int height);

  const std::vector<Detection>& detections() const { return detections_; }
  bool empty() const { return detections_.empty(); }
  std::size_t size() const { return detections_.size(); }
  int width() const { return width_; }
  int height() const { return height_; }

  // Highest-confidence detection of the class, or nullptr.
  const Detection* top(int class_id = kHazardClass) const;

  bool operator==(const DetectionSet&) const = default;

 private:
  std::vector<Detection> detections_;
  int width_ = 0;
  int height_ = 0;
};

/// Task oracle f(x). Implementations must be deterministic in the input
/// bytes and safe to call concurrently.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual DetectionSet detect(const ImageRaster& observation) const = 0;
  virtual std::string name() const = 0;
};

struct BlobDetectorConfig {
  int pixel_threshold = 128;
  int min_area = 16;
  double reference_mass = 1.0;
};

struct BlobComponent {
  Box box;
  std::uint64_t mass = 0;  // sum of above-threshold intensities
  std::uint64_t area = 0;
};

// 4-connected components of pixels with intensity >= threshold, in order of
// first pixel in raster scan.
std::vector<BlobComponent> blob_components(const ImageRaster& observation,
                                           int pixel_threshold);

/// Thresholded 4-connected components. Confidence is the visible
/// above-threshold mass of a component over `reference_mass`, clamped to
/// [0, 1]. Multi-channel inputs use the integer channel mean as intensity.
DetectionSet synthetic_blob_detect(const ImageRaster& observation,
                                   const BlobDetectorConfig& config);

class SyntheticBlobDetector final : public Detector {
 public:
  explicit SyntheticBlobDetector(BlobDetectorConfig config = {})
      : config_(config) {}
  DetectionSet detect(const ImageRaster& observation) const override {
    return synthetic_blob_detect(observation, config_);
  }
  std::string name() const override { return "synthetic_blob"; }
  const BlobDetectorConfig& config() const { return config_; }

 private:
  BlobDetectorConfig config_;
};

double iou(const Box& a, const Box& b);

/// Task-consistent matched confidence of `candidates` against a reference
/// detection. Below `iou_floor` the confidence is scaled by iou / iou_floor.
double match_to_reference(const DetectionSet& candidates,
                          const Detection& reference, double iou_floor = 0.5);

/// Adapter for an out-of-process detector speaking line-delimited JSON on
/// stdin/stdout. See docs/protocol.md for the request/response schema.
class SubprocessDetector final : public Detector {
 public:
  explicit SubprocessDetector(std::string command);
  ~SubprocessDetector() override;
  SubprocessDetector(const SubprocessDetector&) = delete;
  SubprocessDetector& operator=(const SubprocessDetector&) = delete;

  DetectionSet detect(const ImageRaster& observation) const override;
  std::string name() const override { return "subprocess"; }

 private:
  std::string command_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  mutable std::mutex mutex_;
  mutable std::string buffer_;
};

// JSON line codec shared by the subprocess adapter and `serve-detector`.
std::string encode_detect_request(const ImageRaster& observation);
ImageRaster decode_detect_request(const std::string& line);
std::string encode_detect_response(const DetectionSet& detections);
DetectionSet decode_detect_response(const std::string& line, int width,
                                    int height);

std::string base64_encode(std::span<const std::uint8_t> bytes);
Bytes base64_decode(const std::string& text);

}  // namespace packetstop
