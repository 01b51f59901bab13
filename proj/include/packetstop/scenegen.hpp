#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "packetstop/detector.hpp"
#include "packetstop/image.hpp"

namespace packetstop {

// Elliptical blob with quadratic radial falloff:
//   I(d) = peak * (1 - d^2),  d^2 = ((x-cx)/ax)^2 + ((y-cy)/ay)^2 < 1.
struct BlobSpec {
  double cx = 0;
  double cy = 0;
  double ax = 0;
  double ay = 0;
  int peak = 255;

  bool operator==(const BlobSpec&) const = default;
};

struct SceneSpec {
  std::string id;
  int width = 256;
  int height = 128;
  std::vector<BlobSpec> blobs;
  int noise_level = 60;  // background noise is uniform in [0, noise_level]
  std::uint64_t seed = 0;
  int pixel_threshold = 128;
  int min_area = 16;
  double target_confidence = 0.9;
};

struct Scene {
  SceneSpec spec;
  ImageRaster image;
  std::vector<Box> gt_boxes;  // one per blob
  double reference_mass = 1.0;

  BlobDetectorConfig detector_config() const {
    return {spec.pixel_threshold, spec.min_area, reference_mass};
  }
};

/// Deterministic in the spec. Throws SpecError for blobs leaving the image,
/// a noise level reaching the pixel threshold, or a blob whose
/// above-threshold area is below min_area.
Scene generate(const SceneSpec& spec);

struct CorpusProfile {
  int width = 256;
  int height = 128;
  int blob_count = 1;
  double axis_x_min = 24, axis_x_max = 96;
  double axis_y_min = 12, axis_y_max = 56;
  int peak_min = 200, peak_max = 255;
  int noise_level = 60;
  // Probability that a blob is placed in the central quarter of its range.
  double center_bias = 0.5;
  double target_confidence = 0.9;

  static CorpusProfile desk() { return {}; }
  static CorpusProfile large();
};

SceneSpec random_scene_spec(const std::string& id, std::uint64_t seed,
                            const CorpusProfile& profile);

std::vector<SceneSpec> corpus_specs(std::size_t n, std::uint64_t master_seed,
                                    const CorpusProfile& profile);

// Writes <dir>/<id>.psr for each scene plus <dir>/manifest.json.
void write_corpus(const std::filesystem::path& dir,
                  const std::vector<Scene>& scenes, std::uint64_t master_seed);

struct CorpusEntry {
  std::string id;
  std::filesystem::path file;
  std::vector<Box> gt_boxes;
  double reference_mass = 1.0;
  int pixel_threshold = 128;
  int min_area = 16;
};

std::vector<CorpusEntry> read_manifest(const std::filesystem::path& dir);

std::string manifest_json(const std::vector<Scene>& scenes,
                          std::uint64_t master_seed);

}  // namespace packetstop
