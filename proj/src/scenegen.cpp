#include "packetstop/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <json.hpp>

#include "packetstop/errors.hpp"
#include "packetstop/rng.hpp"

namespace packetstop {

using nlohmann::json;

namespace {

int blob_value(const BlobSpec& b, int x, int y) {
  const double dx = (x + 0.5 - b.cx) / b.ax;
  const double dy = (y + 0.5 - b.cy) / b.ay;
  const double d2 = dx * dx + dy * dy;
  if (d2 >= 1.0) return 0;
  return static_cast<int>(std::floor(b.peak * (1.0 - d2)));
}

void validate(const SceneSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0) {
    throw SpecError(spec.id + ": scene dimensions must be positive");
  }
  if (spec.blobs.empty()) throw SpecError(spec.id + ": scene needs a blob");
  if (spec.noise_level < 0 || spec.noise_level >= spec.pixel_threshold) {
    throw SpecError(spec.id + ": noise must stay below the pixel threshold");
  }
  for (const auto& b : spec.blobs) {
    if (!(b.ax > 0 && b.ay > 0) || b.cx - b.ax < 0 || b.cx + b.ax > spec.width ||
        b.cy - b.ay < 0 || b.cy + b.ay > spec.height) {
      throw SpecError(spec.id + ": blob extends outside the image");
    }
    if (b.peak < spec.pixel_threshold || b.peak > 255) {
      throw SpecError(spec.id + ": blob peak must be in [threshold, 255]");
    }
  }
}

}  // namespace

CorpusProfile CorpusProfile::large() {
  CorpusProfile p;
  p.width = 640;
  p.height = 320;
  p.axis_x_min *= 2.5;
  p.axis_x_max *= 2.5;
  p.axis_y_min *= 2.5;
  p.axis_y_max *= 2.5;
  return p;
}

Scene generate(const SceneSpec& spec) {
  validate(spec);
  Scene scene;
  scene.spec = spec;
  scene.image = ImageRaster(spec.width, spec.height, 1);

  std::mt19937_64 rng(derive_seed(spec.seed, kSceneStream));
  const auto noise_bound = static_cast<std::size_t>(spec.noise_level) + 1;

  std::vector<Box> boxes(spec.blobs.size());
  std::vector<std::size_t> areas(spec.blobs.size(), 0);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      int v = static_cast<int>(uniform_index(rng, noise_bound));
      for (std::size_t b = 0; b < spec.blobs.size(); ++b) {
        const int bv = blob_value(spec.blobs[b], x, y);
        if (bv >= spec.pixel_threshold) {
          Box& box = boxes[b];
          if (areas[b] == 0) {
            box = {double(x), double(y), double(x + 1), double(y + 1)};
          } else {
            box.x_min = std::min(box.x_min, double(x));
            box.y_min = std::min(box.y_min, double(y));
            box.x_max = std::max(box.x_max, double(x + 1));
            box.y_max = std::max(box.y_max, double(y + 1));
          }
          ++areas[b];
        }
        v = std::max(v, bv);
      }
      scene.image.at(x, y) = static_cast<std::uint8_t>(v);
    }
  }
  for (std::size_t b = 0; b < areas.size(); ++b) {
    if (areas[b] < static_cast<std::size_t>(spec.min_area)) {
      throw SpecError(spec.id + ": blob is smaller than the detector minimum");
    }
  }
  scene.gt_boxes = std::move(boxes);

  std::uint64_t top_mass = 0;
  for (const auto& c : blob_components(scene.image, spec.pixel_threshold)) {
    top_mass = std::max(top_mass, c.mass);
  }
  // Integral reference keeps the full-scene confidence at or just above the
  // target instead of a hair below it.
  scene.reference_mass = std::max(
      1.0, std::floor(static_cast<double>(top_mass) / spec.target_confidence));
  return scene;
}

SceneSpec random_scene_spec(const std::string& id, std::uint64_t seed,
                            const CorpusProfile& profile) {
  std::mt19937_64 rng(derive_seed(seed, kSceneStream ^ 0x5eedULL));
  SceneSpec spec;
  spec.id = id;
  spec.width = profile.width;
  spec.height = profile.height;
  spec.noise_level = profile.noise_level;
  spec.seed = seed;
  spec.target_confidence = profile.target_confidence;
  for (int i = 0; i < profile.blob_count; ++i) {
    BlobSpec b;
    b.ax = std::min(uniform_real(rng, profile.axis_x_min, profile.axis_x_max),
                    profile.width / 2.0);
    b.ay = std::min(uniform_real(rng, profile.axis_y_min, profile.axis_y_max),
                    profile.height / 2.0);
    b.peak = profile.peak_min +
             static_cast<int>(uniform_index(
                 rng, static_cast<std::size_t>(profile.peak_max - profile.peak_min + 1)));
    const bool central = unit_double(rng) < profile.center_bias;
    const double spread = central ? 0.25 : 1.0;
    const double hx = profile.width / 2.0 - b.ax;
    const double hy = profile.height / 2.0 - b.ay;
    b.cx = profile.width / 2.0 + uniform_real(rng, -1.0, 1.0) * hx * spread;
    b.cy = profile.height / 2.0 + uniform_real(rng, -1.0, 1.0) * hy * spread;
    spec.blobs.push_back(b);
  }
  return spec;
}

std::vector<SceneSpec> corpus_specs(std::size_t n, std::uint64_t master_seed,
                                    const CorpusProfile& profile) {
  std::vector<SceneSpec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04zu", i);
    out.push_back(random_scene_spec(id, splitmix64(master_seed + i), profile));
  }
  return out;
}

std::string manifest_json(const std::vector<Scene>& scenes,
                          std::uint64_t master_seed) {
  json arr = json::array();
  for (const auto& s : scenes) {
    json blobs = json::array();
    for (const auto& b : s.spec.blobs) {
      blobs.push_back({{"cx", b.cx}, {"cy", b.cy}, {"ax", b.ax}, {"ay", b.ay},
                       {"peak", b.peak}});
    }
    json gt = json::array();
    for (const auto& g : s.gt_boxes) {
      gt.push_back({g.x_min, g.y_min, g.x_max, g.y_max});
    }
    arr.push_back({{"id", s.spec.id},
                   {"file", s.spec.id + ".psr"},
                   {"width", s.spec.width},
                   {"height", s.spec.height},
                   {"seed", s.spec.seed},
                   {"noise_level", s.spec.noise_level},
                   {"pixel_threshold", s.spec.pixel_threshold},
                   {"min_area", s.spec.min_area},
                   {"target_confidence", s.spec.target_confidence},
                   {"reference_mass", s.reference_mass},
                   {"blobs", blobs},
                   {"gt_boxes", gt}});
  }
  return json{{"version", 1}, {"master_seed", master_seed}, {"scenes", arr}}
      .dump(1);
}

void write_corpus(const std::filesystem::path& dir,
                  const std::vector<Scene>& scenes, std::uint64_t master_seed) {
  std::filesystem::create_directories(dir);
  for (const auto& s : scenes) save_raster(dir / (s.spec.id + ".psr"), s.image);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest_json(scenes, master_seed) << '\n';
}

std::vector<CorpusEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  std::vector<CorpusEntry> out;
  try {
    for (const auto& s : j.at("scenes")) {
      CorpusEntry e;
      e.id = s.at("id").get<std::string>();
      e.file = dir / s.at("file").get<std::string>();
      e.reference_mass = s.at("reference_mass").get<double>();
      e.pixel_threshold = s.value("pixel_threshold", 128);
      e.min_area = s.value("min_area", 16);
      for (const auto& g : s.at("gt_boxes")) {
        e.gt_boxes.push_back({g.at(0).get<double>(), g.at(1).get<double>(),
                              g.at(2).get<double>(), g.at(3).get<double>()});
      }
      out.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
  return out;
}

}  // namespace packetstop
