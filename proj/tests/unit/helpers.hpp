#pragma once

#include <atomic>
#include <random>

#include "packetstop/detector.hpp"
#include "packetstop/image.hpp"

namespace testing {

using namespace packetstop;

// Wraps a detector and counts calls.
class CountingDetector final : public Detector {
 public:
  explicit CountingDetector(const Detector& inner) : inner_(inner) {}
  DetectionSet detect(const ImageRaster& observation) const override {
    ++calls_;
    return inner_.detect(observation);
  }
  std::string name() const override { return "counting"; }
  std::size_t calls() const { return calls_.load(); }

 private:
  const Detector& inner_;
  mutable std::atomic<std::size_t> calls_{0};
};

inline ImageRaster random_image(std::mt19937_64& rng, int w, int h, int ch = 1) {
  ImageRaster img(w, h, ch);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng());
  return img;
}

inline ImageRaster filled(int w, int h, std::uint8_t v, int ch = 1) {
  ImageRaster img(w, h, ch);
  for (auto& p : img.pixels()) p = v;
  return img;
}

// Constant-intensity rectangle [x0, x1) x [y0, y1) on black.
inline ImageRaster rect_scene(int w, int h, int x0, int y0, int x1, int y1,
                              std::uint8_t v) {
  ImageRaster img(w, h, 1);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) img.at(x, y) = v;
  return img;
}

}  // namespace testing
