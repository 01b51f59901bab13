#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "packetstop/errors.hpp"
#include "packetstop/scenegen.hpp"

using namespace packetstop;
using testing::rect_scene;

namespace {

oracle::Img to_oracle(const ImageRaster& img) {
  return {img.width(), img.height(), img.channels(),
          std::vector<std::uint8_t>(img.pixels().begin(), img.pixels().end())};
}

}  // namespace

TEST_CASE("synthetic detector basics") {
  const SyntheticBlobDetector det;
  CHECK(det.detect(ImageRaster(64, 32, 1)).empty());

  const auto img = rect_scene(64, 32, 10, 5, 30, 15, 200);
  const auto a = det.detect(img);
  const auto b = det.detect(img);
  CHECK(a == b);
}

TEST_CASE("constant blob at reference mass has confidence 1") {
  const auto img = rect_scene(64, 32, 10, 5, 30, 15, 200);
  const double mass = 20.0 * 10.0 * 200.0;
  const auto d = synthetic_blob_detect(img, {128, 16, mass});
  REQUIRE(d.size() == 1);
  CHECK(d.detections()[0].confidence == 1.0);
  CHECK(d.detections()[0].box == Box{10, 5, 30, 15});

  // Over-bright input clamps at 1.
  CHECK(synthetic_blob_detect(img, {128, 16, mass / 2}).detections()[0].confidence == 1.0);
}

TEST_CASE("half-masked blob matches the pixel-sum oracle") {
  // Blob spans blocks 0 and 1 of a 2x1-block image.
  const auto img = rect_scene(64, 16, 8, 2, 56, 14, 180);
  const auto g = partition(img);
  const double mass = 48.0 * 12.0 * 180.0;
  const BlobDetectorConfig cfg{128, 16, mass};
  const auto masked = mask_block(img, g, 1);
  const auto got = synthetic_blob_detect(masked, cfg);
  REQUIRE(got.size() == 1);

  long long visible = 0;
  for (auto p : masked.pixels()) visible += p >= 128 ? p : 0;
  CHECK(got.detections()[0].confidence == doctest::Approx(visible / mass).epsilon(1e-12));
  CHECK(got.detections()[0].confidence == doctest::Approx(0.5));
}

TEST_CASE("components below min_area are dropped") {
  auto img = rect_scene(64, 32, 0, 0, 3, 5, 255);  // area 15
  CHECK(synthetic_blob_detect(img, {128, 16, 1000}).empty());
  img.at(3, 0) = 255;  // area 16
  CHECK(synthetic_blob_detect(img, {128, 16, 1000}).size() == 1);
}

TEST_CASE("diagonal pixels are separate components") {
  ImageRaster img(32, 16, 1);
  for (int i = 0; i < 10; ++i) img.at(i, i) = 250;
  CHECK(blob_components(img, 128).size() == 10);
}

TEST_CASE("rgb uses the integer channel mean") {
  ImageRaster img(32, 16, 3);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      img.at(x, y, 0) = 255;
      img.at(x, y, 1) = 128;
      img.at(x, y, 2) = 2;  // mean 128.33 -> 128
    }
  }
  const auto d = synthetic_blob_detect(img, {128, 16, 16 * 128.0});
  REQUIRE(d.size() == 1);
  CHECK(d.detections()[0].confidence == 1.0);
  img.at(0, 0, 2) = 0;  // mean 127.67 -> 127, pixel drops out
  CHECK(synthetic_blob_detect(img, {128, 16, 16 * 128.0}).empty());
}

TEST_CASE("detector agrees with the flood-fill oracle on random scenes") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    ImageRaster img(64, 48, 1);
    for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng() % 256 < 90 ? 200 : 20);
    const BlobDetectorConfig cfg{128, 4, 5000.0};
    const auto got = synthetic_blob_detect(img, cfg);
    auto want = oracle::flood_detect(to_oracle(img), 128, 4, 5000.0);
    std::stable_sort(want.begin(), want.end(),
                     [](const auto& a, const auto& b) { return a.conf > b.conf; });
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      const auto& d = got.detections()[i];
      CHECK(d.box == Box{want[i].box.x0, want[i].box.y0, want[i].box.x1, want[i].box.y1});
      CHECK(d.confidence == want[i].conf);
    }
  }
}

TEST_CASE("iou") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, Box{10, 0, 20, 10}) == 0.0);  // touching edges
  CHECK(iou(a, Box{5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0));
  CHECK(iou(a, Box{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("match_to_reference") {
  const Detection ref{{0, 0, 10, 10}, 0.9, kHazardClass};
  CHECK(match_to_reference(DetectionSet{}, ref) == 0.0);
  CHECK(match_to_reference(DetectionSet({ref}, 64, 32), ref) == doctest::Approx(0.9));

  // IoU 0.25: [0,10]x[0,10] vs [0,10]x[0,4] plus... use a box of area 25 inside.
  const Detection quarter{{0, 0, 5, 5}, 0.8, kHazardClass};
  CHECK(iou(quarter.box, ref.box) == doctest::Approx(0.25));
  CHECK(match_to_reference(DetectionSet({quarter}, 64, 32), ref, 0.5) ==
        doctest::Approx(0.8 * (0.25 / 0.5)));
  CHECK(match_to_reference(DetectionSet({quarter}, 64, 32), ref, 0.5) ==
        doctest::Approx(0.4));

  // Disjoint candidates never count.
  const Detection far{{40, 20, 50, 30}, 1.0, kHazardClass};
  CHECK(match_to_reference(DetectionSet({far}, 64, 32), ref) == 0.0);

  // Best overlap wins over higher confidence.
  CHECK(match_to_reference(DetectionSet({far, quarter, ref}, 64, 32), ref) ==
        doctest::Approx(0.9));

  CHECK_THROWS_AS(match_to_reference(DetectionSet{}, ref, 0.0), ContractViolation);
  CHECK_THROWS_AS(match_to_reference(DetectionSet{}, ref, 1.0), ContractViolation);
}

TEST_CASE("detection set ordering") {
  const DetectionSet s({{{0, 0, 1, 1}, 0.2, 0}, {{1, 0, 2, 1}, 0.7, 0}, {{2, 0, 3, 1}, 0.7, 0}},
                       8, 8);
  CHECK(s.detections()[0].box.x_min == 1);
  CHECK(s.detections()[1].box.x_min == 2);
  CHECK(s.top()->confidence == 0.7);
  CHECK(s.top(3) == nullptr);
}

TEST_CASE("jsonl codec and subprocess adapter") {
  const auto img = rect_scene(64, 32, 10, 5, 30, 15, 200);
  CHECK(decode_detect_request(encode_detect_request(img)) == img);
  const auto d = synthetic_blob_detect(img, {128, 16, 50000});
  CHECK(decode_detect_response(encode_detect_response(d), 64, 32) == d);
  CHECK_THROWS_AS(decode_detect_response("{not json", 64, 32), ParseError);
  CHECK_THROWS_AS(decode_detect_response(R"({"detections":[{"box":[1,2]}]})", 64, 32),
                  SchemaError);

  for (std::size_t n : {0u, 1u, 2u, 3u, 4u, 100u}) {
    Bytes b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>(i * 37);
    CHECK(base64_decode(base64_encode(b)) == b);
  }
  CHECK(base64_encode(Bytes{'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode(Bytes{'M'}) == "TQ==");

#ifdef PACKETSTOP_CLI_PATH
  const std::string cmd = std::string(PACKETSTOP_CLI_PATH) +
                          " serve-detector --reference-mass 50000";
  SubprocessDetector sub(cmd);
  CHECK(sub.detect(img) == d);
  CHECK(sub.detect(ImageRaster(64, 32, 1)).empty());
#endif
}
