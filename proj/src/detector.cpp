#include "packetstop/detector.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <numeric>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "packetstop/errors.hpp"

namespace packetstop {

using nlohmann::json;

DetectionSet::DetectionSet(std::vector<Detection> detections, int width,
                           int height)
    : detections_(std::move(detections)), width_(width), height_(height) {
  std::stable_sort(detections_.begin(), detections_.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.confidence > b.confidence;
                   });
}

const Detection* DetectionSet::top(int class_id) const {
  for (const auto& d : detections_) {
    if (d.class_id == class_id) return &d;
  }
  return nullptr;
}

namespace {

struct DisjointSet {
  std::vector<std::uint32_t> parent;

  std::uint32_t add() {
    parent.push_back(static_cast<std::uint32_t>(parent.size()));
    return parent.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent[a] = b;
  }
};

struct Component {
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  std::uint64_t mass = 0;
  std::uint64_t area = 0;
};

}  // namespace

std::vector<BlobComponent> blob_components(const ImageRaster& observation,
                                           int pixel_threshold) {
  const int w = observation.width();
  const int h = observation.height();
  const int ch = observation.channels();
  const auto px = observation.pixels();

  std::vector<int> intensity(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    int sum = 0;
    for (int c = 0; c < ch; ++c) sum += px[i * ch + c];
    intensity[i] = sum / ch;
  }

  // Two-pass labelling with union-find on provisional labels.
  constexpr std::uint32_t kNone = 0xffffffffu;
  std::vector<std::uint32_t> label(intensity.size(), kNone);
  DisjointSet sets;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (intensity[i] < pixel_threshold) continue;
      const std::uint32_t left = x > 0 ? label[i - 1] : kNone;
      const std::uint32_t up = y > 0 ? label[i - w] : kNone;
      if (left == kNone && up == kNone) {
        label[i] = sets.add();
      } else if (left != kNone && up != kNone) {
        sets.unite(left, up);
        label[i] = std::min(left, up);
      } else {
        label[i] = left != kNone ? left : up;
      }
    }
  }

  std::vector<Component> comps;
  std::vector<std::int64_t> root_to_comp(sets.parent.size(), -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (label[i] == kNone) continue;
      const std::uint32_t root = sets.find(label[i]);
      if (root_to_comp[root] < 0) {
        root_to_comp[root] = static_cast<std::int64_t>(comps.size());
        comps.push_back({x, y, x, y, 0, 0});
      }
      Component& c = comps[static_cast<std::size_t>(root_to_comp[root])];
      c.x_min = std::min(c.x_min, x);
      c.x_max = std::max(c.x_max, x);
      c.y_min = std::min(c.y_min, y);
      c.y_max = std::max(c.y_max, y);
      c.mass += static_cast<std::uint64_t>(intensity[i]);
      ++c.area;
    }
  }

  std::vector<BlobComponent> out;
  out.reserve(comps.size());
  for (const auto& c : comps) {
    out.push_back({Box{static_cast<double>(c.x_min), static_cast<double>(c.y_min),
                       static_cast<double>(c.x_max + 1),
                       static_cast<double>(c.y_max + 1)},
                   c.mass, c.area});
  }
  return out;
}

DetectionSet synthetic_blob_detect(const ImageRaster& observation,
                                   const BlobDetectorConfig& config) {
  std::vector<Detection> out;
  for (const auto& c : blob_components(observation, config.pixel_threshold)) {
    if (c.area < static_cast<std::uint64_t>(config.min_area)) continue;
    const double conf = std::clamp(
        static_cast<double>(c.mass) / config.reference_mass, 0.0, 1.0);
    out.push_back({c.box, conf, kHazardClass});
  }
  return DetectionSet(std::move(out), observation.width(), observation.height());
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double match_to_reference(const DetectionSet& candidates,
                          const Detection& reference, double iou_floor) {
  if (!(iou_floor > 0.0 && iou_floor < 1.0)) {
    throw ContractViolation("iou_floor must lie in (0, 1)");
  }
  const Detection* best = nullptr;
  double best_iou = -1.0;
  for (const auto& d : candidates.detections()) {
    if (d.class_id != reference.class_id) continue;
    const double v = iou(d.box, reference.box);
    bool better = v > best_iou;
    if (!better && v == best_iou) {
      better = d.confidence > best->confidence ||
               (d.confidence == best->confidence &&
                d.box.x_min < best->box.x_min);
    }
    if (better) {
      best = &d;
      best_iou = v;
    }
  }
  if (best == nullptr || best_iou <= 0.0) return 0.0;
  if (best_iou >= iou_floor) return best->confidence;
  return best->confidence * (best_iou / iou_floor);
}

// --- line-delimited JSON codec ---------------------------------------------

namespace {

constexpr char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

Bytes base64_decode(const std::string& text) {
  std::array<int, 256> rev;
  rev.fill(-1);
  for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kB64[i])] = i;
  Bytes out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    const int v = rev[static_cast<unsigned char>(c)];
    if (v < 0) throw ParseError("invalid base64 character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

std::string encode_detect_request(const ImageRaster& observation) {
  const json j = {{"width", observation.width()},
                  {"height", observation.height()},
                  {"channels", observation.channels()},
                  {"pixels_b64", base64_encode(observation.pixels())}};
  return j.dump();
}

ImageRaster decode_detect_request(const std::string& line) {
  try {
    const json j = json::parse(line);
    return ImageRaster(j.at("width").get<int>(), j.at("height").get<int>(),
                       j.at("channels").get<int>(),
                       base64_decode(j.at("pixels_b64").get<std::string>()));
  } catch (const json::exception& e) {
    throw ParseError(std::string("detect request: ") + e.what());
  }
}

std::string encode_detect_response(const DetectionSet& detections) {
  json arr = json::array();
  for (const auto& d : detections.detections()) {
    arr.push_back({{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
                   {"confidence", d.confidence},
                   {"class_id", d.class_id}});
  }
  return json{{"detections", arr}}.dump();
}

DetectionSet decode_detect_response(const std::string& line, int width,
                                    int height) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("detect response: ") + e.what());
  }
  if (j.contains("error")) {
    throw IoError("detector error: " + j["error"].dump());
  }
  try {
    std::vector<Detection> out;
    for (const auto& d : j.at("detections")) {
      const auto& b = d.at("box");
      Detection det{Box{b.at(0).get<double>(), b.at(1).get<double>(),
                        b.at(2).get<double>(), b.at(3).get<double>()},
                    d.at("confidence").get<double>(),
                    d.value("class_id", kHazardClass)};
      if (!(det.box.x_min < det.box.x_max && det.box.y_min < det.box.y_max)) {
        throw SchemaError("detection box is degenerate");
      }
      det.confidence = std::clamp(det.confidence, 0.0, 1.0);
      out.push_back(det);
    }
    return DetectionSet(std::move(out), width, height);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("detect response: ") + e.what());
  }
}

// --- subprocess adapter ----------------------------------------------------

SubprocessDetector::SubprocessDetector(std::string command)
    : command_(std::move(command)) {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
    throw IoError("pipe() failed");
  }
  pid_ = fork();
  if (pid_ < 0) throw IoError("fork() failed");
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  std::signal(SIGPIPE, SIG_IGN);
}

SubprocessDetector::~SubprocessDetector() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

DetectionSet SubprocessDetector::detect(const ImageRaster& observation) const {
  std::lock_guard lock(mutex_);
  const std::string request = encode_detect_request(observation) + "\n";
  std::size_t sent = 0;
  while (sent < request.size()) {
    const ssize_t n =
        write(to_child_, request.data() + sent, request.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("detector subprocess closed its input");
    }
    sent += static_cast<std::size_t>(n);
  }
  std::size_t nl;
  while ((nl = buffer_.find('\n')) == std::string::npos) {
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw IoError("detector subprocess exited");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
  const std::string line = buffer_.substr(0, nl);
  buffer_.erase(0, nl + 1);
  return decode_detect_response(line, observation.width(), observation.height());
}

}  // namespace packetstop
