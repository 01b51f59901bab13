#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "packetstop/errors.hpp"
#include "packetstop/experiment.hpp"
#include "packetstop/wire.hpp"

namespace py = pybind11;
using namespace packetstop;

namespace {

py::bytes to_bytes(std::span<const std::uint8_t> b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

Bytes from_bytes(const py::bytes& b) {
  const std::string s = b;
  return Bytes(s.begin(), s.end());
}

ImageRaster make_image(int width, int height, const py::bytes& pixels, int channels) {
  return ImageRaster(width, height, channels, from_bytes(pixels));
}

py::tuple box_tuple(const Box& b) { return py::make_tuple(b.x_min, b.y_min, b.x_max, b.y_max); }

py::list detections(const DetectionSet& set) {
  py::list out;
  for (const auto& d : set.detections()) {
    py::dict e;
    e["class_id"] = d.class_id;
    e["confidence"] = d.confidence;
    e["box"] = box_tuple(d.box);
    out.append(e);
  }
  return out;
}

py::object json_loads(const std::string& text) {
  return py::module_::import("json").attr("loads")(text);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Utility-aware progressive stopping: core bindings";

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<ImageRaster>(m, "Image")
      .def(py::init(&make_image), py::arg("width"), py::arg("height"), py::arg("pixels"),
           py::arg("channels") = 1)
      .def_property_readonly("width", &ImageRaster::width)
      .def_property_readonly("height", &ImageRaster::height)
      .def_property_readonly("channels", &ImageRaster::channels)
      .def_property_readonly("pixels",
                             [](const ImageRaster& im) { return to_bytes(im.pixels()); })
      .def("__eq__", [](const ImageRaster& a, const ImageRaster& b) { return a == b; });

  m.def("load_raster", &load_raster, py::arg("path"));
  m.def("save_raster", &save_raster, py::arg("path"), py::arg("image"));

  m.def(
      "generate_scene",
      [](const std::string& id, std::uint64_t seed, const std::string& profile) {
        const auto p = profile == "large" ? CorpusProfile::large() : CorpusProfile::desk();
        const Scene s = generate(random_scene_spec(id, seed, p));
        py::dict out;
        out["id"] = s.spec.id;
        out["image"] = s.image;
        out["reference_mass"] = s.reference_mass;
        out["pixel_threshold"] = s.spec.pixel_threshold;
        out["min_area"] = s.spec.min_area;
        py::list gt;
        for (const auto& b : s.gt_boxes) gt.append(box_tuple(b));
        out["gt_boxes"] = gt;
        return out;
      },
      py::arg("id"), py::arg("seed"), py::arg("profile") = "desk");

  m.def(
      "detect",
      [](const ImageRaster& image, double reference_mass, int pixel_threshold, int min_area) {
        return detections(
            synthetic_blob_detect(image, {pixel_threshold, min_area, reference_mass}));
      },
      py::arg("image"), py::arg("reference_mass"), py::arg("pixel_threshold") = 128,
      py::arg("min_area") = 16);

  m.def(
      "compute_utility_map",
      [](const ImageRaster& image, double reference_mass, int pixel_threshold, int min_area,
         int block_width, int block_height, double iou_floor) -> std::optional<std::vector<double>> {
        const SyntheticBlobDetector det({pixel_threshold, min_area, reference_mass});
        const auto rec = compute_utility_map(
            image, partition(image, block_width, block_height), det, iou_floor);
        if (!rec) return std::nullopt;
        return rec->map.values();
      },
      py::arg("image"), py::arg("reference_mass"), py::arg("pixel_threshold") = 128,
      py::arg("min_area") = 16, py::arg("block_width") = 32, py::arg("block_height") = 16,
      py::arg("iou_floor") = 0.5);

  m.def(
      "arrival_order",
      [](int cols, int rows, const std::string& order, std::uint64_t seed) {
        BlockGrid g;
        g.cols = cols;
        g.rows = rows;
        return arrival_order(g, arrival_order_from_string(order), seed);
      },
      py::arg("cols"), py::arg("rows"), py::arg("order") = "center_first", py::arg("seed") = 0);

  m.def(
      "simulate",
      [](const ImageRaster& image, std::vector<double> utility, const std::string& policy,
         double reference_mass, const std::string& order, double loss_rate,
         std::uint64_t seed, double inter_arrival_ms, double feedback_delay_ms,
         std::size_t cadence, int pixel_threshold, int min_area, int block_width,
         int block_height) {
        const BlockGrid grid = partition(image, block_width, block_height);
        const SyntheticBlobDetector det({pixel_threshold, min_area, reference_mass});
        const auto sched = build_schedule(grid, arrival_order_from_string(order),
                                          inter_arrival_ms, loss_rate, seed);
        RunTrace t = run(image, grid, UtilityMap(std::move(utility)), det,
                         PolicyConfig::parse(policy), sched,
                         {feedback_delay_ms, cadence, 1e-6});
        t.seed = seed;
        return json_loads(trace_to_json(t, ""));
      },
      py::arg("image"), py::arg("utility"), py::arg("policy"), py::arg("reference_mass"),
      py::arg("order") = "center_first", py::arg("loss_rate") = 0.0, py::arg("seed") = 0,
      py::arg("inter_arrival_ms") = 5.0, py::arg("feedback_delay_ms") = 0.0,
      py::arg("cadence") = 8, py::arg("pixel_threshold") = 128, py::arg("min_area") = 16,
      py::arg("block_width") = 32, py::arg("block_height") = 16);

  m.def(
      "encode_data_frame",
      [](std::uint32_t image_id, std::uint32_t block_id, std::uint32_t n_blocks,
         std::uint16_t utility_q, std::uint32_t total_utility_q, const py::bytes& payload) {
        wire::DataFrame f{image_id, block_id, n_blocks, utility_q, total_utility_q,
                          from_bytes(payload)};
        return to_bytes(wire::encode(f));
      },
      py::arg("image_id"), py::arg("block_id"), py::arg("n_blocks"), py::arg("utility_q"),
      py::arg("total_utility_q"), py::arg("payload"));

  m.def(
      "decode_data_frame",
      [](const py::bytes& b) -> py::object {
        const Bytes raw = from_bytes(b);
        const auto d = wire::decode_data_frame(raw);
        if (!d.ok()) throw ParseError(wire::to_string(d.status));
        py::dict out;
        out["image_id"] = d.frame->image_id;
        out["block_id"] = d.frame->block_id;
        out["n_blocks"] = d.frame->n_blocks;
        out["utility_q"] = d.frame->utility_q;
        out["total_utility_q"] = d.frame->total_utility_q;
        out["payload"] = to_bytes(d.frame->payload);
        return out;
      },
      py::arg("frame"));

  m.def(
      "encode_stop_frame",
      [](std::uint32_t image_id, std::uint32_t stop_step, const std::string& reason) {
        return to_bytes(
            wire::encode(wire::StopFrame{image_id, stop_step, stop_reason_from_string(reason)}));
      },
      py::arg("image_id"), py::arg("stop_step"), py::arg("reason") = "utility_threshold");

  m.def(
      "decode_stop_frame",
      [](const py::bytes& b) -> py::object {
        const Bytes raw = from_bytes(b);
        const auto d = wire::decode_stop_frame(raw);
        if (!d.ok()) throw ParseError(wire::to_string(d.status));
        py::dict out;
        out["image_id"] = d.frame->image_id;
        out["stop_step"] = d.frame->stop_step;
        out["reason"] = to_string(d.frame->reason);
        return out;
      },
      py::arg("frame"));

  m.def("crc32", [](const py::bytes& b) { return wire::crc32(from_bytes(b)); });

  m.def(
      "config_hash",
      [](const std::string& config_json) {
        return config_hash(config_from_json(nlohmann::json::parse(config_json)));
      },
      py::arg("config_json"));

  m.def(
      "run_experiment",
      [](const std::filesystem::path& config_path) {
        const auto cfg = load_config(config_path);
        py::gil_scoped_release release;
        cmd_gen_corpus(cfg);
        cmd_compute_utilities(cfg);
        const auto r = cmd_simulate(cfg);
        return r.traces.size();
      },
      py::arg("config_path"),
      "Generates the corpus, computes utilities and simulates; returns the trace count.");
}
