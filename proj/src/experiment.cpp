#include "packetstop/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <mutex>
#include <sstream>
#include <thread>

#include "packetstop/errors.hpp"

namespace packetstop {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

json policy_to_json(const PolicyConfig& p) {
  json j = {{"kind", to_string(p.kind)}};
  switch (p.kind) {
    case PolicyKind::utility:
      j["tau_rho"] = p.tau_rho;
      break;
    case PolicyKind::stability:
      j["conf_floor"] = p.conf_floor;
      j["iou_floor"] = p.iou_floor;
      j["window"] = p.window;
      break;
    case PolicyKind::full:
      break;
  }
  return j;
}

PolicyConfig policy_from_json(const json& j) {
  PolicyConfig p;
  p.kind = policy_kind_from_string(j.at("kind").get<std::string>());
  p.tau_rho = j.value("tau_rho", p.tau_rho);
  p.conf_floor = j.value("conf_floor", p.conf_floor);
  p.iou_floor = j.value("iou_floor", p.iou_floor);
  p.window = j.value("window", p.window);
  if (p.kind == PolicyKind::utility && !(p.tau_rho >= 0.0 && p.tau_rho <= 1.0)) {
    throw SchemaError("tau_rho must lie in [0, 1]");
  }
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

unsigned worker_count(unsigned requested, std::size_t jobs) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

// Runs fn(i) for i in [0, jobs) on a small pool. The first exception is
// rethrown after all workers stop.
void parallel_for(std::size_t jobs, unsigned threads,
                  const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(jobs);
      }
    }
  };
  const unsigned n = worker_count(threads, jobs);
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos;
       pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t image_seed(const std::string& image_id, std::uint64_t seed) {
  std::uint64_t h = fnv1a64(image_id);
  for (int i = 0; i < 8; ++i) {
    h ^= (seed >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json config_to_json(const ExperimentConfig& c) {
  json policies = json::array();
  for (const auto& p : c.policies) policies.push_back(policy_to_json(p));
  json orders = json::array();
  for (auto o : c.orders) orders.push_back(to_string(o));
  return {
      {"version", c.version},
      {"corpus",
       {{"dir", c.corpus_dir.generic_string()},
        {"n_scenes", c.n_scenes},
        {"master_seed", c.master_seed},
        {"profile", c.profile},
        {"center_bias", c.center_bias}}},
      {"detector", {{"name", c.detector.name}, {"command", c.detector.command}}},
      {"block", {{"width", c.block_width}, {"height", c.block_height}}},
      {"policies", policies},
      {"orders", orders},
      {"loss_rates", c.loss_rates},
      {"seeds", c.seeds},
      {"inter_arrival_ms", c.inter_arrival_ms},
      {"feedback_delay_ms", c.feedback_delay_ms},
      {"cadence", c.cadence},
      {"iou_floor", c.iou_floor},
      {"epsilon", c.epsilon},
      {"utility_dir", c.utility_dir.generic_string()},
      {"output_dir", c.output_dir.generic_string()},
      {"trace_events", c.trace_events},
      {"threads", c.threads},
  };
}

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    c.version = j.value("version", kConfigVersion);
    if (c.version != kConfigVersion) {
      throw SchemaError("unsupported config version " + std::to_string(c.version));
    }
    if (j.contains("corpus")) {
      const json& k = j.at("corpus");
      c.corpus_dir = k.value("dir", c.corpus_dir.string());
      c.n_scenes = k.value("n_scenes", c.n_scenes);
      c.master_seed = k.value("master_seed", c.master_seed);
      c.profile = k.value("profile", c.profile);
      c.center_bias = k.value("center_bias", c.center_bias);
    }
    if (j.contains("detector")) {
      c.detector.name = j.at("detector").value("name", c.detector.name);
      c.detector.command = j.at("detector").value("command", c.detector.command);
    }
    if (j.contains("block")) {
      c.block_width = j.at("block").value("width", c.block_width);
      c.block_height = j.at("block").value("height", c.block_height);
    }
    if (j.contains("policies")) {
      c.policies.clear();
      for (const auto& p : j.at("policies")) c.policies.push_back(policy_from_json(p));
    }
    if (j.contains("orders")) {
      c.orders.clear();
      for (const auto& o : j.at("orders")) {
        c.orders.push_back(arrival_order_from_string(o.get<std::string>()));
      }
    }
    c.loss_rates = j.value("loss_rates", c.loss_rates);
    c.seeds = j.value("seeds", c.seeds);
    c.inter_arrival_ms = j.value("inter_arrival_ms", c.inter_arrival_ms);
    c.feedback_delay_ms = j.value("feedback_delay_ms", c.feedback_delay_ms);
    c.cadence = j.value("cadence", c.cadence);
    c.iou_floor = j.value("iou_floor", c.iou_floor);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.utility_dir = j.value("utility_dir", c.utility_dir.string());
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.trace_events = j.value("trace_events", c.trace_events);
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  if (c.detector.name != "synthetic_blob" && c.detector.name != "subprocess") {
    throw SchemaError("unknown detector " + c.detector.name);
  }
  if (c.detector.name == "subprocess" && c.detector.command.empty()) {
    throw SchemaError("subprocess detector needs a command");
  }
  if (c.profile != "desk" && c.profile != "large") {
    throw SchemaError("unknown corpus profile " + c.profile);
  }
  for (double l : c.loss_rates) {
    if (!(l >= 0.0 && l < 1.0)) throw SchemaError("loss rates must lie in [0, 1)");
  }
  if (c.cadence == 0) throw SchemaError("cadence must be positive");
  if (c.policies.empty() || c.orders.empty() || c.loss_rates.empty() ||
      c.seeds.empty()) {
    throw SchemaError("policies, orders, loss_rates and seeds must be non-empty");
  }
  c.corpus_dir = resolve(base_dir, c.corpus_dir);
  c.utility_dir = resolve(base_dir, c.utility_dir);
  c.output_dir = resolve(base_dir, c.output_dir);
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
  json j = config_to_json(config);
  j.erase("threads");
  j.erase("output_dir");
  j.erase("utility_dir");
  j["corpus"].erase("dir");
  return hex64(fnv1a64(j.dump()));
}

CorpusProfile profile_from_config(const ExperimentConfig& config) {
  CorpusProfile p = config.profile == "large" ? CorpusProfile::large()
                                              : CorpusProfile::desk();
  p.center_bias = config.center_bias;
  return p;
}

BlockGrid grid_for(const ExperimentConfig& config, const ImageMeta& meta) {
  return partition(meta, config.block_width, config.block_height);
}

std::vector<LoadedScene> load_corpus(const fs::path& dir) {
  std::vector<LoadedScene> scenes;
  for (auto& e : read_manifest(dir)) {
    LoadedScene s;
    s.id = e.id;
    s.image = load_raster(e.file);
    s.gt_boxes = std::move(e.gt_boxes);
    s.detector = {e.pixel_threshold, e.min_area, e.reference_mass};
    scenes.push_back(std::move(s));
  }
  return scenes;
}

DetectorFactory::DetectorFactory(DetectorSpec spec) : spec_(std::move(spec)) {
  if (spec_.name == "subprocess" && spec_.command.find('{') == std::string::npos) {
    shared_ = std::make_shared<SubprocessDetector>(spec_.command);
  }
}

std::shared_ptr<const Detector> DetectorFactory::for_scene(
    const BlobDetectorConfig& scene) const {
  if (shared_) return shared_;
  if (spec_.name == "synthetic_blob") {
    return std::make_shared<SyntheticBlobDetector>(scene);
  }
  std::string cmd = spec_.command;
  cmd = replace_all(cmd, "{reference_mass}", fmt_fixed(scene.reference_mass, 6));
  cmd = replace_all(cmd, "{pixel_threshold}", std::to_string(scene.pixel_threshold));
  cmd = replace_all(cmd, "{min_area}", std::to_string(scene.min_area));
  return std::make_shared<SubprocessDetector>(cmd);
}

std::string CommandManifest::dump() const {
  json j = {{"command", command},
            {"config_hash", config_hash},
            {"inputs", inputs},
            {"outputs", outputs}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j.dump(1) + "\n";
}

CommandManifest cmd_gen_corpus(const ExperimentConfig& config) {
  const auto specs =
      corpus_specs(config.n_scenes, config.master_seed, profile_from_config(config));
  std::vector<Scene> scenes(specs.size());
  parallel_for(specs.size(), config.threads,
               [&](std::size_t i) { scenes[i] = generate(specs[i]); });
  write_corpus(config.corpus_dir, scenes, config.master_seed);

  CommandManifest m;
  m.command = "gen-corpus";
  m.config_hash = config_hash(config);
  for (const auto& s : scenes) m.outputs.push_back(s.spec.id + ".psr");
  m.outputs.push_back("manifest.json");
  m.extra["n_scenes"] = scenes.size();
  write_text(config.corpus_dir / "gen_corpus.manifest.json", m.dump());
  return m;
}

namespace {

struct SceneUtility {
  std::optional<UtilityMap> map;
};

std::vector<SceneUtility> utilities_for(const ExperimentConfig& config,
                                        const std::vector<LoadedScene>& scenes,
                                        const DetectorFactory& detectors,
                                        bool prefer_files) {
  std::vector<SceneUtility> out(scenes.size());
  parallel_for(scenes.size(), config.threads, [&](std::size_t i) {
    const LoadedScene& s = scenes[i];
    const BlockGrid grid = grid_for(config, s.image.meta());
    const fs::path file = config.utility_dir / (s.id + ".json");
    if (prefer_files && fs::exists(file)) {
      UtilityMap m = load_utility(file, grid.n_blocks());
      if (m.total() > 0.0) out[i].map = std::move(m);
      return;
    }
    const auto det = detectors.for_scene(s.detector);
    auto rec = compute_utility_map(s.image, grid, *det, config.iou_floor, s.id);
    if (rec) out[i].map = std::move(rec->map);
  });
  return out;
}

}  // namespace

UtilityRun cmd_compute_utilities(const ExperimentConfig& config) {
  const auto scenes = load_corpus(config.corpus_dir);
  const DetectorFactory detectors(config.detector);
  const auto maps = utilities_for(config, scenes, detectors, false);
  const std::string hash = config_hash(config);

  UtilityRun run;
  fs::create_directories(config.utility_dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const std::string& id = scenes[i].id;
    if (!maps[i].map) {
      run.excluded.push_back(id);
      continue;
    }
    json j = json::parse(utility_to_json(id, *maps[i].map));
    j["config_hash"] = hash;
    write_text(config.utility_dir / (id + ".json"), j.dump() + "\n");
    run.written.push_back(id + ".json");
  }
  run.manifest.command = "compute-utilities";
  run.manifest.config_hash = hash;
  run.manifest.inputs.push_back(config.corpus_dir.generic_string() + "/manifest.json");
  run.manifest.outputs = run.written;
  run.manifest.extra["excluded"] = run.excluded;
  write_text(config.utility_dir / "compute_utilities.manifest.json", run.manifest.dump());
  return run;
}

SimulationRun simulate_in_memory(const ExperimentConfig& config,
                                 const ProgressFn& progress) {
  const auto scenes = load_corpus(config.corpus_dir);
  const DetectorFactory detectors(config.detector);
  const auto maps = utilities_for(config, scenes, detectors, true);

  std::vector<std::vector<RunTrace>> per_scene(scenes.size());
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;
  parallel_for(scenes.size(), config.threads, [&](std::size_t i) {
    const LoadedScene& s = scenes[i];
    if (!maps[i].map) return;
    const BlockGrid grid = grid_for(config, s.image.meta());
    const auto det = detectors.for_scene(s.detector);
    const SimulationOptions opts{config.feedback_delay_ms, config.cadence,
                                 config.epsilon};
    auto& out = per_scene[i];
    for (std::uint64_t seed : config.seeds) {
      for (ArrivalOrder order : config.orders) {
        for (double loss : config.loss_rates) {
          const auto schedule = build_schedule(grid, order, config.inter_arrival_ms,
                                               loss, image_seed(s.id, seed));
          for (const auto& policy : config.policies) {
            RunTrace t = run(s.image, grid, *maps[i].map, *det, policy, schedule, opts);
            t.image_id = s.id;
            t.seed = seed;
            t.matched = match_success(t.final_detections, s.gt_boxes);
            out.push_back(std::move(t));
          }
        }
      }
    }
    const std::size_t k = ++done;
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress("simulated " + std::to_string(k) + "/" + std::to_string(scenes.size()));
    }
  });

  SimulationRun result;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (!maps[i].map) result.excluded.push_back(scenes[i].id);
    for (auto& t : per_scene[i]) result.traces.push_back(std::move(t));
  }
  result.rows = aggregate(result.traces);
  result.manifest.command = "simulate";
  result.manifest.config_hash = config_hash(config);
  result.manifest.inputs.push_back(config.corpus_dir.generic_string() + "/manifest.json");
  result.manifest.inputs.push_back(config.utility_dir.generic_string());
  result.manifest.outputs = {"traces.jsonl", "aggregate.csv", "aggregate.json",
                             "plot_data.csv"};
  result.manifest.extra["n_traces"] = result.traces.size();
  result.manifest.extra["excluded"] = result.excluded;
  result.manifest.extra["config"] = config_to_json(config);
  result.manifest.extra["config"].erase("threads");
  return result;
}

SimulationRun cmd_simulate(const ExperimentConfig& config, const ProgressFn& progress) {
  SimulationRun r = simulate_in_memory(config, progress);
  const std::string& hash = r.manifest.config_hash;
  const fs::path& out = config.output_dir;
  std::string traces;
  for (const auto& t : r.traces) traces += trace_to_json(t, hash, config.trace_events) + "\n";
  write_text(out / "traces.jsonl", traces);
  write_text(out / "aggregate.csv", aggregate_csv(r.rows, hash));
  write_text(out / "aggregate.json", aggregate_json(r.rows, hash) + "\n");
  write_text(out / "plot_data.csv", plot_data_csv(r.rows, hash));
  write_text(out / "manifest.json", r.manifest.dump());
  return r;
}

std::string trace_to_json(const RunTrace& t, const std::string& config_hash,
                          bool with_events) {
  json dets = json::array();
  for (const auto& d : t.final_detections.detections()) {
    dets.push_back({d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max,
                    d.confidence, d.class_id});
  }
  json j = {{"config_hash", config_hash},
            {"image_id", t.image_id},
            {"policy", t.policy},
            {"order", to_string(t.order)},
            {"loss_rate", t.loss_rate},
            {"seed", t.seed},
            {"inter_arrival_ms", t.inter_arrival_ms},
            {"feedback_delay_ms", t.feedback_delay_ms},
            {"trigger_index", t.trigger_index},
            {"stop_step", t.stop_step},
            {"reason", to_string(t.reason)},
            {"in_flight", t.in_flight},
            {"events_elapsed", t.events_elapsed},
            {"packets_delivered", t.packets_delivered},
            {"stop_time_ms", t.stop_time_ms},
            {"detector_calls", t.detector_calls},
            {"matched", t.matched},
            {"width", t.final_detections.width()},
            {"height", t.final_detections.height()},
            {"detections", dets}};
  if (with_events) {
    // [slot, block, delivered, in_flight, rho, inferred, stop]
    json ev = json::array();
    for (const auto& e : t.events) {
      ev.push_back({e.index, e.block, e.delivered ? 1 : 0, e.in_flight ? 1 : 0,
                    e.rho, e.inferred ? 1 : 0, e.action == StopAction::stop ? 1 : 0});
    }
    j["events"] = ev;
  }
  return j.dump();
}

RunTrace trace_from_json(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("trace: ") + e.what());
  }
  RunTrace t;
  try {
    t.image_id = j.at("image_id").get<std::string>();
    t.policy = j.at("policy").get<std::string>();
    t.order = arrival_order_from_string(j.at("order").get<std::string>());
    t.loss_rate = j.at("loss_rate").get<double>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.inter_arrival_ms = j.at("inter_arrival_ms").get<double>();
    t.feedback_delay_ms = j.at("feedback_delay_ms").get<double>();
    t.trigger_index = j.at("trigger_index").get<std::size_t>();
    t.stop_step = j.at("stop_step").get<std::size_t>();
    t.reason = stop_reason_from_string(j.at("reason").get<std::string>());
    t.in_flight = j.at("in_flight").get<std::size_t>();
    t.events_elapsed = j.at("events_elapsed").get<std::size_t>();
    t.packets_delivered = j.at("packets_delivered").get<std::size_t>();
    t.stop_time_ms = j.at("stop_time_ms").get<double>();
    t.detector_calls = j.at("detector_calls").get<std::size_t>();
    t.matched = j.at("matched").get<bool>();
    std::vector<Detection> dets;
    for (const auto& d : j.at("detections")) {
      dets.push_back({{d.at(0).get<double>(), d.at(1).get<double>(),
                       d.at(2).get<double>(), d.at(3).get<double>()},
                      d.at(4).get<double>(),
                      d.at(5).get<int>()});
    }
    t.final_detections =
        DetectionSet(std::move(dets), j.at("width").get<int>(), j.at("height").get<int>());
    if (j.contains("events")) {
      for (const auto& e : j.at("events")) {
        TraceEvent ev;
        ev.index = e.at(0).get<std::size_t>();
        ev.time_ms = static_cast<double>(ev.index + 1) * t.inter_arrival_ms;
        ev.block = e.at(1).get<BlockId>();
        ev.delivered = e.at(2).get<int>() != 0;
        ev.in_flight = e.at(3).get<int>() != 0;
        ev.rho = e.at(4).get<double>();
        ev.inferred = e.at(5).get<int>() != 0;
        ev.action = e.at(6).get<int>() != 0 ? StopAction::stop : StopAction::proceed;
        t.events.push_back(ev);
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("trace: ") + e.what());
  }
  return t;
}

std::vector<RunTrace> read_traces(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<RunTrace> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(trace_from_json(line));
  }
  return out;
}

CommandManifest cmd_report_traces(const fs::path& traces_path, const fs::path& out_dir) {
  const auto traces = read_traces(traces_path);
  std::string hash;
  {
    std::ifstream in(traces_path);
    std::string first;
    if (std::getline(in, first) && !first.empty()) {
      hash = json::parse(first).value("config_hash", std::string{});
    }
  }
  const auto rows = aggregate(traces);

  std::vector<AggregateRow> main_rows, order_rows, loss_rows;
  for (const auto& r : rows) {
    if (r.order == ArrivalOrder::center_first && r.loss_rate == 0.0) main_rows.push_back(r);
    if (r.loss_rate == 0.0) order_rows.push_back(r);
    if (r.order == ArrivalOrder::center_first) loss_rows.push_back(r);
  }
  write_text(out_dir / "report_main.csv", aggregate_csv(main_rows, hash));
  write_text(out_dir / "report_orders.csv", aggregate_csv(order_rows, hash));
  write_text(out_dir / "report_loss.csv", plot_data_csv(loss_rows, hash));

  CommandManifest m;
  m.command = "report";
  m.config_hash = hash;
  m.inputs.push_back(traces_path.generic_string());
  m.outputs = {"report_main.csv", "report_orders.csv", "report_loss.csv"};
  write_text(out_dir / "report.manifest.json", m.dump());
  return m;
}

CommandManifest cmd_report_summary(const fs::path& summary_csv, const fs::path& out_dir) {
  const auto rows = read_summary_csv(summary_csv);
  const SummaryRow* ref = nullptr;
  for (const auto& r : rows) {
    if (lower(r.policy).rfind("full", 0) == 0) {
      ref = &r;
      break;
    }
  }
  if (ref == nullptr) throw SchemaError("summary has no full-reception row");
  const auto derived = derive_against(rows, *ref);
  std::ifstream in(summary_csv, std::ios::binary);
  const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string hash = hex64(fnv1a64(raw));
  write_text(out_dir / "derived.csv", "# schema_version=" + std::to_string(kCsvSchemaVersion) +
                                          " config_hash=" + hash + "\n" +
                                          derived_csv(rows, derived));

  CommandManifest m;
  m.command = "report";
  m.config_hash = hash;
  m.inputs.push_back(summary_csv.generic_string());
  m.outputs = {"derived.csv"};
  write_text(out_dir / "report.manifest.json", m.dump());
  return m;
}

}  // namespace packetstop
