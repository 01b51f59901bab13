#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "packetstop/errors.hpp"
#include "packetstop/experiment.hpp"

using namespace packetstop;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("packetstop_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig small_config(const fs::path& dir) {
  ExperimentConfig c;
  c.corpus_dir = dir / "corpus";
  c.utility_dir = dir / "utilities";
  c.output_dir = dir / "out";
  c.n_scenes = 6;
  c.master_seed = 77;
  c.orders = {ArrivalOrder::center_first, ArrivalOrder::random};
  c.loss_rates = {0.0, 0.1};
  c.seeds = {1, 2};
  return c;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(PACKETSTOP_CLI_PATH) + " " + args).c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config json round-trip and validation") {
  ExperimentConfig c;
  c.policies = {PolicyConfig::utility(0.75), PolicyConfig::stability(0.8, 0.7, 4)};
  c.loss_rates = {0.0, 0.025};
  const auto back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c).size() == 16);

  ExperimentConfig d = c;
  d.threads = 7;
  d.output_dir = "elsewhere";
  CHECK(config_hash(d) == config_hash(c));
  d.cadence = 4;
  CHECK(config_hash(d) != config_hash(c));

  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"version", 2}}), SchemaError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"loss_rates", {1.0}}}), SchemaError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"detector", {{"name", "yolo"}}}}),
                  SchemaError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"detector", {{"name", "subprocess"}}}}),
                  SchemaError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"policies", {{{"kind", "eager"}}}}}),
                  ParseError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("fnv1a and image seeds") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(image_seed("scene_0001", 1) != image_seed("scene_0002", 1));
  CHECK(image_seed("scene_0001", 1) != image_seed("scene_0001", 2));
}

TEST_CASE("trace json round-trip") {
  RunTrace t;
  t.image_id = "x";
  t.policy = "utility(0.8)";
  t.order = ArrivalOrder::random;
  t.loss_rate = 0.05;
  t.seed = 3;
  t.events = {{0, 5.0, 7, true, false, 0.25, false, StopAction::proceed},
              {1, 10.0, 2, true, false, 0.875, true, StopAction::stop}};
  t.trigger_index = 1;
  t.stop_step = 2;
  t.reason = StopReason::utility_threshold;
  t.events_elapsed = 2;
  t.packets_delivered = 2;
  t.stop_time_ms = 10.0;
  t.detector_calls = 1;
  t.final_detections = DetectionSet({{{1, 2, 3, 4}, 0.5, 0}}, 64, 32);
  t.matched = true;
  CHECK(trace_from_json(trace_to_json(t, "h")) == t);
  CHECK_THROWS_AS(trace_from_json("{}"), SchemaError);
  CHECK_THROWS_AS(trace_from_json("nope"), ParseError);
}

TEST_CASE("pipeline end to end") {
  const auto dir = scratch("pipeline");
  auto cfg = small_config(dir);
  cmd_gen_corpus(cfg);
  CHECK(fs::exists(cfg.corpus_dir / "manifest.json"));
  const auto u = cmd_compute_utilities(cfg);
  CHECK(u.written.size() == 6);
  CHECK(u.excluded.empty());
  CHECK(slurp(cfg.utility_dir / "scene_0000.json").find(config_hash(cfg)) != std::string::npos);

  const auto r = cmd_simulate(cfg);
  CHECK(r.traces.size() == 6 * 2 * 2 * 2 * 5);
  CHECK(r.rows.size() == 5 * 2 * 2);
  for (const char* f : {"traces.jsonl", "aggregate.csv", "aggregate.json", "plot_data.csv",
                        "manifest.json"}) {
    CHECK(slurp(cfg.output_dir / f).find(config_hash(cfg)) != std::string::npos);
  }
  CHECK(read_traces(cfg.output_dir / "traces.jsonl") == r.traces);

  SUBCASE("thread count does not change outputs") {
    const std::string before = slurp(cfg.output_dir / "traces.jsonl");
    auto one = cfg;
    one.threads = 1;
    one.output_dir = dir / "out1";
    cmd_simulate(one);
    CHECK(slurp(one.output_dir / "traces.jsonl") == before);
    CHECK(slurp(one.output_dir / "aggregate.csv") == slurp(cfg.output_dir / "aggregate.csv"));
  }
  SUBCASE("utilities computed in memory match the files") {
    auto mem = cfg;
    mem.utility_dir = dir / "missing";
    mem.output_dir = dir / "out_mem";
    cmd_simulate(mem);
    CHECK(slurp(mem.output_dir / "aggregate.csv") == slurp(cfg.output_dir / "aggregate.csv"));
  }
  SUBCASE("report from traces") {
    cmd_report_traces(cfg.output_dir / "traces.jsonl", dir / "report");
    const auto main = slurp(dir / "report" / "report_main.csv");
    CHECK(main.find(config_hash(cfg)) != std::string::npos);
    CHECK(main.find("utility(0.8),center_first,0.0000") != std::string::npos);
    CHECK(main.find("random") == std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("subprocess detector in the pipeline") {
  const auto dir = scratch("subprocess");
  auto cfg = small_config(dir);
  cfg.n_scenes = 2;
  cfg.orders = {ArrivalOrder::center_first};
  cfg.loss_rates = {0.0};
  cfg.seeds = {1};
  cmd_gen_corpus(cfg);
  const auto direct = simulate_in_memory(cfg);

  cfg.detector = {"subprocess", std::string(PACKETSTOP_CLI_PATH) +
                                    " serve-detector --reference-mass {reference_mass}"
                                    " --pixel-threshold {pixel_threshold} --min-area {min_area}"};
  const auto viaproc = simulate_in_memory(cfg);
  REQUIRE(viaproc.traces.size() == direct.traces.size());
  for (std::size_t i = 0; i < direct.traces.size(); ++i) {
    CHECK(viaproc.traces[i].stop_step == direct.traces[i].stop_step);
    CHECK(viaproc.traces[i].matched == direct.traces[i].matched);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli") {
  const auto dir = scratch("cli");
  const std::string demo = std::string(PACKETSTOP_SOURCE_DIR) + "/configs/demo.json";

  SUBCASE("demo config emits every policy row") {
    const std::string cd = "cd " + dir.string() + " && ";
    REQUIRE(std::system((cd + PACKETSTOP_CLI_PATH + " gen-corpus -c " + demo + " >/dev/null").c_str()) == 0);
    REQUIRE(std::system((cd + PACKETSTOP_CLI_PATH + " simulate -q -c " + demo + " >/dev/null").c_str()) == 0);
    const auto csv = slurp(dir / "demo/out/aggregate.csv");
    for (const char* p : {"\nfull,", "\nstability(0.9),", "\nutility(0.7),", "\nutility(0.8),",
                          "\nutility(0.9),"}) {
      CHECK(csv.find(p) != std::string::npos);
    }
  }
  SUBCASE("report on the published table reproduces the derived columns") {
    const std::string fixture = std::string(PACKETSTOP_FIXTURES) + "/table_main.csv";
    REQUIRE(run_cli("report --summary " + fixture + " -o " + dir.string() + " >/dev/null") == 0);
    const auto csv = slurp(dir / "derived.csv");
    CHECK(csv.find("Utility-aware (0.8),0.7741,464.46,2322.29,0.3424,1209.17,0.9146") !=
          std::string::npos);
  }
  SUBCASE("receive with no sender times out with exit code 3") {
    CHECK(run_cli("receive --port 0 --idle-timeout-ms 100 --trace " +
                  (dir / "t.json").string() + " 2>/dev/null") == 3);
    const auto t = nlohmann::json::parse(slurp(dir / "t.json"));
    CHECK(t.at("events").empty());
    CHECK(t.at("timed_out").get<bool>());
  }
  SUBCASE("errors exit nonzero") {
    CHECK(run_cli("simulate -c /nonexistent.json 2>/dev/null") == 1);
    CHECK(run_cli("bogus 2>/dev/null") == 2);
  }
  fs::remove_all(dir);
}
