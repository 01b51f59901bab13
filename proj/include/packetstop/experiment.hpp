#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "packetstop/detector.hpp"
#include "packetstop/metrics.hpp"
#include "packetstop/policy.hpp"
#include "packetstop/scenegen.hpp"
#include "packetstop/simulator.hpp"
#include "packetstop/utility.hpp"

namespace packetstop {

inline constexpr int kConfigVersion = 1;

struct DetectorSpec {
  std::string name = "synthetic_blob";  // or "subprocess"
  // Shell command for "subprocess". {reference_mass}, {pixel_threshold} and
  // {min_area} are substituted per scene; without placeholders one process
  // serves the whole run.
  std::string command;

  bool operator==(const DetectorSpec&) const = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;

  std::filesystem::path corpus_dir = "corpus";
  std::size_t n_scenes = 200;
  std::uint64_t master_seed = 20240501;
  std::string profile = "desk";  // "desk" | "large"
  double center_bias = 0.5;

  DetectorSpec detector;
  int block_width = 32;
  int block_height = 16;

  std::vector<PolicyConfig> policies = {
      PolicyConfig::full(), PolicyConfig::stability(), PolicyConfig::utility(0.7),
      PolicyConfig::utility(0.8), PolicyConfig::utility(0.9)};
  std::vector<ArrivalOrder> orders = {ArrivalOrder::center_first};
  std::vector<double> loss_rates = {0.0};
  std::vector<std::uint64_t> seeds = {1};

  double inter_arrival_ms = 5.0;
  double feedback_delay_ms = 0.0;
  std::size_t cadence = 8;
  double iou_floor = 0.5;
  double epsilon = 1e-6;

  std::filesystem::path utility_dir = "utilities";
  std::filesystem::path output_dir = "out";
  bool trace_events = true;
  unsigned threads = 0;  // 0: hardware concurrency; never affects outputs
};

// Relative paths resolve against the working directory unless base_dir is set.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const ExperimentConfig& config);

// FNV-1a 64 of the canonical config JSON, as 16 hex digits. `threads` and
// output locations are excluded.
std::string config_hash(const ExperimentConfig& config);

std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

// Per-image stream seed for orders and loss flags.
std::uint64_t image_seed(const std::string& image_id, std::uint64_t seed);

CorpusProfile profile_from_config(const ExperimentConfig& config);
BlockGrid grid_for(const ExperimentConfig& config, const ImageMeta& meta);

struct LoadedScene {
  std::string id;
  ImageRaster image;
  std::vector<Box> gt_boxes;
  BlobDetectorConfig detector;
};

std::vector<LoadedScene> load_corpus(const std::filesystem::path& dir);

// Builds detectors for scenes. Shared processes are created once.
class DetectorFactory {
 public:
  explicit DetectorFactory(DetectorSpec spec);
  std::shared_ptr<const Detector> for_scene(const BlobDetectorConfig& scene) const;

 private:
  DetectorSpec spec_;
  std::shared_ptr<const Detector> shared_;
};

struct CommandManifest {
  std::string command;
  std::string config_hash;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  nlohmann::json extra = nlohmann::json::object();

  std::string dump() const;
};

using ProgressFn = std::function<void(const std::string&)>;

CommandManifest cmd_gen_corpus(const ExperimentConfig& config);

struct UtilityRun {
  std::vector<std::string> written;
  std::vector<std::string> excluded;  // no full-image detection
  CommandManifest manifest;
};
UtilityRun cmd_compute_utilities(const ExperimentConfig& config);

struct SimulationRun {
  std::vector<RunTrace> traces;
  std::vector<AggregateRow> rows;
  std::vector<std::string> excluded;
  CommandManifest manifest;
};
/// Runs every (image, seed, order, loss, policy) cell and writes
/// traces.jsonl, aggregate.csv, aggregate.json, plot_data.csv and
/// manifest.json to the output directory. Utility maps are read from
/// utility_dir when present and computed in memory otherwise.
SimulationRun cmd_simulate(const ExperimentConfig& config,
                           const ProgressFn& progress = {});
// Same as cmd_simulate without touching the filesystem beyond reading inputs.
SimulationRun simulate_in_memory(const ExperimentConfig& config,
                                 const ProgressFn& progress = {});

/// Writes report_main.csv (center-first, zero loss), report_orders.csv and
/// report_loss.csv from a traces file.
CommandManifest cmd_report_traces(const std::filesystem::path& traces,
                                  const std::filesystem::path& out_dir);
/// Derived savings for summary rows against the row whose policy is "full"
/// (case-insensitive prefix). Writes derived.csv.
CommandManifest cmd_report_summary(const std::filesystem::path& summary_csv,
                                   const std::filesystem::path& out_dir);

std::string trace_to_json(const RunTrace& trace, const std::string& config_hash,
                          bool with_events = true);
RunTrace trace_from_json(const std::string& line);
std::vector<RunTrace> read_traces(const std::filesystem::path& path);

}  // namespace packetstop
