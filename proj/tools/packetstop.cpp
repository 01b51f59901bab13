#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "packetstop/errors.hpp"
#include "packetstop/experiment.hpp"
#include "packetstop/live.hpp"

namespace {

using namespace packetstop;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIdleTimeout = 3;

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_config(path);
}

void print_rows(const std::vector<AggregateRow>& rows) {
  std::printf("%-16s %-13s %7s %6s %10s %10s %12s\n", "policy", "order", "loss",
              "n", "match", "blocks", "delay_ms");
  for (const auto& r : rows) {
    std::printf("%-16s %-13s %7.4f %6zu %10.4f %10.2f %12.2f\n", r.policy.c_str(),
                to_string(r.order).c_str(), r.loss_rate, r.n_images, r.match_rate,
                r.mean_blocks, r.mean_delay_ms);
  }
}

struct SendArgs {
  std::string image;
  std::string utility;
  std::string to;
  std::uint16_t bind_port = 0;
  std::string order = "center_first";
  double loss = 0.0;
  std::uint64_t seed = 1;
  double interval_ms = 5.0;
  std::uint32_t image_id = 1;
  std::size_t budget = wire::kDefaultFrameBudget;
  int block_width = 32;
  int block_height = 16;
};

int run_send(const SendArgs& a) {
  const ImageRaster image = load_raster(a.image);
  const BlockGrid grid = partition(image, a.block_width, a.block_height);
  const UtilityMap utility = load_utility(a.utility, grid.n_blocks());
  const ArrivalSchedule schedule = build_schedule(
      grid, arrival_order_from_string(a.order), a.interval_ms, a.loss, a.seed);

  // One socket carries data out and StopFrames back, so a receiver without an
  // explicit control peer can answer the datagram source.
  auto sock = live::UdpSocket::bind({"0.0.0.0", a.bind_port});
  live::SenderConfig cfg;
  cfg.image_id = a.image_id;
  cfg.data_peer = live::Endpoint::parse(a.to);
  cfg.frame_budget = a.budget;
  const auto report = live::sender_loop(image, grid, utility, schedule, sock, sock, cfg);

  nlohmann::json out = {{"frames_sent", report.frames_sent},
                        {"slots_elapsed", report.slots_elapsed},
                        {"stopped", report.stopped},
                        {"foreign_stop_frames", report.foreign_stop_frames}};
  if (report.stop) {
    out["stop_step"] = report.stop->stop_step;
    out["reason"] = to_string(report.stop->reason);
  }
  std::cout << out.dump() << '\n';
  if (report.aborted) {
    std::cerr << "send aborted: " << report.error << '\n';
    return kExitError;
  }
  return kExitOk;
}

struct ReceiveArgs {
  std::uint16_t port = 0;
  std::string control_peer;
  int width = 256;
  int height = 128;
  int channels = 1;
  int block_width = 32;
  int block_height = 16;
  std::string policy = "utility(0.8)";
  std::size_t cadence = 8;
  double reference_mass = 1.0;
  int pixel_threshold = 128;
  int min_area = 16;
  std::string detector_cmd;
  std::int64_t image_id = -1;
  int idle_timeout_ms = 500;
  double interval_ms = 5.0;
  std::string trace_out;
  std::string observation_out;
};

int run_receive(const ReceiveArgs& a) {
  live::ReceiverConfig cfg;
  cfg.meta = {a.width, a.height, a.channels};
  cfg.grid = partition(cfg.meta, a.block_width, a.block_height);
  if (a.image_id >= 0) cfg.image_id = static_cast<std::uint32_t>(a.image_id);
  cfg.policy = PolicyConfig::parse(a.policy);
  cfg.options.cadence = a.cadence;
  if (!a.control_peer.empty()) cfg.control_peer = live::Endpoint::parse(a.control_peer);
  cfg.inter_arrival_ms = a.interval_ms;
  cfg.idle_timeout = std::chrono::milliseconds(a.idle_timeout_ms);

  std::unique_ptr<Detector> detector;
  if (a.detector_cmd.empty()) {
    detector = std::make_unique<SyntheticBlobDetector>(
        BlobDetectorConfig{a.pixel_threshold, a.min_area, a.reference_mass});
  } else {
    detector = std::make_unique<SubprocessDetector>(a.detector_cmd);
  }

  auto sock = live::UdpSocket::bind({"0.0.0.0", a.port});
  std::cerr << "listening on port " << sock.local_port() << '\n';
  const auto r = live::receiver_loop(cfg, *detector, sock, sock);

  auto j = nlohmann::json::parse(trace_to_json(r.trace, "live"));
  j["frames_accepted"] = r.frames_accepted;
  j["duplicates"] = r.duplicates;
  j["rejected"] = r.rejected;
  j["foreign"] = r.foreign;
  j["stop_frames_sent"] = r.stop_frames_sent;
  j["timed_out"] = r.timed_out;
  j["final_rho"] = r.final_rho;
  j["accepted_order"] = r.accepted_order;
  if (a.trace_out.empty()) {
    std::cout << j.dump() << '\n';
  } else {
    std::ofstream out(a.trace_out);
    if (!out) throw IoError("cannot write " + a.trace_out);
    out << j.dump() << '\n';
  }
  if (!a.observation_out.empty()) save_raster(a.observation_out, r.observation);
  if (!r.received_any) {
    std::cerr << "idle timeout: no frames received\n";
    return kExitIdleTimeout;
  }
  return kExitOk;
}

int run_serve_detector(const BlobDetectorConfig& cfg) {
  std::ios::sync_with_stdio(false);
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    try {
      const ImageRaster img = decode_detect_request(line);
      std::cout << encode_detect_response(synthetic_blob_detect(img, cfg)) << '\n';
    } catch (const Error& e) {
      std::cout << nlohmann::json{{"error", e.what()}}.dump() << '\n';
    }
    std::cout.flush();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Utility-aware progressive stopping: simulation, live transfer and reporting"};
  app.require_subcommand(1);

  std::string config_path;
  unsigned threads = 0;

  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic scene corpus");
  gen->add_option("-c,--config", config_path, "Experiment config (JSON)");

  auto* util = app.add_subcommand("compute-utilities",
                                  "Leave-one-block-out utility maps for the corpus");
  util->add_option("-c,--config", config_path, "Experiment config (JSON)");
  util->add_option("-j,--threads", threads, "Worker threads (0 = all cores)");

  bool quiet = false;
  std::string out_override;
  auto* sim = app.add_subcommand("simulate", "Run the simulated experiment grid");
  sim->add_option("-c,--config", config_path, "Experiment config (JSON)")->required();
  sim->add_option("-j,--threads", threads, "Worker threads (0 = all cores)");
  sim->add_option("-o,--out", out_override, "Override the output directory");
  sim->add_flag("-q,--quiet", quiet, "Suppress the summary table");

  std::string traces_path, summary_path, report_out = ".";
  auto* rep = app.add_subcommand("report", "Tables from traces or a summary CSV");
  auto* rep_traces = rep->add_option("--traces", traces_path, "traces.jsonl from simulate");
  auto* rep_summary =
      rep->add_option("--summary", summary_path, "CSV: policy,match_rate,blocks,delay_ms");
  rep_traces->excludes(rep_summary);
  rep->add_option("-o,--out", report_out, "Output directory");

  SendArgs send_args;
  auto* send = app.add_subcommand("send", "Stream an image as UDP data frames");
  send->add_option("--image", send_args.image, "Raster file (.psr/.pgm/.ppm)")->required();
  send->add_option("--utility", send_args.utility, "Utility map JSON")->required();
  send->add_option("--to", send_args.to, "Receiver host:port")->required();
  send->add_option("--bind", send_args.bind_port, "Local port for data and control");
  send->add_option("--order", send_args.order, "center_first | raster | random");
  send->add_option("--loss", send_args.loss, "Dropped slot fraction in [0, 1)");
  send->add_option("--seed", send_args.seed, "Order and loss seed");
  send->add_option("--interval-ms", send_args.interval_ms, "Inter-arrival time");
  send->add_option("--image-id", send_args.image_id, "Image id carried in frames");
  send->add_option("--frame-budget", send_args.budget, "Maximum datagram bytes");
  send->add_option("--block-width", send_args.block_width);
  send->add_option("--block-height", send_args.block_height);

  ReceiveArgs recv_args;
  auto* recv = app.add_subcommand("receive", "Receive frames and stop early");
  recv->add_option("--port", recv_args.port, "Local UDP port (0 = ephemeral)");
  recv->add_option("--control-peer", recv_args.control_peer,
                   "Where StopFrames go (default: source of the data frames)");
  recv->add_option("--width", recv_args.width);
  recv->add_option("--height", recv_args.height);
  recv->add_option("--channels", recv_args.channels);
  recv->add_option("--block-width", recv_args.block_width);
  recv->add_option("--block-height", recv_args.block_height);
  recv->add_option("--policy", recv_args.policy, "full | stability | utility(T)");
  recv->add_option("--cadence", recv_args.cadence, "Arrivals between inferences");
  recv->add_option("--reference-mass", recv_args.reference_mass);
  recv->add_option("--pixel-threshold", recv_args.pixel_threshold);
  recv->add_option("--min-area", recv_args.min_area);
  recv->add_option("--detector-cmd", recv_args.detector_cmd,
                   "External JSONL detector command");
  recv->add_option("--image-id", recv_args.image_id, "Only accept this image id");
  recv->add_option("--idle-timeout-ms", recv_args.idle_timeout_ms);
  recv->add_option("--interval-ms", recv_args.interval_ms);
  recv->add_option("--trace", recv_args.trace_out, "Write the run trace here");
  recv->add_option("--observation", recv_args.observation_out,
                   "Write the reconstruction at stop");

  BlobDetectorConfig serve_cfg;
  auto* serve = app.add_subcommand("serve-detector",
                                   "Synthetic detector over JSON lines on stdin/stdout");
  serve->add_option("--pixel-threshold", serve_cfg.pixel_threshold);
  serve->add_option("--min-area", serve_cfg.min_area);
  serve->add_option("--reference-mass", serve_cfg.reference_mass);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      const auto m = cmd_gen_corpus(config_or_default(config_path));
      std::cout << "wrote " << m.outputs.size() - 1 << " scenes\n";
    } else if (*util) {
      auto cfg = config_or_default(config_path);
      if (threads) cfg.threads = threads;
      const auto r = cmd_compute_utilities(cfg);
      std::cout << "wrote " << r.written.size() << " utility maps, excluded "
                << r.excluded.size() << '\n';
    } else if (*sim) {
      auto cfg = load_config(config_path);
      if (threads) cfg.threads = threads;
      if (!out_override.empty()) cfg.output_dir = out_override;
      const auto r = cmd_simulate(cfg);
      if (!quiet) print_rows(r.rows);
      std::cout << r.traces.size() << " traces, config_hash " << r.manifest.config_hash
                << ", outputs in " << cfg.output_dir.string() << '\n';
    } else if (*rep) {
      if (!traces_path.empty()) {
        cmd_report_traces(traces_path, report_out);
      } else if (!summary_path.empty()) {
        cmd_report_summary(summary_path, report_out);
        std::ifstream in(fs::path(report_out) / "derived.csv");
        std::cout << in.rdbuf();
      } else {
        std::cerr << "report needs --traces or --summary\n";
        return kExitUsage;
      }
    } else if (*send) {
      return run_send(send_args);
    } else if (*recv) {
      return run_receive(recv_args);
    } else if (*serve) {
      return run_serve_detector(serve_cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitOk;
}
