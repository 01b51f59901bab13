// Acceptance driver. Each criterion prints detail lines followed by exactly one
// "PASS criterion N: ..." or "FAIL criterion N: ..." line.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "packetstop/experiment.hpp"
#include "packetstop/live.hpp"
#include "packetstop/wire.hpp"

namespace fs = std::filesystem;
using namespace packetstop;

namespace {

struct Checks {
  int failed = 0;
  int passed = 0;

  void expect(bool ok, const std::string& what) {
    (ok ? passed : failed) += 1;
    std::cout << "  [" << (ok ? "ok" : "x ") << "] " << what << '\n';
  }
};

std::string f2(double v, int digits = 2) { return fmt_fixed(v, digits); }

fs::path g_work;

ExperimentConfig desk_config() {
  auto c = load_config(fs::path(PACKETSTOP_SOURCE_DIR) / "configs" / "desk.json");
  c.corpus_dir = g_work / "corpus";
  c.utility_dir = g_work / "utilities";
  c.output_dir = g_work / "out";
  c.threads = 0;
  return c;
}

// Corpus and utility files for the desk configuration, generated once per
// work directory.
ExperimentConfig prepare_desk() {
  auto c = desk_config();
  if (!fs::exists(c.corpus_dir / "manifest.json")) cmd_gen_corpus(c);
  if (!fs::exists(c.utility_dir / "compute_utilities.manifest.json")) {
    cmd_compute_utilities(c);
  }
  return c;
}

oracle::Img to_oracle(const ImageRaster& im) {
  oracle::Img o;
  o.w = im.width();
  o.h = im.height();
  o.ch = im.channels();
  o.px.assign(im.pixels().begin(), im.pixels().end());
  return o;
}

const AggregateRow* find_row(const std::vector<AggregateRow>& rows,
                             const std::string& policy, ArrivalOrder order,
                             double loss) {
  for (const auto& r : rows) {
    if (r.policy == policy && r.order == order && std::abs(r.loss_rate - loss) < 1e-12) {
      return &r;
    }
  }
  return nullptr;
}

void print_rows(const std::vector<AggregateRow>& rows) {
  std::cout << "  policy               order          loss   match   blocks   delay_ms\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %-20s %-14s %5.3f  %6.4f  %7.2f  %9.2f\n",
                  r.policy.c_str(), to_string(r.order).c_str(), r.loss_rate,
                  r.match_rate, r.mean_blocks, r.mean_delay_ms);
    std::cout << buf;
  }
}

// ---------------------------------------------------------------------------

bool criterion1(Checks& c) {
  const auto rows = read_summary_csv(fs::path(PACKETSTOP_FIXTURES) / "table_main.csv");
  c.expect(rows.size() == 5, "five published rows loaded");
  const SummaryRow* full = nullptr;
  const SummaryRow* main = nullptr;
  for (const auto& r : rows) {
    if (r.policy == "Full") full = &r;
    if (r.policy == "Utility-aware (0.8)") main = &r;
  }
  if (!full || !main) {
    c.expect(false, "reference and main rows present");
    return false;
  }
  const auto derived = derive_against(std::span(main, 1), *full).front();
  std::cout << "  delay saving " << f2(derived.delay_saving_ms) << " ms, budget saving "
            << f2(100 * derived.budget_saving, 3) << "%, retention "
            << f2(100 * derived.match_retention, 3) << "%\n";
  c.expect(f2(derived.delay_saving_ms) == "1209.17", "delay saving is 1209.17 ms");
  c.expect(f2(100 * derived.budget_saving, 1) == "34.2", "packet-budget saving is 34.2%");
  c.expect(f2(100 * derived.match_retention, 1) == "91.5", "match retention is 91.5%");

  // Published values carry two decimals; compare in hundredths.
  for (const auto& r : rows) {
    const long long delay = std::llround(r.delay_ms * 100);
    const long long five_b = 5 * std::llround(r.blocks * 100);
    const long long diff = delay - five_b;
    c.expect(std::llabs(diff) <= 1, r.policy + ": delay " + f2(r.delay_ms) +
                                        " vs 5 x blocks " + f2(5 * r.blocks) +
                                        " (diff " + f2(diff / 100.0) + " ms)");
  }
  return c.failed == 0;
}

bool criterion2(Checks& c) {
  const auto cfg = prepare_desk();
  const auto scenes = load_corpus(cfg.corpus_dir);
  std::size_t compared = 0;
  double worst = 0.0;
  for (const auto& s : scenes) {
    const BlockGrid grid = grid_for(cfg, s.image.meta());
    if (grid.n_blocks() != 64) continue;
    const SyntheticBlobDetector det(s.detector);
    const auto rec = compute_utility_map(s.image, grid, det, cfg.iou_floor, s.id);
    bool has_ref = false;
    const auto expect = oracle::leave_one_out(
        to_oracle(s.image), grid.block_width, grid.block_height,
        s.detector.pixel_threshold, s.detector.min_area, s.detector.reference_mass,
        cfg.iou_floor, &has_ref);
    if (has_ref != rec.has_value()) {
      c.expect(false, s.id + ": reference detection presence differs");
      continue;
    }
    if (!rec) continue;
    ++compared;
    for (std::size_t i = 0; i < expect.size(); ++i) {
      worst = std::max(worst, std::abs(expect[i] - rec->map[static_cast<BlockId>(i)]));
    }
  }
  std::cout << "  scenes compared: " << compared << ", max |diff| = " << worst << '\n';
  c.expect(compared >= 20, "at least 20 scenes with 64 blocks");
  c.expect(worst <= 1e-9, "value-for-value agreement to 1e-9");
  return c.failed == 0;
}

bool criterion3(Checks& c) {
  auto cfg = prepare_desk();
  cfg.policies = {PolicyConfig::utility(0.7), PolicyConfig::utility(0.8),
                  PolicyConfig::utility(0.9)};
  const auto run = simulate_in_memory(cfg);
  const auto scenes = load_corpus(cfg.corpus_dir);
  std::map<std::string, const LoadedScene*> by_id;
  for (const auto& s : scenes) by_id[s.id] = &s;

  std::size_t checked = 0, mismatched = 0, order_mismatch = 0;
  std::map<std::string, std::vector<double>> utils;
  for (const auto& t : run.traces) {
    const LoadedScene& s = *by_id.at(t.image_id);
    const BlockGrid grid = grid_for(cfg, s.image.meta());
    auto& u = utils[t.image_id];
    if (u.empty()) {
      const auto m = load_utility(cfg.utility_dir / (t.image_id + ".json"), grid.n_blocks());
      u = m.values();
    }
    std::vector<std::uint32_t> order;
    switch (t.order) {
      case ArrivalOrder::center_first:
        order = oracle::center_first(grid.cols, grid.rows, grid.block_width,
                                     grid.block_height);
        break;
      case ArrivalOrder::raster:
        for (int i = 0; i < grid.n_blocks(); ++i) order.push_back(i);
        break;
      case ArrivalOrder::random: {
        const auto ids = arrival_order(grid, ArrivalOrder::random,
                                       image_seed(t.image_id, t.seed));
        order.assign(ids.begin(), ids.end());
        break;
      }
    }
    const auto sched = build_schedule(grid, t.order, cfg.inter_arrival_ms, t.loss_rate,
                                      image_seed(t.image_id, t.seed));
    std::vector<bool> delivered;
    for (std::size_t j = 0; j < sched.entries.size(); ++j) {
      delivered.push_back(sched.entries[j].delivered);
      if (sched.entries[j].block != order[j]) ++order_mismatch;
    }
    const double tau = PolicyConfig::parse(t.policy).tau_rho;
    const std::size_t k = oracle::first_crossing(u, order, delivered, tau, cfg.epsilon);
    std::size_t expect = k;
    StopReason reason = StopReason::utility_threshold;
    if (k == 0) {
      expect = static_cast<std::size_t>(std::count(delivered.begin(), delivered.end(), true));
      reason = StopReason::exhausted;
    }
    ++checked;
    if (t.stop_step != expect || t.reason != reason) {
      if (++mismatched <= 5) {
        std::cout << "  mismatch " << t.image_id << ' ' << to_string(t.order) << ' '
                  << t.policy << " loss " << t.loss_rate << ": sim " << t.stop_step
                  << " oracle " << expect << '\n';
      }
    }
  }
  std::cout << "  runs checked: " << checked << " (" << utils.size()
            << " scenes x 3 orders x 3 thresholds x " << cfg.loss_rates.size()
            << " loss rates x " << cfg.seeds.size() << " seeds)\n";
  c.expect(order_mismatch == 0, "schedules follow the independently built orders");
  c.expect(checked > 0 && mismatched == 0,
           "stop step equals first prefix-sum crossing on every run (" +
               std::to_string(mismatched) + " mismatches)");
  return c.failed == 0;
}

bool criterion4(Checks& c) {
  auto cfg = prepare_desk();
  cfg.orders = {ArrivalOrder::center_first, ArrivalOrder::random};
  cfg.loss_rates = {0.0};
  const auto run = simulate_in_memory(cfg);
  print_rows(run.rows);
  std::cout << "  scenes: " << run.rows.front().n_images << " (excluded "
            << run.excluded.size() << ")\n";

  const auto cf = ArrivalOrder::center_first;
  const auto* u7 = find_row(run.rows, "utility(0.7)", cf, 0);
  const auto* u8 = find_row(run.rows, "utility(0.8)", cf, 0);
  const auto* u9 = find_row(run.rows, "utility(0.9)", cf, 0);
  const auto* full = find_row(run.rows, "full", cf, 0);
  const auto* r8 = find_row(run.rows, "utility(0.8)", ArrivalOrder::random, 0);
  if (!u7 || !u8 || !u9 || !full || !r8) {
    c.expect(false, "all rows present");
    return false;
  }
  c.expect(run.rows.front().n_images >= 190, "at least 190 of 200 scenes usable");
  c.expect(u7->mean_blocks < u8->mean_blocks && u8->mean_blocks < u9->mean_blocks &&
               u9->mean_blocks < full->mean_blocks,
           "blocks: utility(0.7) " + f2(u7->mean_blocks) + " < utility(0.8) " +
               f2(u8->mean_blocks) + " < utility(0.9) " + f2(u9->mean_blocks) +
               " < full " + f2(full->mean_blocks));
  c.expect(u9->match_rate >= 0.9 * full->match_rate,
           "match utility(0.9) " + f2(u9->match_rate, 4) + " >= 0.9 x full " +
               f2(0.9 * full->match_rate, 4));
  c.expect(u8->match_rate > r8->match_rate,
           "match at 0.8: center_first " + f2(u8->match_rate, 4) + " > random " +
               f2(r8->match_rate, 4));
  c.expect(r8->mean_blocks >= u8->mean_blocks,
           "blocks at 0.8: random " + f2(r8->mean_blocks) + " >= center_first " +
               f2(u8->mean_blocks));
  return c.failed == 0;
}

bool criterion5(Checks& c) {
  auto cfg = prepare_desk();
  cfg.orders = {ArrivalOrder::center_first};
  const auto run = simulate_in_memory(cfg);
  print_rows(run.rows);

  const auto cf = ArrivalOrder::center_first;
  for (const auto& p : cfg.policies) {
    const std::string label = p.label();
    bool ok = true;
    std::ostringstream trail;
    for (std::size_t i = 0; i < cfg.loss_rates.size(); ++i) {
      const auto* r = find_row(run.rows, label, cf, cfg.loss_rates[i]);
      if (!r) {
        ok = false;
        continue;
      }
      trail << (i ? " -> " : "") << f2(r->match_rate, 4);
      if (i == 0) continue;
      const auto* prev = find_row(run.rows, label, cf, cfg.loss_rates[i - 1]);
      if (prev && r->match_rate > prev->match_rate + 0.01 + 1e-12) ok = false;
    }
    c.expect(ok, label + " match non-increasing in loss: " + trail.str());
  }

  const double lo = cfg.loss_rates.front(), hi = cfg.loss_rates.back();
  auto growth = [&](const std::string& label) {
    const auto* a = find_row(run.rows, label, cf, lo);
    const auto* b = find_row(run.rows, label, cf, hi);
    return a && b ? b->mean_blocks - a->mean_blocks : NAN;
  };
  const double stab = growth(PolicyConfig::stability().label());
  for (double tau : {0.7, 0.8, 0.9}) {
    std::cout << "  utility(" << tau << ") block growth " << f2(growth(PolicyConfig::utility(tau).label()))
              << '\n';
  }
  const double util = growth(PolicyConfig::utility(0.8).label());
  c.expect(util < stab, "block growth 0 -> 10% loss: utility(0.8) +" + f2(util) +
                            " < stability +" + f2(stab));
  return c.failed == 0;
}

bool criterion6(Checks& c) {
  const std::string cmd = std::string("\"") + PACKETSTOP_PROPERTIES_PATH + "\" 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    c.expect(false, "property suite launched");
    return false;
  }
  std::string out;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int status = pclose(pipe);
  std::istringstream lines(out);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.find("test cases") != std::string::npos ||
        line.find("assertions") != std::string::npos ||
        line.find("cases run") != std::string::npos ||
        line.find("ERROR") != std::string::npos) {
      std::cout << "  " << line << '\n';
    }
  }
  c.expect(status == 0, "property suite passes (rho monotone, reconstruction order, "
                        "detector monotone, stop step vs threshold, duplicates, frames)");
  c.expect(out.find("property cases run:") != std::string::npos,
           "case budget reported");
  return c.failed == 0;
}

std::map<std::string, Bytes> golden_frames() {
  std::ifstream in(fs::path(PACKETSTOP_FIXTURES) / "golden_frames.txt");
  std::map<std::string, Bytes> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string name, hex;
    ss >> name >> hex;
    Bytes b;
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
      b.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    }
    out[name] = b;
  }
  return out;
}

bool criterion7(Checks& c) {
  using namespace packetstop::wire;
  // Round trips over random frames.
  std::mt19937_64 rng(77);
  std::size_t cases = 0, bad = 0;
  for (int i = 0; i < 500; ++i, ++cases) {
    DataFrame f;
    f.image_id = static_cast<std::uint32_t>(rng());
    f.n_blocks = 1 + static_cast<std::uint32_t>(rng() % 5000);
    f.block_id = static_cast<std::uint32_t>(rng() % f.n_blocks);
    f.utility_q = static_cast<std::uint16_t>(rng());
    f.total_utility_q = static_cast<std::uint32_t>(rng());
    f.payload.resize(rng() % (kDefaultFrameBudget - kDataHeaderBytes - kCrcBytes + 1));
    for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng());
    const auto d = decode_data_frame(encode(f));
    if (!d.ok() || *d.frame != f) ++bad;
    StopFrame s{static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng()),
                static_cast<StopReason>(rng() % 5)};
    const auto ds = decode_stop_frame(encode(s));
    if (!ds.ok() || *ds.frame != s) ++bad;
  }
  c.expect(bad == 0, std::to_string(cases) + " random data/stop frame round trips");

  const auto g = golden_frames();
  DataFrame gd;
  gd.image_id = 0x01020304;
  gd.block_id = 5;
  gd.n_blocks = 64;
  gd.utility_q = 0x1234;
  gd.total_utility_q = 0x00018000;
  gd.payload = {0xDE, 0xAD, 0xBE, 0xEF};
  c.expect(g.count("data") && encode(gd) == g.at("data"), "golden data frame bytes");
  c.expect(g.count("stop") &&
               encode(StopFrame{7, 13, StopReason::utility_threshold}) == g.at("stop"),
           "golden stop frame bytes");

  auto cfg = prepare_desk();
  const auto scenes = load_corpus(cfg.corpus_dir);
  double worst_ratio = 0.0;
  std::size_t quant_checked = 0;
  for (std::size_t i = 0; i < scenes.size() && i < 24; ++i) {
    const auto& s = scenes[i];
    const BlockGrid grid = grid_for(cfg, s.image.meta());
    const fs::path file = cfg.utility_dir / (s.id + ".json");
    if (!fs::exists(file)) continue;
    const auto m = load_utility(file, grid.n_blocks());
    const auto q = quantize(m);
    const double tq = dequantize_total(q.total_q);
    for (auto order : {ArrivalOrder::center_first, ArrivalOrder::raster, ArrivalOrder::random}) {
      double exact = 0, wire = 0;
      for (BlockId id : arrival_order(grid, order, i + 1)) {
        exact += m[id];
        wire += dequantize_value(q.shares[id], q.total_q);
        const double err = std::abs(exact / (m.total() + cfg.epsilon) - wire / (tq + cfg.epsilon));
        worst_ratio = std::max(worst_ratio, err / (grid.n_blocks() / 65535.0));
      }
      ++quant_checked;
    }
  }
  std::cout << "  quantization: worst |drho| = " << f2(worst_ratio, 4)
            << " x N/65535 over " << quant_checked << " runs\n";
  c.expect(quant_checked > 0 && worst_ratio <= 1.0, "|drho_k| <= N/65535 on corpus fixtures");

  // Loopback: identical stop prefix for identical arrival order at zero loss.
  using namespace std::chrono_literals;
  std::size_t compared = 0, equal = 0;
  for (std::size_t i = 0; i < scenes.size() && compared < 5; ++i) {
    const auto& s = scenes[i];
    const BlockGrid grid = grid_for(cfg, s.image.meta());
    const fs::path file = cfg.utility_dir / (s.id + ".json");
    if (!fs::exists(file)) continue;
    const auto m = load_utility(file, grid.n_blocks());
    const SyntheticBlobDetector det(s.detector);
    const auto sched = build_schedule(grid, ArrivalOrder::center_first, 2.0, 0.0, 1);
    const auto sim = run(s.image, grid, m, det, PolicyConfig::utility(0.8), sched);
    const double margin = grid.n_blocks() / 65535.0;
    const double at = sim.events[sim.trigger_index].rho;
    const double before = sim.trigger_index ? sim.events[sim.trigger_index - 1].rho : 0.0;
    if (sim.reason != StopReason::utility_threshold || at - 0.8 <= margin ||
        0.8 - before <= margin) {
      continue;
    }
    ++compared;

    auto rx = live::UdpSocket::bind({"127.0.0.1", 0});
    auto tx = live::UdpSocket::bind({"127.0.0.1", 0});
    live::ReceiverConfig rc;
    rc.meta = s.image.meta();
    rc.grid = grid;
    rc.policy = PolicyConfig::utility(0.8);
    rc.control_peer = live::Endpoint{"127.0.0.1", tx.local_port()};
    rc.idle_timeout = 300ms;
    rc.quiet_period = 50ms;
    auto fut = std::async(std::launch::async,
                          [&] { return live::receiver_loop(rc, det, rx, rx); });
    live::SenderConfig sc;
    sc.image_id = static_cast<std::uint32_t>(i + 1);
    sc.data_peer = {"127.0.0.1", rx.local_port()};
    const auto sent = live::sender_loop(s.image, grid, m, sched, tx, tx, sc);
    const auto got = fut.get();

    bool same = got.trace.stop_step == sim.stop_step &&
                got.accepted_order.size() >= sim.stop_step && sent.stopped;
    for (std::size_t k = 0; same && k < sim.stop_step; ++k) {
      same = got.accepted_order[k] == sched.entries[k].block;
    }
    same = same && got.trace.final_detections == sim.final_detections;
    equal += same;
    std::cout << "  loopback " << s.id << ": sim stop " << sim.stop_step << ", live stop "
              << got.trace.stop_step << ", sender sent " << sent.frames_sent << '\n';
  }
  c.expect(compared >= 3 && equal == compared,
           "loopback stop prefix equals simulator (" + std::to_string(equal) + "/" +
               std::to_string(compared) + " scenes)");
  return c.failed == 0;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool criterion8(Checks& c) {
  auto cfg = load_config(fs::path(PACKETSTOP_SOURCE_DIR) / "configs" / "demo.json");
  cfg.corpus_dir = g_work / "corpus";
  cfg.utility_dir = g_work / "utilities";
  cfg.output_dir = g_work / "out";
  fs::remove_all(cfg.output_dir);
  if (!fs::exists(cfg.corpus_dir / "manifest.json")) cmd_gen_corpus(cfg);
  if (!fs::exists(cfg.utility_dir / "compute_utilities.manifest.json")) {
    cmd_compute_utilities(cfg);
  }
  const std::array<const char*, 5> files = {"traces.jsonl", "aggregate.csv", "aggregate.json",
                                            "plot_data.csv", "manifest.json"};
  cfg.threads = 1;
  cmd_simulate(cfg);
  std::map<std::string, std::string> first;
  for (const char* f : files) first[f] = slurp(cfg.output_dir / f);
  cfg.threads = 0;
  const auto second = cmd_simulate(cfg);
  std::cout << "  traces per run: " << second.traces.size() << '\n';
  for (const char* f : files) {
    const std::string now = slurp(cfg.output_dir / f);
    c.expect(!now.empty() && now == first[f],
             std::string(f) + " byte-identical (" + std::to_string(now.size()) + " bytes)");
  }
  return c.failed == 0;
}

struct Criterion {
  const char* title;
  std::function<bool(Checks&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"packetstop acceptance suite"};
  int only = 0;
  std::string work = "acceptance_work";
  app.add_option("--criterion", only, "Run one criterion (1-8); default all");
  app.add_option("--work", work, "Scratch directory for generated data");
  CLI11_PARSE(app, argc, argv);

  g_work = fs::absolute(work);
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria = {
      {"paper-fixture consistency", criterion1},
      {"utility-oracle equivalence", criterion2},
      {"stopping-rule oracle equivalence", criterion3},
      {"trend reproduction at desk scale", criterion4},
      {"loss-robustness direction", criterion5},
      {"monotonicity property suite", criterion6},
      {"wire correctness", criterion7},
      {"determinism", criterion8},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (only != 0 && only != n) continue;
    std::cout << "criterion " << n << ": " << criteria[i].title << '\n';
    Checks checks;
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = criteria[i].fn(checks) && checks.failed == 0;
    } catch (const std::exception& e) {
      std::cout << "  error: " << e.what() << '\n';
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << n << ": " << criteria[i].title
              << " (" << checks.passed << " checks ok, " << checks.failed << " failed, "
              << f2(secs, 1) << " s)\n";
    failures += !ok;
  }
  return failures == 0 ? 0 : 1;
}
