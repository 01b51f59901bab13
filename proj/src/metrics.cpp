#include "packetstop/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "packetstop/errors.hpp"

namespace packetstop {

bool match_success(const DetectionSet& final_detections,
                   std::span<const Box> ground_truth, double iou_threshold) {
  for (const auto& d : final_detections.detections()) {
    if (d.class_id != kHazardClass) continue;
    for (const auto& gt : ground_truth) {
      if (iou(d.box, gt) >= iou_threshold) return true;
    }
  }
  return false;
}

double objective_cost(const RunTrace& trace, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) {
    throw ContractViolation("cost weights must be non-negative");
  }
  const double task_loss = trace.matched ? 0.0 : 1.0;
  return task_loss + lambda1 * static_cast<double>(trace.events_elapsed) +
         lambda2 * trace.stop_time_ms;
}

std::vector<AggregateRow> aggregate(std::span<const RunTrace> traces) {
  using Key = std::tuple<std::string, int, double>;
  std::map<Key, std::vector<const RunTrace*>> groups;
  for (const auto& t : traces) {
    groups[{t.policy, static_cast<int>(t.order), t.loss_rate}].push_back(&t);
  }

  std::vector<AggregateRow> rows;
  for (auto& [key, members] : groups) {
    std::sort(members.begin(), members.end(),
              [](const RunTrace* a, const RunTrace* b) {
                return std::tie(a->seed, a->image_id) <
                       std::tie(b->seed, b->image_id);
              });
    AggregateRow row;
    row.policy = std::get<0>(key);
    row.order = static_cast<ArrivalOrder>(std::get<1>(key));
    row.loss_rate = std::get<2>(key);

    std::set<std::string> images;
    std::size_t i = 0;
    while (i < members.size()) {
      const std::uint64_t seed = members[i]->seed;
      double match = 0, blocks = 0, packets = 0, delay = 0;
      std::size_t n = 0;
      for (; i < members.size() && members[i]->seed == seed; ++i, ++n) {
        const RunTrace& t = *members[i];
        images.insert(t.image_id);
        match += t.matched ? 1.0 : 0.0;
        blocks += static_cast<double>(t.events_elapsed);
        packets += static_cast<double>(t.packets_delivered);
        delay += t.stop_time_ms;
      }
      row.seeds.push_back(seed);
      row.match_rate += match / n;
      row.mean_blocks += blocks / n;
      row.mean_packets += packets / n;
      row.mean_delay_ms += delay / n;
    }
    const double k = static_cast<double>(row.seeds.size());
    row.match_rate /= k;
    row.mean_blocks /= k;
    row.mean_packets /= k;
    row.mean_delay_ms /= k;
    row.n_images = images.size();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<DerivedRow> derive_against(std::span<const SummaryRow> rows,
                                       const SummaryRow& reference) {
  std::vector<DerivedRow> out;
  for (const auto& r : rows) {
    DerivedRow d;
    d.policy = r.policy;
    d.budget_saving = 1.0 - r.blocks / reference.blocks;
    d.delay_saving_ms = reference.delay_ms - r.delay_ms;
    d.match_retention = r.match_rate / reference.match_rate;
    d.delay_per_block_ms = r.blocks > 0 ? r.delay_ms / r.blocks : 0.0;
    out.push_back(d);
  }
  return out;
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<SummaryRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::stringstream ss(line);
    std::string policy, match, blocks, delay;
    if (!std::getline(ss, policy, ',') || !std::getline(ss, match, ',') ||
        !std::getline(ss, blocks, ',') || !std::getline(ss, delay, ',')) {
      throw ParseError("summary row needs policy,match_rate,blocks,delay_ms");
    }
    try {
      rows.push_back({policy, std::stod(match), std::stod(blocks), std::stod(delay)});
    } catch (const std::exception&) {
      throw ParseError("bad number in summary row: " + line);
    }
  }
  return rows;
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

namespace {

const AggregateRow* full_reference(std::span<const AggregateRow> rows,
                                   const AggregateRow& r) {
  for (const auto& o : rows) {
    if (o.policy == "full" && o.order == r.order && o.loss_rate == r.loss_rate) {
      return &o;
    }
  }
  return nullptr;
}

std::string seeds_field(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(seeds[i]);
  }
  return s;
}

}  // namespace

std::string aggregate_csv(std::span<const AggregateRow> rows,
                          const std::string& config_hash) {
  std::ostringstream out;
  out << "# schema_version=" << kCsvSchemaVersion << " config_hash=" << config_hash
      << '\n';
  out << "policy,order,loss_rate,n_images,seeds,match_rate,mean_blocks,"
         "mean_packets,mean_delay_ms,budget_saving,delay_saving_ms,"
         "match_retention\n";
  for (const auto& r : rows) {
    const AggregateRow* ref = full_reference(rows, r);
    out << r.policy << ',' << to_string(r.order) << ',' << fmt_fixed(r.loss_rate, 4)
        << ',' << r.n_images << ',' << seeds_field(r.seeds) << ','
        << fmt_fixed(r.match_rate) << ',' << fmt_fixed(r.mean_blocks) << ','
        << fmt_fixed(r.mean_packets) << ',' << fmt_fixed(r.mean_delay_ms) << ',';
    if (ref != nullptr) {
      out << fmt_fixed(1.0 - r.mean_blocks / ref->mean_blocks) << ','
          << fmt_fixed(ref->mean_delay_ms - r.mean_delay_ms) << ','
          << fmt_fixed(ref->match_rate > 0 ? r.match_rate / ref->match_rate : 0.0);
    } else {
      out << ",,";
    }
    out << '\n';
  }
  return out.str();
}

std::string aggregate_json(std::span<const AggregateRow> rows,
                           const std::string& config_hash) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"policy", r.policy},
                   {"order", to_string(r.order)},
                   {"loss_rate", r.loss_rate},
                   {"n_images", r.n_images},
                   {"seeds", r.seeds},
                   {"match_rate", r.match_rate},
                   {"mean_blocks", r.mean_blocks},
                   {"mean_packets", r.mean_packets},
                   {"mean_delay_ms", r.mean_delay_ms}});
  }
  return nlohmann::json{{"schema_version", kCsvSchemaVersion},
                        {"config_hash", config_hash},
                        {"rows", arr}}
      .dump(1);
}

std::string plot_data_csv(std::span<const AggregateRow> rows,
                          const std::string& config_hash) {
  std::ostringstream out;
  out << "# schema_version=" << kCsvSchemaVersion << " config_hash=" << config_hash
      << '\n';
  out << "series,order,loss_rate,metric,value\n";
  for (const auto& r : rows) {
    const std::string prefix =
        r.policy + ',' + to_string(r.order) + ',' + fmt_fixed(r.loss_rate, 4) + ',';
    out << prefix << "match_rate," << fmt_fixed(r.match_rate) << '\n';
    out << prefix << "mean_blocks," << fmt_fixed(r.mean_blocks) << '\n';
    out << prefix << "mean_delay_ms," << fmt_fixed(r.mean_delay_ms) << '\n';
  }
  return out.str();
}

std::string derived_csv(std::span<const SummaryRow> rows,
                        std::span<const DerivedRow> derived) {
  std::ostringstream out;
  out << "policy,match_rate,blocks,delay_ms,budget_saving,delay_saving_ms,"
         "match_retention,delay_per_block_ms\n";
  for (std::size_t i = 0; i < rows.size() && i < derived.size(); ++i) {
    out << rows[i].policy << ',' << fmt_fixed(rows[i].match_rate, 4) << ','
        << fmt_fixed(rows[i].blocks, 2) << ',' << fmt_fixed(rows[i].delay_ms, 2)
        << ',' << fmt_fixed(derived[i].budget_saving, 4) << ','
        << fmt_fixed(derived[i].delay_saving_ms, 2) << ','
        << fmt_fixed(derived[i].match_retention, 4) << ','
        << fmt_fixed(derived[i].delay_per_block_ms, 4) << '\n';
  }
  return out.str();
}

}  // namespace packetstop
