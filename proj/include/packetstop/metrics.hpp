#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "packetstop/detector.hpp"
#include "packetstop/simulator.hpp"

namespace packetstop {

inline constexpr double kMatchIou = 0.5;

// At least one hazard prediction with IoU >= 0.5 against some GT box.
bool match_success(const DetectionSet& final_detections,
                   std::span<const Box> ground_truth,
                   double iou_threshold = kMatchIou);

// 0/1 task loss + lambda1 * B + lambda2 * T, with B = events_elapsed.
double objective_cost(const RunTrace& trace, double lambda1, double lambda2);

struct AggregateRow {
  std::string policy;
  ArrivalOrder order = ArrivalOrder::center_first;
  double loss_rate = 0.0;
  std::size_t n_images = 0;
  std::vector<std::uint64_t> seeds;
  double match_rate = 0.0;
  double mean_blocks = 0.0;   // events elapsed
  double mean_packets = 0.0;  // packets actually delivered
  double mean_delay_ms = 0.0;
};

/// Groups traces by (policy, order, loss). Within a group, means are taken
/// per seed and then averaged across seeds. Result order and values do not
/// depend on the order of `traces`.
std::vector<AggregateRow> aggregate(std::span<const RunTrace> traces);

// Rows of Table-style reports that only carry the headline numbers.
struct SummaryRow {
  std::string policy;
  double match_rate = 0.0;
  double blocks = 0.0;
  double delay_ms = 0.0;
};

struct DerivedRow {
  std::string policy;
  double budget_saving = 0.0;     // 1 - blocks / blocks_ref
  double delay_saving_ms = 0.0;   // delay_ref - delay
  double match_retention = 0.0;   // match / match_ref
  double delay_per_block_ms = 0.0;
};

std::vector<DerivedRow> derive_against(std::span<const SummaryRow> rows,
                                       const SummaryRow& reference);

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);

inline constexpr int kCsvSchemaVersion = 1;

std::string aggregate_csv(std::span<const AggregateRow> rows,
                          const std::string& config_hash);
std::string aggregate_json(std::span<const AggregateRow> rows,
                           const std::string& config_hash);
// Long format: series,order,loss_rate,metric,value
std::string plot_data_csv(std::span<const AggregateRow> rows,
                          const std::string& config_hash);
std::string derived_csv(std::span<const SummaryRow> rows,
                        std::span<const DerivedRow> derived);

// Fixed-precision formatting used by every CSV writer.
std::string fmt_fixed(double v, int digits = 6);

}  // namespace packetstop
