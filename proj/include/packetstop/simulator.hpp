#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "packetstop/detector.hpp"
#include "packetstop/image.hpp"
#include "packetstop/policy.hpp"
#include "packetstop/utility.hpp"

namespace packetstop {

enum class ArrivalOrder { center_first, raster, random };

std::string to_string(ArrivalOrder order);
ArrivalOrder arrival_order_from_string(const std::string& text);

struct ScheduleEntry {
  BlockId block = 0;
  double send_time_ms = 0.0;
  bool delivered = true;

  bool operator==(const ScheduleEntry&) const = default;
};

struct ArrivalSchedule {
  std::vector<ScheduleEntry> entries;
  ArrivalOrder order = ArrivalOrder::center_first;
  double inter_arrival_ms = 5.0;
  double loss_rate = 0.0;
  std::uint64_t seed = 0;
};

// Block ids in transmission order.
std::vector<BlockId> arrival_order(const BlockGrid& grid, ArrivalOrder order,
                                   std::uint64_t seed);

/// Entry j is sent at j * inter_arrival. Loss flags come from a stream that
/// depends only on the seed and slot index, so for a fixed seed the set of
/// lost slots grows monotonically with the loss rate.
ArrivalSchedule build_schedule(const BlockGrid& grid, ArrivalOrder order,
                               double inter_arrival_ms, double loss_rate,
                               std::uint64_t seed);

struct SimulationOptions {
  double feedback_delay_ms = 0.0;
  std::size_t cadence = 8;
  double epsilon = 1e-6;
};

struct TraceEvent {
  std::size_t index = 0;  // schedule slot
  double time_ms = 0.0;
  BlockId block = 0;
  bool delivered = true;
  bool in_flight = false;  // delivered after the stop decision (Delta)
  double rho = 0.0;
  bool inferred = false;
  StopAction action = StopAction::proceed;

  bool operator==(const TraceEvent&) const = default;
};

struct RunTrace {
  std::string image_id;
  std::string policy;
  ArrivalOrder order = ArrivalOrder::center_first;
  double loss_rate = 0.0;
  std::uint64_t seed = 0;
  double inter_arrival_ms = 5.0;
  double feedback_delay_ms = 0.0;

  std::vector<TraceEvent> events;
  std::size_t trigger_index = 0;  // slot at which the stop fired
  std::size_t stop_step = 0;      // accepted arrivals at stop (k)
  StopReason reason = StopReason::none;
  std::size_t in_flight = 0;          // Delta
  std::size_t events_elapsed = 0;     // slots up to trigger plus Delta
  std::size_t packets_delivered = 0;  // delivered among those slots
  double stop_time_ms = 0.0;          // T_tau
  std::size_t detector_calls = 0;
  DetectionSet final_detections;
  bool matched = false;

  bool operator==(const RunTrace&) const = default;
};

// T = counted_events * inter_arrival + feedback_delay
double delay_model(std::size_t counted_events, double inter_arrival_ms,
                   double feedback_delay_ms);

RunTrace run(const ImageRaster& image, const BlockGrid& grid,
             const UtilityMap& utility, const Detector& detector,
             const PolicyConfig& policy, const ArrivalSchedule& schedule,
             const SimulationOptions& options = {});

// Rebuilds the arrival schedule a trace was recorded under.
ArrivalSchedule schedule_from_trace(const RunTrace& trace, std::size_t n_blocks);

}  // namespace packetstop
