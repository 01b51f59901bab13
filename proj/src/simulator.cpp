#include "packetstop/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "packetstop/errors.hpp"
#include "packetstop/receiver.hpp"
#include "packetstop/rng.hpp"

namespace packetstop {

std::string to_string(ArrivalOrder order) {
  switch (order) {
    case ArrivalOrder::center_first: return "center_first";
    case ArrivalOrder::raster: return "raster";
    case ArrivalOrder::random: return "random";
  }
  return "?";
}

ArrivalOrder arrival_order_from_string(const std::string& text) {
  if (text == "center_first") return ArrivalOrder::center_first;
  if (text == "raster") return ArrivalOrder::raster;
  if (text == "random") return ArrivalOrder::random;
  throw ParseError("unknown arrival order: " + text);
}

std::vector<BlockId> arrival_order(const BlockGrid& grid, ArrivalOrder order,
                                   std::uint64_t seed) {
  std::vector<BlockId> ids(static_cast<std::size_t>(grid.n_blocks()));
  std::iota(ids.begin(), ids.end(), BlockId{0});
  switch (order) {
    case ArrivalOrder::raster:
      break;
    case ArrivalOrder::center_first: {
      // Squared distances in doubled coordinates keep everything integral.
      const long cx = grid.image_width();
      const long cy = grid.image_height();
      auto dist2 = [&](BlockId id) {
        const BlockRect r = grid.rect(id);
        const long dx = 2L * r.x0 + r.width - cx;
        const long dy = 2L * r.y0 + r.height - cy;
        return dx * dx + dy * dy;
      };
      std::stable_sort(ids.begin(), ids.end(), [&](BlockId a, BlockId b) {
        return dist2(a) < dist2(b);
      });
      break;
    }
    case ArrivalOrder::random: {
      std::mt19937_64 rng(derive_seed(seed, kOrderStream));
      for (std::size_t i = ids.size(); i > 1; --i) {
        std::swap(ids[i - 1], ids[uniform_index(rng, i)]);
      }
      break;
    }
  }
  return ids;
}

ArrivalSchedule build_schedule(const BlockGrid& grid, ArrivalOrder order,
                               double inter_arrival_ms, double loss_rate,
                               std::uint64_t seed) {
  if (!(loss_rate >= 0.0 && loss_rate < 1.0)) {
    throw ContractViolation("loss_rate must lie in [0, 1)");
  }
  if (inter_arrival_ms < 0.0) {
    throw ContractViolation("inter_arrival must be non-negative");
  }
  ArrivalSchedule s;
  s.order = order;
  s.inter_arrival_ms = inter_arrival_ms;
  s.loss_rate = loss_rate;
  s.seed = seed;
  std::mt19937_64 loss_rng(derive_seed(seed, kLossStream));
  const auto ids = arrival_order(grid, order, seed);
  s.entries.reserve(ids.size());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    const bool delivered = unit_double(loss_rng) >= loss_rate;
    s.entries.push_back({ids[j], static_cast<double>(j) * inter_arrival_ms,
                         delivered});
  }
  return s;
}

double delay_model(std::size_t counted_events, double inter_arrival_ms,
                   double feedback_delay_ms) {
  return static_cast<double>(counted_events) * inter_arrival_ms +
         feedback_delay_ms;
}

RunTrace run(const ImageRaster& image, const BlockGrid& grid,
             const UtilityMap& utility, const Detector& detector,
             const PolicyConfig& policy, const ArrivalSchedule& schedule,
             const SimulationOptions& options) {
  const auto n = static_cast<std::size_t>(grid.n_blocks());
  if (utility.size() != n || schedule.entries.size() != n) {
    throw ContractViolation("grid, utility map and schedule disagree on size");
  }
  ProgressiveReceiver rx(image.meta(), grid, utility.total(), detector, policy,
                         {options.cadence, options.epsilon});

  RunTrace t;
  t.policy = policy.label();
  t.order = schedule.order;
  t.loss_rate = schedule.loss_rate;
  t.seed = schedule.seed;
  t.inter_arrival_ms = schedule.inter_arrival_ms;
  t.feedback_delay_ms = options.feedback_delay_ms;

  const double ia = schedule.inter_arrival_ms;
  bool stopped = false;
  std::size_t delivered_count = 0;
  for (std::size_t j = 0; j < n && !stopped; ++j) {
    const ScheduleEntry& e = schedule.entries[j];
    TraceEvent ev;
    ev.index = j;
    ev.time_ms = static_cast<double>(j + 1) * ia;
    ev.block = e.block;
    ev.delivered = e.delivered;
    if (e.delivered) {
      ++delivered_count;
      const Bytes payload = extract_block(image, grid, e.block);
      const auto u = rx.on_arrival(e.block, payload, utility[e.block]);
      ev.inferred = u.inferred;
      ev.action = u.decision.action;
      stopped = u.decision.stopped();
    }
    ev.rho = rx.state().rho;
    if (!stopped && j + 1 == n) {
      rx.on_schedule_exhausted();
      ev.action = StopAction::stop;
      stopped = true;
    }
    if (stopped) t.trigger_index = j;
    t.events.push_back(ev);
  }

  // Sender keeps transmitting until the stop signal reaches it.
  std::size_t delta = 0;
  if (options.feedback_delay_ms > 0.0 && ia > 0.0) {
    delta = static_cast<std::size_t>(std::ceil(options.feedback_delay_ms / ia));
  }
  const std::size_t last = std::min(n - 1, t.trigger_index + delta);
  for (std::size_t j = t.trigger_index + 1; j <= last; ++j) {
    const ScheduleEntry& e = schedule.entries[j];
    TraceEvent ev;
    ev.index = j;
    ev.time_ms = static_cast<double>(j + 1) * ia;
    ev.block = e.block;
    ev.delivered = e.delivered;
    ev.in_flight = true;
    ev.rho = rx.state().rho;
    ev.action = StopAction::stop;
    if (e.delivered) ++delivered_count;
    t.events.push_back(ev);
  }

  t.stop_step = rx.decision().trigger_step;
  t.reason = rx.decision().reason;
  t.in_flight = last - t.trigger_index;
  t.events_elapsed = last + 1;
  t.packets_delivered = delivered_count;
  t.stop_time_ms = delay_model(t.trigger_index + 1, ia, options.feedback_delay_ms);
  t.detector_calls = rx.detector_calls();
  t.final_detections = rx.final_detections();
  return t;
}

ArrivalSchedule schedule_from_trace(const RunTrace& trace, std::size_t n_blocks) {
  ArrivalSchedule s;
  s.order = trace.order;
  s.inter_arrival_ms = trace.inter_arrival_ms;
  s.loss_rate = trace.loss_rate;
  s.seed = trace.seed;
  std::vector<bool> seen(n_blocks, false);
  for (const auto& ev : trace.events) {
    s.entries.push_back({ev.block, static_cast<double>(ev.index) * s.inter_arrival_ms,
                         ev.delivered});
    seen[ev.block] = true;
  }
  // Slots after the recorded prefix were never transmitted; any filler works.
  for (BlockId id = 0; id < n_blocks; ++id) {
    if (!seen[id]) {
      s.entries.push_back({id, static_cast<double>(s.entries.size()) * s.inter_arrival_ms,
                           true});
    }
  }
  return s;
}

}  // namespace packetstop
