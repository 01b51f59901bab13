#pragma once

#include <cstddef>
#include <span>

#include "packetstop/detector.hpp"
#include "packetstop/image.hpp"
#include "packetstop/policy.hpp"

namespace packetstop {

struct ReceiverOptions {
  std::size_t cadence = 8;  // detector runs every `cadence` accepted arrivals
  double epsilon = 1e-6;
};

/// Receive-update-infer loop shared by the simulator and the live receiver.
/// Feed accepted arrivals in order; duplicates are no-ops. Once a stop
/// decision is reached it is absorbing and later arrivals are ignored.
class ProgressiveReceiver {
 public:
  struct Update {
    bool accepted = false;
    bool inferred = false;
    StopDecision decision;
  };

  ProgressiveReceiver(ImageMeta meta, BlockGrid grid, double total_utility,
                      const Detector& detector, PolicyConfig policy,
                      ReceiverOptions options = {});

  Update on_arrival(BlockId id, std::span<const std::uint8_t> payload,
                    double utility);
  // No further arrivals will come (schedule end or idle timeout).
  Update on_schedule_exhausted();

  bool stopped() const { return decision_.stopped(); }
  const StopDecision& decision() const { return decision_; }
  const PolicyState& state() const { return state_; }
  const ImageRaster& observation() const { return canvas_; }
  const DetectionSet& final_detections() const { return final_; }
  std::size_t detector_calls() const { return detector_calls_; }
  const BlockGrid& grid() const { return grid_; }
  const PolicyConfig& policy() const { return policy_; }

 private:
  void infer();
  void finish(const StopDecision& d, bool inferred_now);

  BlockGrid grid_;
  double total_;
  const Detector& detector_;
  PolicyConfig policy_;
  ReceiverOptions options_;
  PolicyState state_;
  ImageRaster canvas_;
  double received_sum_ = 0.0;
  StopDecision decision_;
  DetectionSet final_;
  std::size_t history_cap_;
  std::size_t detector_calls_ = 0;
};

}  // namespace packetstop
