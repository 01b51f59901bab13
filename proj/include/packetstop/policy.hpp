#pragma once

#include <cstddef>
#include <deque>
#include <string>

#include "packetstop/detector.hpp"
#include "packetstop/image.hpp"

namespace packetstop {

enum class StopAction { proceed, stop };

enum class StopReason : std::uint8_t {
  none = 0,
  utility_threshold = 1,
  stability = 2,
  full_reception = 3,
  exhausted = 4,
};

struct StopDecision {
  StopAction action = StopAction::proceed;
  std::size_t trigger_step = 0;
  StopReason reason = StopReason::none;

  bool stopped() const { return action == StopAction::stop; }
  static StopDecision proceed() { return {}; }
  static StopDecision stop_at(std::size_t step, StopReason reason) {
    return {StopAction::stop, step, reason};
  }
  bool operator==(const StopDecision&) const = default;
};

/// Receiver state a policy sees. `step` counts accepted arrivals (k).
struct PolicyState {
  std::size_t step = 0;
  ReceptionSet reception;
  double rho = 0.0;
  std::deque<DetectionSet> detection_history;  // newest at back
  bool schedule_exhausted = false;

  bool all_received() const { return reception.complete(); }
};

StopDecision utility_policy(const PolicyState& state, double tau_rho);

StopDecision stability_policy(const PolicyState& state, double conf_floor,
                              double iou_floor, std::size_t window);

StopDecision full_policy(const PolicyState& state);

enum class PolicyKind { full, stability, utility };

struct PolicyConfig {
  PolicyKind kind = PolicyKind::utility;
  double tau_rho = 0.8;
  double conf_floor = 0.9;
  double iou_floor = 0.9;
  std::size_t window = 3;

  static PolicyConfig full() { return {PolicyKind::full}; }
  static PolicyConfig utility(double tau) {
    return {PolicyKind::utility, tau};
  }
  static PolicyConfig stability(double conf = 0.9, double iou = 0.9,
                                std::size_t window = 3) {
    return {PolicyKind::stability, 0.8, conf, iou, window};
  }

  // "full", "stability(0.9)", "utility(0.8)"
  std::string label() const;
  // Inverse of label(); "stability" alone takes the defaults.
  static PolicyConfig parse(const std::string& text);
  bool operator==(const PolicyConfig&) const = default;
};

StopDecision decide(const PolicyConfig& config, const PolicyState& state);

std::string to_string(StopReason reason);
std::string to_string(PolicyKind kind);
StopReason stop_reason_from_string(const std::string& text);
PolicyKind policy_kind_from_string(const std::string& text);

}  // namespace packetstop
