#include "packetstop/policy.hpp"

#include <cstdio>

#include "packetstop/errors.hpp"

namespace packetstop {

namespace {

StopDecision fallback(const PolicyState& state) {
  if (state.all_received() || state.schedule_exhausted) {
    return StopDecision::stop_at(state.step, StopReason::exhausted);
  }
  return StopDecision::proceed();
}

std::string format_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

StopDecision utility_policy(const PolicyState& state, double tau_rho) {
  if (state.step > 0 && state.rho >= tau_rho) {
    return StopDecision::stop_at(state.step, StopReason::utility_threshold);
  }
  return fallback(state);
}

StopDecision stability_policy(const PolicyState& state, double conf_floor,
                              double iou_floor, std::size_t window) {
  if (window < 2) throw ContractViolation("stability window must be >= 2");
  const auto& hist = state.detection_history;
  if (hist.size() >= window) {
    bool stable = true;
    const Detection* prev = nullptr;
    int cls = -1;
    for (std::size_t i = hist.size() - window; i < hist.size() && stable; ++i) {
      if (hist[i].empty()) {
        stable = false;
        break;
      }
      const Detection& top = hist[i].detections().front();
      if (cls < 0) cls = top.class_id;
      if (top.class_id != cls || top.confidence < conf_floor) stable = false;
      if (prev != nullptr && iou(prev->box, top.box) < iou_floor) stable = false;
      prev = &top;
    }
    if (stable) return StopDecision::stop_at(state.step, StopReason::stability);
  }
  return fallback(state);
}

StopDecision full_policy(const PolicyState& state) {
  if (state.all_received()) {
    return StopDecision::stop_at(state.step, StopReason::full_reception);
  }
  if (state.schedule_exhausted) {
    return StopDecision::stop_at(state.step, StopReason::exhausted);
  }
  return StopDecision::proceed();
}

StopDecision decide(const PolicyConfig& config, const PolicyState& state) {
  switch (config.kind) {
    case PolicyKind::full:
      return full_policy(state);
    case PolicyKind::stability:
      return stability_policy(state, config.conf_floor, config.iou_floor,
                              config.window);
    case PolicyKind::utility:
      return utility_policy(state, config.tau_rho);
  }
  return StopDecision::proceed();
}

std::string PolicyConfig::label() const {
  switch (kind) {
    case PolicyKind::full:
      return "full";
    case PolicyKind::stability:
      return "stability(" + format_param(conf_floor) + ")";
    case PolicyKind::utility:
      return "utility(" + format_param(tau_rho) + ")";
  }
  return "?";
}

PolicyConfig PolicyConfig::parse(const std::string& text) {
  const auto open = text.find('(');
  const std::string kind_text = text.substr(0, open);
  PolicyConfig p;
  p.kind = policy_kind_from_string(kind_text);
  if (open == std::string::npos) {
    if (p.kind == PolicyKind::utility) throw ParseError("utility needs a threshold: " + text);
    return p;
  }
  if (text.back() != ')' || p.kind == PolicyKind::full) {
    throw ParseError("bad policy: " + text);
  }
  double v = 0.0;
  try {
    std::size_t used = 0;
    const std::string arg = text.substr(open + 1, text.size() - open - 2);
    v = std::stod(arg, &used);
    if (used != arg.size()) throw std::invalid_argument(arg);
  } catch (const std::exception&) {
    throw ParseError("bad policy parameter: " + text);
  }
  if (!(v >= 0.0 && v <= 1.0)) throw ParseError("policy parameter outside [0, 1]: " + text);
  (p.kind == PolicyKind::utility ? p.tau_rho : p.conf_floor) = v;
  return p;
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::none: return "none";
    case StopReason::utility_threshold: return "utility_threshold";
    case StopReason::stability: return "stability";
    case StopReason::full_reception: return "full_reception";
    case StopReason::exhausted: return "exhausted";
  }
  return "none";
}

StopReason stop_reason_from_string(const std::string& text) {
  for (auto r : {StopReason::none, StopReason::utility_threshold,
                 StopReason::stability, StopReason::full_reception,
                 StopReason::exhausted}) {
    if (to_string(r) == text) return r;
  }
  throw ParseError("unknown stop reason: " + text);
}

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::full: return "full";
    case PolicyKind::stability: return "stability";
    case PolicyKind::utility: return "utility";
  }
  return "?";
}

PolicyKind policy_kind_from_string(const std::string& text) {
  if (text == "full") return PolicyKind::full;
  if (text == "stability") return PolicyKind::stability;
  if (text == "utility") return PolicyKind::utility;
  throw ParseError("unknown policy kind: " + text);
}

}  // namespace packetstop
