#include "packetstop/receiver.hpp"

#include <algorithm>

#include "packetstop/errors.hpp"

namespace packetstop {

ProgressiveReceiver::ProgressiveReceiver(ImageMeta meta, BlockGrid grid,
                                         double total_utility,
                                         const Detector& detector,
                                         PolicyConfig policy,
                                         ReceiverOptions options)
    : grid_(grid),
      total_(total_utility),
      detector_(detector),
      policy_(policy),
      options_(options),
      canvas_(meta.width, meta.height, meta.channels),
      history_cap_(std::max<std::size_t>(policy.window, 1)) {
  if (meta.width != grid.image_width() || meta.height != grid.image_height()) {
    throw DimensionError("receiver image meta does not match block grid");
  }
  if (options_.cadence == 0) throw ContractViolation("cadence must be >= 1");
  state_.reception = ReceptionSet(static_cast<std::size_t>(grid.n_blocks()));
}

void ProgressiveReceiver::infer() {
  state_.detection_history.push_back(detector_.detect(canvas_));
  ++detector_calls_;
  while (state_.detection_history.size() > history_cap_) {
    state_.detection_history.pop_front();
  }
}

void ProgressiveReceiver::finish(const StopDecision& d, bool inferred_now) {
  decision_ = d;
  if (inferred_now) {
    final_ = state_.detection_history.back();
  } else {
    final_ = detector_.detect(canvas_);
    ++detector_calls_;
  }
}

ProgressiveReceiver::Update ProgressiveReceiver::on_arrival(
    BlockId id, std::span<const std::uint8_t> payload, double utility) {
  Update u;
  if (stopped()) {
    u.decision = decision_;
    return u;
  }
  if (!grid_.contains(id) || payload.size() != grid_.payload_bytes(canvas_.channels())) {
    throw ContractViolation("arrival does not fit the block grid");
  }
  if (!state_.reception.insert(id, state_.step + 1)) {
    return u;  // duplicate
  }
  u.accepted = true;
  ++state_.step;
  place_block(canvas_, grid_, id, payload);
  received_sum_ += utility;
  state_.rho = received_sum_ / (total_ + options_.epsilon);

  if (state_.step % options_.cadence == 0) {
    infer();
    u.inferred = true;
  }
  u.decision = decide(policy_, state_);
  if (u.decision.stopped()) finish(u.decision, u.inferred);
  return u;
}

ProgressiveReceiver::Update ProgressiveReceiver::on_schedule_exhausted() {
  Update u;
  if (!stopped()) {
    state_.schedule_exhausted = true;
    u.decision = decide(policy_, state_);
    finish(u.decision, false);
  }
  u.decision = decision_;
  return u;
}

}  // namespace packetstop
