#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <netinet/in.h>

#include "packetstop/detector.hpp"
#include "packetstop/image.hpp"
#include "packetstop/policy.hpp"
#include "packetstop/receiver.hpp"
#include "packetstop/simulator.hpp"
#include "packetstop/utility.hpp"
#include "packetstop/wire.hpp"

namespace packetstop::live {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  // "host:port" or ":port" / "port" for loopback.
  static Endpoint parse(const std::string& text);
  std::string str() const { return host + ":" + std::to_string(port); }
};

struct Datagram {
  Bytes bytes;
  sockaddr_in from{};
};

/// Owning IPv4 datagram socket.
class UdpSocket {
 public:
  UdpSocket() = default;
  ~UdpSocket();
  UdpSocket(UdpSocket&& other) noexcept;
  UdpSocket& operator=(UdpSocket&& other) noexcept;
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  // Port 0 binds an ephemeral port.
  static UdpSocket bind(const Endpoint& local);

  std::uint16_t local_port() const;
  void send_to(std::span<const std::uint8_t> bytes, const Endpoint& peer) const;
  // nullopt on timeout; zero timeout polls without blocking.
  std::optional<Datagram> receive(std::chrono::microseconds timeout) const;
  bool valid() const { return fd_ >= 0; }

 private:
  explicit UdpSocket(int fd) : fd_(fd) {}
  int fd_ = -1;
};

struct SenderConfig {
  std::uint32_t image_id = 1;
  Endpoint data_peer;
  std::size_t frame_budget = wire::kDefaultFrameBudget;
};

struct SendReport {
  std::size_t frames_sent = 0;
  std::size_t slots_elapsed = 0;
  bool stopped = false;
  std::optional<wire::StopFrame> stop;
  std::size_t foreign_stop_frames = 0;  // StopFrames for another image id
  bool aborted = false;
  std::string error;
};

/// Paces frames at the schedule's inter-arrival time. Slots marked lost are
/// skipped (time still passes). The control socket is polled between sends;
/// a StopFrame for this image ends transmission.
SendReport sender_loop(const ImageRaster& image, const BlockGrid& grid,
                       const UtilityMap& utility, const ArrivalSchedule& schedule,
                       const UdpSocket& data, const UdpSocket& control,
                       const SenderConfig& config);

struct ReceiverConfig {
  ImageMeta meta;
  BlockGrid grid;
  std::optional<std::uint32_t> image_id;  // unset: lock on first frame seen
  PolicyConfig policy;
  ReceiverOptions options;
  std::optional<Endpoint> control_peer;
  double inter_arrival_ms = 5.0;
  std::chrono::milliseconds idle_timeout{500};
  std::chrono::milliseconds stop_resend{20};
  std::chrono::milliseconds quiet_period{100};
};

struct LiveResult {
  RunTrace trace;  // stop_time_ms is wall clock from first frame to decision
  std::vector<BlockId> accepted_order;
  ImageRaster observation;
  std::size_t frames_accepted = 0;
  std::size_t duplicates = 0;
  std::size_t rejected = 0;
  std::size_t foreign = 0;
  std::size_t stop_frames_sent = 0;
  bool timed_out = false;
  bool received_any = false;
  double final_rho = 0.0;
};

/// Network loop plus one inference worker fed through a single-producer
/// queue. Finalizes on stop (after the stream goes quiet), on a complete
/// block set, or on idle timeout.
LiveResult receiver_loop(const ReceiverConfig& config, const Detector& detector,
                         const UdpSocket& data, const UdpSocket& control);

}  // namespace packetstop::live
