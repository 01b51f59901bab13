#include "packetstop/live.hpp"

#include <arpa/inet.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "packetstop/errors.hpp"

namespace packetstop::live {

using Clock = std::chrono::steady_clock;

namespace {

sockaddr_in to_sockaddr(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  const std::string host = ep.host.empty() || ep.host == "localhost"
                               ? std::string("127.0.0.1")
                               : ep.host;
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw IoError("invalid IPv4 address: " + ep.host);
  }
  return addr;
}

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text) {
  Endpoint ep;
  const auto colon = text.rfind(':');
  std::string port = text;
  if (colon != std::string::npos) {
    if (colon > 0) ep.host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  try {
    const unsigned long v = std::stoul(port);
    if (v > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(v);
  } catch (const std::exception&) {
    throw ParseError("bad endpoint: " + text);
  }
  return ep;
}

UdpSocket::~UdpSocket() {
  if (fd_ >= 0) ::close(fd_);
}

UdpSocket::UdpSocket(UdpSocket&& other) noexcept : fd_(other.fd_) {
  other.fd_ = -1;
}

UdpSocket& UdpSocket::operator=(UdpSocket&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = other.fd_;
    other.fd_ = -1;
  }
  return *this;
}

UdpSocket UdpSocket::bind(const Endpoint& local) {
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
  UdpSocket sock(fd);
  const int rcvbuf = 1 << 20;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &rcvbuf, sizeof rcvbuf);
  const sockaddr_in addr = to_sockaddr(local);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    throw IoError("bind " + local.str() + ": " + std::strerror(errno));
  }
  return sock;
}

std::uint16_t UdpSocket::local_port() const {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    throw IoError(std::string("getsockname: ") + std::strerror(errno));
  }
  return ntohs(addr.sin_port);
}

void UdpSocket::send_to(std::span<const std::uint8_t> bytes,
                        const Endpoint& peer) const {
  const sockaddr_in addr = to_sockaddr(peer);
  const ssize_t n = ::sendto(fd_, bytes.data(), bytes.size(), 0,
                             reinterpret_cast<const sockaddr*>(&addr), sizeof addr);
  if (n < 0) throw IoError(std::string("sendto: ") + std::strerror(errno));
}

std::optional<Datagram> UdpSocket::receive(std::chrono::microseconds timeout) const {
  pollfd pfd{fd_, POLLIN, 0};
  const auto ms = std::chrono::ceil<std::chrono::milliseconds>(timeout).count();
  const int ready = ::poll(&pfd, 1, static_cast<int>(std::max<long long>(0, ms)));
  if (ready < 0) {
    if (errno == EINTR) return std::nullopt;
    throw IoError(std::string("poll: ") + std::strerror(errno));
  }
  if (ready == 0) return std::nullopt;
  Datagram d;
  d.bytes.resize(65536);
  socklen_t len = sizeof d.from;
  const ssize_t n = ::recvfrom(fd_, d.bytes.data(), d.bytes.size(), 0,
                               reinterpret_cast<sockaddr*>(&d.from), &len);
  if (n < 0) {
    if (errno == EAGAIN || errno == EINTR) return std::nullopt;
    throw IoError(std::string("recvfrom: ") + std::strerror(errno));
  }
  d.bytes.resize(static_cast<std::size_t>(n));
  return d;
}

SendReport sender_loop(const ImageRaster& image, const BlockGrid& grid,
                       const UtilityMap& utility, const ArrivalSchedule& schedule,
                       const UdpSocket& data, const UdpSocket& control,
                       const SenderConfig& config) {
  SendReport report;
  const QuantizedUtility q = quantize(utility);
  const auto n_blocks = static_cast<std::uint32_t>(grid.n_blocks());
  const auto slot = std::chrono::duration<double, std::milli>(schedule.inter_arrival_ms);
  const auto start = Clock::now();

  auto poll_control = [&](Clock::time_point until) {
    do {
      const auto left = std::chrono::duration_cast<std::chrono::microseconds>(
          until - Clock::now());
      auto d = control.receive(std::max(left, std::chrono::microseconds(0)));
      if (!d) continue;
      auto decoded = wire::decode_stop_frame(d->bytes);
      if (!decoded.ok()) continue;
      if (decoded.frame->image_id != config.image_id) {
        ++report.foreign_stop_frames;
        continue;
      }
      report.stopped = true;
      report.stop = decoded.frame;
      return;
    } while (Clock::now() < until);
  };

  try {
    for (std::size_t j = 0; j < schedule.entries.size(); ++j) {
      const auto due = start + std::chrono::duration_cast<Clock::duration>(slot * j);
      poll_control(due);
      if (report.stopped) break;
      const ScheduleEntry& e = schedule.entries[j];
      report.slots_elapsed = j + 1;
      if (!e.delivered) continue;
      wire::DataFrame f;
      f.image_id = config.image_id;
      f.block_id = e.block;
      f.n_blocks = n_blocks;
      f.utility_q = q.shares[e.block];
      f.total_utility_q = q.total_q;
      f.payload = extract_block(image, grid, e.block);
      data.send_to(wire::encode(f, config.frame_budget), config.data_peer);
      ++report.frames_sent;
    }
  } catch (const std::exception& ex) {
    report.aborted = true;
    report.error = ex.what();
  }
  return report;
}

namespace {

struct QueuedFrame {
  BlockId block = 0;
  Bytes payload;
  double utility = 0.0;
  double total = 0.0;
  double arrival_ms = 0.0;
};

class FrameQueue {
 public:
  void push(QueuedFrame f) {
    {
      std::lock_guard lock(mutex_);
      items_.push_back(std::move(f));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_one();
  }
  // nullopt once closed and drained.
  std::optional<QueuedFrame> pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    QueuedFrame f = std::move(items_.front());
    items_.pop_front();
    return f;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<QueuedFrame> items_;
  bool closed_ = false;
};

}  // namespace

LiveResult receiver_loop(const ReceiverConfig& config, const Detector& detector,
                         const UdpSocket& data, const UdpSocket& control) {
  LiveResult result;
  const auto n = static_cast<std::size_t>(config.grid.n_blocks());
  const std::size_t payload_bytes = config.grid.payload_bytes(config.meta.channels);

  FrameQueue queue;
  std::atomic<bool> decided{false};
  std::optional<ProgressiveReceiver> engine;
  std::vector<TraceEvent> events;
  double decision_ms = 0.0;
  Clock::time_point first_arrival{};

  // Inference worker: sole owner of `engine` until joined.
  std::thread worker([&] {
    while (auto f = queue.pop()) {
      if (!engine) {
        engine.emplace(config.meta, config.grid, f->total, detector,
                       config.policy, config.options);
      }
      if (engine->stopped()) continue;
      const auto u = engine->on_arrival(f->block, f->payload, f->utility);
      if (!u.accepted) continue;
      TraceEvent ev;
      ev.index = events.size();
      ev.time_ms = f->arrival_ms;
      ev.block = f->block;
      ev.rho = engine->state().rho;
      ev.inferred = u.inferred;
      ev.action = u.decision.action;
      events.push_back(ev);
      if (u.decision.stopped()) {
        decision_ms = f->arrival_ms;
        decided.store(true);
      }
    }
    if (engine && !engine->stopped()) {
      engine->on_schedule_exhausted();
      if (!events.empty()) events.back().action = StopAction::stop;
      decision_ms = events.empty() ? 0.0 : events.back().time_ms;
    }
    decided.store(true);
  });

  std::vector<bool> seen(n, false);
  std::optional<std::uint32_t> image_id = config.image_id;
  std::optional<Endpoint> stop_peer = config.control_peer;
  auto last_data = Clock::now();
  Clock::time_point last_stop_sent{};
  bool stop_sent = false;
  std::size_t distinct = 0;

  auto send_stop = [&] {
    if (!stop_peer || !image_id) return;
    wire::StopFrame sf;
    sf.image_id = *image_id;
    // Worker has published `decided`; its engine state is stable from here.
    sf.stop_step = static_cast<std::uint32_t>(engine ? engine->decision().trigger_step : 0);
    sf.reason = engine ? engine->decision().reason : StopReason::exhausted;
    control.send_to(wire::encode(sf), *stop_peer);
    ++result.stop_frames_sent;
    last_stop_sent = Clock::now();
  };

  bool queue_closed = false;
  while (true) {
    const auto now = Clock::now();
    if (decided.load()) {
      if (!stop_sent) {
        send_stop();
        stop_sent = true;
      } else if (now - last_stop_sent >= config.stop_resend) {
        send_stop();
      }
      if (now - last_data >= config.quiet_period) break;
    } else if (now - last_data >= config.idle_timeout) {
      result.timed_out = true;
      break;
    }

    auto d = data.receive(std::chrono::milliseconds(2));
    if (!d) continue;
    auto decoded = wire::decode_data_frame(d->bytes);
    if (!decoded.ok()) {
      ++result.rejected;
      continue;
    }
    wire::DataFrame& f = *decoded.frame;
    if (!image_id) image_id = f.image_id;
    if (f.image_id != *image_id) {
      ++result.foreign;
      continue;
    }
    if (f.n_blocks != n || f.payload.size() != payload_bytes) {
      ++result.rejected;
      continue;
    }
    last_data = Clock::now();
    if (!result.received_any) {
      result.received_any = true;
      first_arrival = last_data;
    }
    if (!stop_peer) {
      char host[INET_ADDRSTRLEN];
      inet_ntop(AF_INET, &d->from.sin_addr, host, sizeof host);
      stop_peer = Endpoint{host, ntohs(d->from.sin_port)};
    }
    if (seen[f.block_id]) {
      ++result.duplicates;
      continue;
    }
    seen[f.block_id] = true;
    ++distinct;
    result.accepted_order.push_back(f.block_id);
    queue.push({f.block_id, std::move(f.payload),
                dequantize_value(f.utility_q, f.total_utility_q),
                dequantize_total(f.total_utility_q), ms_since(first_arrival)});
    if (distinct == n && !queue_closed) {
      queue.close();
      queue_closed = true;
    }
  }
  if (!queue_closed) queue.close();
  worker.join();

  result.frames_accepted = distinct;
  RunTrace& t = result.trace;
  t.policy = config.policy.label();
  t.inter_arrival_ms = config.inter_arrival_ms;
  t.events = std::move(events);
  if (engine) {
    t.stop_step = engine->decision().trigger_step;
    t.reason = engine->decision().reason;
    t.trigger_index = t.stop_step > 0 ? t.stop_step - 1 : 0;
    t.final_detections = engine->final_detections();
    t.detector_calls = engine->detector_calls();
    result.observation = engine->observation();
    result.final_rho = engine->state().rho;
  } else {
    t.reason = StopReason::exhausted;
    result.observation = ImageRaster(config.meta.width, config.meta.height,
                                     config.meta.channels);
  }
  t.events_elapsed = distinct;
  t.packets_delivered = distinct;
  t.in_flight = distinct - t.stop_step;
  t.stop_time_ms = decision_ms;
  return result;
}

}  // namespace packetstop::live
