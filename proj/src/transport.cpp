#include "asyncsteer/transport.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "asyncsteer/errors.hpp"

namespace asyncsteer {

void LinkModel::validate() const {
  if (!(latency >= 0.0) || !std::isfinite(latency)) throw std::invalid_argument("link latency must be >= 0");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("link bandwidth must be > 0");
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw std::invalid_argument("link jitter must be >= 0");
  if (!(loss_probability >= 0.0 && loss_probability <= 1.0)) {
    throw std::invalid_argument("link loss probability must lie in [0, 1]");
  }
}

double transfer_time(double payload_bytes, const LinkModel& link) {
  if (!(payload_bytes >= 0.0)) throw std::invalid_argument("payload must be >= 0");
  return link.latency + payload_bytes / link.bandwidth;
}

HaloMessage HaloMessage::make(std::size_t sender, HaloDirection direction, std::uint64_t iteration,
                              std::vector<double> strip) {
  return HaloMessage{sender, direction, iteration, std::move(strip), iteration};
}

void VirtualClock::set(double t) {
  if (t < now()) throw std::logic_error("virtual clock cannot move backwards");
  now_.store(t, std::memory_order_release);
}

SimNetwork::SimNetwork(std::shared_ptr<Clock> clock) : clock_(std::move(clock)) {
  if (!clock_) throw std::invalid_argument("SimNetwork needs a clock");
}

std::size_t SimNetwork::add_link(const LinkModel& model) {
  model.validate();
  auto link = std::make_unique<Link>();
  link->model = model;
  // Decorrelate links that share a seed.
  link->rng.seed(model.seed ^ (0x9E3779B97F4A7C15ULL * (links_.size() + 1)));
  links_.push_back(std::move(link));
  return links_.size() - 1;
}

void SimNetwork::send(std::size_t link_id, HaloMessage message) {
  Link& link = *links_.at(link_id);
  const double now = clock_->now();
  TraceEntry entry;
  {
    std::lock_guard lock(link.mutex);
    if (link.closed) throw LinkDownError("send on closed link " + std::to_string(link_id));
    const auto& m = link.model;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool lost = m.loss_probability > 0.0 && unit(link.rng) < m.loss_probability;
    double jitter = 0.0;
    if (m.jitter > 0.0) jitter = std::uniform_real_distribution<double>(-m.jitter, m.jitter)(link.rng);
    const std::uint64_t seq = next_sequence_.fetch_add(1);

    entry = TraceEntry{link_id, seq, message.sender, message.sender_iteration, now, std::nan(""), lost};
    if (!lost) {
      double when = std::max(now, now + transfer_time(static_cast<double>(message.payload_bytes()), m) + jitter);
      when = std::max(when, link.last_delivery);  // FIFO per link
      link.last_delivery = when;
      entry.delivery_time = when;
      link.queue.push_back(InFlight{when, seq, std::move(message)});
    }
  }
  if (tracing_.load(std::memory_order_relaxed)) {
    std::lock_guard lock(trace_mutex_);
    trace_.push_back(entry);
  }
}

std::optional<HaloMessage> SimNetwork::poll(std::size_t link_id) {
  Link& link = *links_.at(link_id);
  const double now = clock_->now();
  std::lock_guard lock(link.mutex);
  if (link.closed) throw LinkDownError("poll on closed link " + std::to_string(link_id));
  if (link.queue.empty() || link.queue.front().delivery_time > now) return std::nullopt;
  HaloMessage out = std::move(link.queue.front().message);
  link.queue.pop_front();
  return out;
}

std::optional<double> SimNetwork::next_delivery_time(std::size_t link_id) const {
  const Link& link = *links_.at(link_id);
  std::lock_guard lock(link.mutex);
  if (link.queue.empty()) return std::nullopt;
  return link.queue.front().delivery_time;
}

std::size_t SimNetwork::in_flight(std::size_t link_id) const {
  const Link& link = *links_.at(link_id);
  std::lock_guard lock(link.mutex);
  return link.queue.size();
}

void SimNetwork::close(std::size_t link_id) {
  Link& link = *links_.at(link_id);
  std::lock_guard lock(link.mutex);
  link.closed = true;
  link.queue.clear();
}

bool SimNetwork::is_closed(std::size_t link_id) const {
  const Link& link = *links_.at(link_id);
  std::lock_guard lock(link.mutex);
  return link.closed;
}

std::vector<DeliveryEvent> SimNetwork::advance(double duration) {
  auto* vclock = dynamic_cast<VirtualClock*>(clock_.get());
  if (vclock == nullptr) throw std::logic_error("advance() requires a virtual clock");
  if (!(duration >= 0.0)) throw std::invalid_argument("advance duration must be >= 0");
  const double from = vclock->now();
  const double to = from + duration;
  std::vector<DeliveryEvent> fired;
  for (std::size_t id = 0; id < links_.size(); ++id) {
    std::lock_guard lock(links_[id]->mutex);
    for (const auto& f : links_[id]->queue) {
      if (f.delivery_time > from && f.delivery_time <= to) fired.push_back({id, f.sequence, f.delivery_time});
    }
  }
  std::ranges::sort(fired, [](const DeliveryEvent& a, const DeliveryEvent& b) {
    return a.delivery_time != b.delivery_time ? a.delivery_time < b.delivery_time : a.sequence < b.sequence;
  });
  vclock->set(to);
  return fired;
}

std::vector<TraceEntry> SimNetwork::trace() const {
  std::lock_guard lock(trace_mutex_);
  return trace_;
}

}  // namespace asyncsteer
