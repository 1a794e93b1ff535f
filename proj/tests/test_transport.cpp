#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <random>
#include <thread>

#include "asyncsteer/errors.hpp"
#include "asyncsteer/framing.hpp"
#include "asyncsteer/transport.hpp"

using namespace asyncsteer;

namespace {

HaloMessage msg(std::uint64_t iteration, std::size_t width = 4) {
  return HaloMessage::make(0, HaloDirection::South, iteration, std::vector<double>(width, double(iteration)));
}

struct VirtualNet {
  std::shared_ptr<VirtualClock> clock = std::make_shared<VirtualClock>();
  SimNetwork net{clock};
};

}  // namespace

TEST(TransferTime, LatencyOnly) {
  LinkModel link;
  link.latency = 0.001;
  link.bandwidth = mbps_to_bytes_per_second(100);
  EXPECT_EQ(transfer_time(0, link), 0.001);
}

TEST(TransferTime, TwoHundredThousandDoublesOverFastEthernet) {
  LinkModel link;
  link.latency = 0.001;
  link.bandwidth = mbps_to_bytes_per_second(100);
  EXPECT_EQ(link.bandwidth, 12'500'000.0);
  const double one = transfer_time(200'000 * sizeof(double), link);
  EXPECT_EQ(one, 0.129);
  EXPECT_EQ(10'000 * one, 1290.0);
}

TEST(TransferTime, MonotoneInPayloadLatencyAndBandwidth) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    LinkModel a;
    a.latency = u(rng) * 0.1;
    a.bandwidth = 1e3 + u(rng) * 1e9;
    const double p = u(rng) * 1e7;
    LinkModel slower = a;
    slower.latency += u(rng) * 0.01;
    slower.bandwidth *= 0.5 + 0.5 * u(rng);
    EXPECT_LE(transfer_time(p, a), transfer_time(p + u(rng) * 1e5, a));
    EXPECT_LE(transfer_time(p, a), transfer_time(p, slower));
  }
  LinkModel l;
  l.bandwidth = 1e6;
  LinkModel doubled = l;
  doubled.bandwidth = 2e6;
  EXPECT_DOUBLE_EQ(transfer_time(1e6, doubled), transfer_time(1e6, l) / 2);
}

TEST(LinkModel, ValidationRejectsOutOfRange) {
  LinkModel l;
  l.loss_probability = 1.5;
  EXPECT_THROW(l.validate(), std::invalid_argument);
  l = {};
  l.bandwidth = 0;
  EXPECT_THROW(l.validate(), std::invalid_argument);
  l = {};
  l.latency = -1;
  EXPECT_THROW(l.validate(), std::invalid_argument);
  EXPECT_THROW(transfer_time(-1, LinkModel{}), std::invalid_argument);
}

TEST(SimNetwork, ZeroLatencyDeliversOnNextPoll) {
  VirtualNet v;
  const auto link = v.net.add_link(LinkModel{});
  EXPECT_FALSE(v.net.poll(link));
  v.net.send(link, msg(1));
  auto got = v.net.poll(link);
  ASSERT_TRUE(got);
  EXPECT_EQ(got->sender_iteration, 1u);
  EXPECT_TRUE(got->intact());
}

TEST(SimNetwork, LatencyHoldsMessageUntilDue) {
  VirtualNet v;
  LinkModel l;
  l.latency = 0.050;
  const auto link = v.net.add_link(l);
  v.net.send(link, msg(1));
  v.net.advance(0.010);
  EXPECT_FALSE(v.net.poll(link));
  v.net.advance(0.050);
  EXPECT_TRUE(v.net.poll(link));
}

TEST(SimNetwork, TotalLossNeverDelivers) {
  VirtualNet v;
  LinkModel l;
  l.loss_probability = 1.0;
  const auto link = v.net.add_link(l);
  v.net.enable_trace(true);
  for (int i = 1; i <= 50; ++i) v.net.send(link, msg(i));
  v.net.advance(100.0);
  EXPECT_FALSE(v.net.poll(link));
  EXPECT_EQ(v.net.in_flight(link), 0u);
  for (const auto& t : v.net.trace()) EXPECT_TRUE(t.lost);
}

TEST(SimNetwork, AdvanceOrdersTiesBySequence) {
  VirtualNet v;
  LinkModel l;
  l.latency = 0.005;
  const auto a = v.net.add_link(l);
  const auto b = v.net.add_link(l);
  v.net.send(b, msg(1));
  v.net.send(a, msg(2));
  EXPECT_TRUE(v.net.advance(0.0).empty());
  const auto fired = v.net.advance(0.010);
  ASSERT_EQ(fired.size(), 2u);
  EXPECT_EQ(fired[0].link, b);
  EXPECT_EQ(fired[1].link, a);
  EXPECT_LT(fired[0].sequence, fired[1].sequence);
  EXPECT_EQ(fired[0].delivery_time, fired[1].delivery_time);
}

TEST(SimNetwork, SeededJitterIsReproducibleAndFifo) {
  auto run = [](std::uint64_t seed) {
    VirtualNet v;
    LinkModel l;
    l.latency = 0.002;
    l.jitter = 0.002;
    l.loss_probability = 0.2;
    l.seed = seed;
    const auto link = v.net.add_link(l);
    v.net.enable_trace(true);
    std::vector<std::uint64_t> delivered;
    for (int i = 1; i <= 200; ++i) {
      v.net.send(link, msg(i));
      v.net.advance(0.0005);
      while (auto m = v.net.poll(link)) delivered.push_back(m->sender_iteration);
    }
    v.net.advance(1.0);
    while (auto m = v.net.poll(link)) delivered.push_back(m->sender_iteration);
    return std::pair{v.net.trace(), delivered};
  };
  const auto [trace1, order1] = run(42);
  const auto [trace2, order2] = run(42);
  const auto [trace3, order3] = run(43);
  EXPECT_EQ(trace1, trace2);
  EXPECT_EQ(order1, order2);
  EXPECT_NE(trace1, trace3);
  EXPECT_TRUE(std::ranges::is_sorted(order1));
  EXPECT_LT(order1.size(), 200u);
  EXPECT_GT(order1.size(), 100u);
}

TEST(SimNetwork, ClosedLinkReportsLinkDown) {
  VirtualNet v;
  const auto link = v.net.add_link(LinkModel{});
  v.net.close(link);
  EXPECT_TRUE(v.net.is_closed(link));
  EXPECT_THROW(v.net.send(link, msg(1)), LinkDownError);
  EXPECT_THROW(v.net.poll(link), LinkDownError);
}

TEST(SimNetwork, AdvanceNeedsVirtualClock) {
  SimNetwork net(std::make_shared<WallClock>());
  EXPECT_THROW(net.advance(1.0), std::logic_error);
}

TEST(SimNetwork, ConcurrentSendersNeverTearOrReorder) {
  SimNetwork net(std::make_shared<WallClock>());
  constexpr int kLinks = 4;
  constexpr std::uint64_t kMessages = 5000;
  for (int i = 0; i < kLinks; ++i) net.add_link(LinkModel{});

  std::atomic<bool> failed{false};
  std::vector<std::thread> threads;
  for (int i = 0; i < kLinks; ++i) {
    threads.emplace_back([&, i] {
      for (std::uint64_t k = 1; k <= kMessages; ++k) net.send(i, msg(k, 64));
    });
    threads.emplace_back([&, i] {
      std::uint64_t last = 0;
      while (last < kMessages) {
        auto m = net.poll(i);
        if (!m) {
          std::this_thread::yield();
          continue;
        }
        const bool uniform = std::ranges::all_of(m->strip, [&](double v) { return v == double(m->sender_iteration); });
        if (!m->intact() || !uniform || m->sender_iteration != last + 1) failed = true;
        last = m->sender_iteration;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_FALSE(failed);
}

TEST(Framing, RoundTripAcrossArbitrarySplits) {
  std::mt19937 rng(9);
  std::vector<std::string> payloads;
  std::string stream;
  for (int i = 0; i < 50; ++i) {
    std::string p(std::uniform_int_distribution<int>(0, 300)(rng), '\0');
    for (auto& c : p) c = static_cast<char>(rng());
    stream += encode_frame(p);
    payloads.push_back(std::move(p));
  }
  FrameDecoder dec;
  std::vector<std::string> got;
  for (std::size_t pos = 0; pos < stream.size();) {
    const std::size_t n = std::min<std::size_t>(stream.size() - pos, std::uniform_int_distribution<int>(1, 97)(rng));
    for (auto& f : dec.feed(std::string_view(stream).substr(pos, n))) got.push_back(std::move(f));
    pos += n;
  }
  EXPECT_EQ(got, payloads);
  EXPECT_EQ(dec.buffered(), 0u);
}

TEST(Framing, BigEndianLengthPrefix) {
  const auto f = encode_frame("abc");
  ASSERT_EQ(f.size(), 7u);
  EXPECT_EQ(f.substr(0, 4), std::string("\0\0\0\x03", 4));
  EXPECT_EQ(encode_frame(std::string(258, 'x')).substr(0, 4), std::string("\0\0\x01\x02", 4));
}

TEST(Framing, OversizedFrameIsProtocolError) {
  FrameDecoder dec(16);
  EXPECT_THROW(dec.feed(std::string("\0\0\0\x20", 4)), ProtocolError);
}
