#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "asyncsteer/errors.hpp"
#include "asyncsteer/protocol.hpp"

using namespace asyncsteer;

TEST(Downsample, FactorOneIsIdentity) {
  Field2D f(7, 5);
  std::mt19937 rng(2);
  for (auto& v : f.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto t = downsample(f, 1);
  EXPECT_EQ(t.width, 7u);
  EXPECT_EQ(t.height, 5u);
  EXPECT_EQ(t.values, f.values());
}

TEST(Downsample, UniformFieldStaysUniform) {
  const auto t = downsample(Field2D(4, 4, 3.0), 2);
  EXPECT_EQ(t.width, 2u);
  EXPECT_EQ(t.height, 2u);
  EXPECT_EQ(t.values, (std::vector<double>{3, 3, 3, 3}));
}

TEST(Downsample, BlockMeans) {
  Field2D f(4, 4);
  for (std::size_t x = 0; x < 4; ++x) {
    f.at(x, 2) = 4;
    f.at(x, 3) = 4;
  }
  const auto t = downsample(f, 2);
  EXPECT_EQ(t.values, (std::vector<double>{0, 0, 4, 4}));
}

TEST(Downsample, RaggedEdgeBlocksAreSmaller) {
  Field2D f(5, 3);
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t x = 0; x < 5; ++x) f.at(x, y) = static_cast<double>(x + 10 * y);
  }
  const auto t = downsample(f, 2);
  ASSERT_EQ(t.width, 3u);
  ASSERT_EQ(t.height, 2u);
  EXPECT_EQ(t.values[0], (0 + 1 + 10 + 11) / 4.0);
  EXPECT_EQ(t.values[2], (4 + 14) / 2.0);
  EXPECT_EQ(t.values[3], (20 + 21) / 2.0);
  EXPECT_EQ(t.values[5], 24.0);
  EXPECT_THROW(downsample(f, 0), std::invalid_argument);
}

TEST(Commands, Validation) {
  EXPECT_EQ(validate_command(SetSource{0, 0, 5}, 10, 10), "out_of_bounds");
  EXPECT_EQ(validate_command(SetSource{9, 4, 5}, 10, 10), "out_of_bounds");
  EXPECT_EQ(validate_command(SetSource{-3, 4, 5}, 10, 10), "out_of_bounds");
  EXPECT_EQ(validate_command(SetSource{8, 8, 5}, 10, 10), std::nullopt);
  EXPECT_EQ(validate_command(ClearSource{4, 0}, 10, 10), "out_of_bounds");
  EXPECT_EQ(validate_command(SetTolerance{0.0}, 10, 10), "invalid_value");
  EXPECT_EQ(validate_command(SetTolerance{-1.0}, 10, 10), "invalid_value");
  EXPECT_EQ(validate_command(SetTolerance{1e-3}, 10, 10), std::nullopt);
  EXPECT_EQ(validate_command(SetBoundary{Edge::East, std::numeric_limits<double>::infinity()}, 10, 10),
            "invalid_value");
  EXPECT_EQ(validate_command(Pause{}, 10, 10), std::nullopt);
}

TEST(Frames, CommandRoundTrip) {
  const std::vector<SteeringCommand> all{SetBoundary{Edge::West, 12.5}, SetSource{3, 4, -1}, ClearSource{3, 4},
                                         SetMode{IterationMode::Async},  Pause{},
                                         Resume{},                       Restart{true},
                                         SetTolerance{1e-8}};
  for (const auto& cmd : all) {
    const auto frame = decode(encode_command("c-1", cmd));
    const auto* c = std::get_if<CommandFrame>(&frame);
    ASSERT_NE(c, nullptr);
    EXPECT_EQ(c->id, "c-1");
    ASSERT_TRUE(c->command);
    EXPECT_EQ(command_name(*c->command), command_name(cmd));
    EXPECT_EQ(encode_command("c-1", *c->command), encode_command("c-1", cmd));
  }
}

TEST(Frames, BadCommandsBecomeReasonsNotErrors) {
  auto reason = [](std::string_view payload) {
    const auto frame = decode(payload);
    return std::get<CommandFrame>(frame).reason;
  };
  EXPECT_EQ(reason(R"({"type":"COMMAND","id":"a","command":{"kind":"EXPLODE"}})"), "unknown_command");
  EXPECT_EQ(reason(R"({"type":"COMMAND","id":"a","command":{"kind":"SET_SOURCE","x":"one"}})"), "malformed_command");
  EXPECT_EQ(reason(R"({"type":"COMMAND","id":"a"})"), "malformed_command");
  EXPECT_EQ(reason(R"({"type":"COMMAND","id":"a","command":{"kind":"SET_MODE","mode":"turbo"}})"), "invalid_value");
  const auto numeric = decode(R"({"type":"COMMAND","id":42,"command":{"kind":"PAUSE"}})");
  EXPECT_EQ(std::get<CommandFrame>(numeric).id, "42");
}

TEST(Frames, MalformedPayloadsAreProtocolErrors) {
  EXPECT_THROW(decode("not json"), ProtocolError);
  EXPECT_THROW(decode("[1,2]"), ProtocolError);
  EXPECT_THROW(decode(R"({"type":"NOPE"})"), ProtocolError);
  EXPECT_THROW(decode(R"({"type":"COMMAND","command":{"kind":"PAUSE"}})"), ProtocolError);
  EXPECT_THROW(decode(R"({"type":"SNAPSHOT","segment":1})"), ProtocolError);
}

TEST(Frames, HelloAckRejectRoundTrip) {
  RunConfig c;
  c.name = "demo";
  c.boundary.north = 100;
  const auto h = std::get<Hello>(decode(encode(make_hello(4, c))));
  EXPECT_EQ(h.segment, 4u);
  EXPECT_EQ(h.scenario, "demo");
  EXPECT_EQ(h.width, 202u);
  EXPECT_EQ(h.boundary.north, 100.0);
  EXPECT_EQ(std::get<Ack>(decode(encode(Ack{"x"}))).id, "x");
  const auto r = std::get<Reject>(decode(encode(Reject{"y", "out_of_bounds"})));
  EXPECT_EQ(r.reason, "out_of_bounds");
}

TEST(Frames, SnapshotRoundTripIsExact) {
  Field2D f(9, 9);
  std::mt19937 rng(5);
  for (auto& v : f.values()) v = std::uniform_real_distribution<double>(0, 100)(rng);
  Snapshot s;
  s.segment = 2;
  s.sequence = 17;
  s.timestamp = 1.25;
  s.mode = IterationMode::Async;
  s.iterations = {10, 14};
  s.residual = 3.3e-7;
  s.live = true;
  s.phase = ConvergencePhase::Tentative;
  s.boundary = {1, 2, 3, 4};
  s.tolerance = 1e-6;
  s.grid_width = s.grid_height = 9;
  s.tile = downsample(f, 1);
  const auto back = std::get<Snapshot>(decode(encode(s)));
  EXPECT_EQ(back.iterations, s.iterations);
  EXPECT_EQ(back.residual, s.residual);
  EXPECT_FALSE(back.residual_verified);
  EXPECT_TRUE(back.live);
  EXPECT_EQ(back.phase, ConvergencePhase::Tentative);
  EXPECT_EQ(back.tile.values, f.values()) << "doubles must survive the text encoding bit-for-bit";
}

TEST(Frames, SnapshotStaysWithinBudgetForAnyGrid) {
  for (std::size_t side : {3u, 50u, 202u, 600u, 1500u}) {
    Field2D f(side, side);
    std::mt19937 rng(side);
    for (auto& v : f.values()) v = std::uniform_real_distribution<double>(0, 100)(rng) / 3.0;
    Snapshot s;
    s.grid_width = s.grid_height = side;
    const std::size_t budget = 256 * 1024;
    const auto encoded = encode_within_budget(s, f, 1, budget);
    EXPECT_LE(encoded.size(), budget) << side;
    EXPECT_LE(s.tile.width, kMaxTileSide);
    EXPECT_LE(s.tile.height, kMaxTileSide);
    EXPECT_EQ(s.tile.width, (side + s.tile.factor - 1) / s.tile.factor);
    if (side <= 50) EXPECT_EQ(s.tile.factor, 1u);
  }
  Field2D f(300, 300, 1.0);
  Snapshot s;
  encode_within_budget(s, f, 7, 256 * 1024);
  EXPECT_EQ(s.tile.factor, 7u) << "a requested factor is a floor";
}
