#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "vpit/metrics.hpp"
#include "vpit/stream.hpp"

using namespace vpit;
using check::moving_sequence;

namespace {

TrackerFactory echo_factory(const TrackSequence& seq) {
  return [labels = seq.labels] { return std::make_unique<GtEchoTracker>(labels); };
}

StreamTimeline echo_stream(const TrackSequence& seq, const LatencyModel& lat) {
  GtEchoTracker t(seq.labels);
  return simulate_stream(t, seq, lat);
}

}  // namespace

TEST(Iou3d, IdenticalBoxesGiveOne) {
  for (double a : {0.0, 0.3, -2.9, 1.5707963267948966}) {
    const Box3D b{1.5, -2, 0.3, 4.2, 1.9, 1.6, a};
    EXPECT_EQ(iou3d(b, b), 1.0);
  }
}

TEST(Iou3d, DisjointBoxesGiveZero) {
  const Box3D a{0, 0, 0, 2, 2, 2, 0.4};
  EXPECT_EQ(iou3d(a, {10, 0, 0, 2, 2, 2, 0.1}), 0.0);
  EXPECT_EQ(iou3d(a, {0, 0, 5, 2, 2, 2, 0.4}), 0.0);  // stacked vertically
}

TEST(Iou3d, AxisAlignedClosedForm) {
  // Half overlap along x, vertical overlap 1 of 2.
  const Box3D a{0, 0, 0, 2, 2, 2, 0};
  const Box3D b{1, 0, 1, 2, 2, 2, 0};
  const double inter = 1 * 2 * 1;
  EXPECT_NEAR(iou3d(a, b), inter / (16 - inter), 1e-12);
}

TEST(Iou3d, DegenerateBoxThrows) {
  const Box3D ok{0, 0, 0, 1, 1, 1, 0};
  EXPECT_THROW(iou3d(ok, {0, 0, 0, 0, 1, 1, 0}), std::invalid_argument);
  EXPECT_THROW(iou3d({0, 0, 0, 1, 1, -1, 0}, ok), std::invalid_argument);
}

TEST(Iou3d, MatchesMonteCarloOracle) {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 10; ++k) {
    const auto [a, b] = check::random_box_pair(rng);
    EXPECT_NEAR(iou3d(a, b), check::monte_carlo_iou(a, b, 1'000'000, rng), 0.01) << "pair " << k;
  }
}

TEST(Iou3d, SymmetricBoundedAndRigidInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ang(-kPi, kPi), shift(-20, 20);
  for (int k = 0; k < 200; ++k) {
    const auto [a, b] = check::random_box_pair(rng);
    const double v = iou3d(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v, iou3d(b, a), 1e-12);
    const double th = ang(rng), tx = shift(rng), ty = shift(rng), tz = shift(rng);
    auto move = [&](Box3D x) {
      const Vec2 c = rotate({x.x, x.y}, th);
      x.x = c.x + tx;
      x.y = c.y + ty;
      x.z += tz;
      x.alpha += th;
      return x;
    };
    EXPECT_NEAR(iou3d(move(a), move(b)), v, 1e-9);
  }
}

TEST(Ope, PerfectTrackingScoresHundred) {
  const auto seq = moving_sequence(20, 0.5);
  const OpeResult r = ope_metrics(seq.labels, seq.labels);
  EXPECT_DOUBLE_EQ(r.success, 100.0);
  EXPECT_DOUBLE_EQ(r.precision, 100.0);
  EXPECT_EQ(r.ious.size(), 20u);
}

TEST(Ope, ConstantHalfIouGivesAboutFifty) {
  const OpeResult r = ope_from_errors(std::vector<double>(30, 0.5), std::vector<double>(30, 0.0));
  EXPECT_NEAR(r.success, 50.0, 1.0);
}

TEST(Ope, TwoMetersOffGivesAboutZeroPrecision) {
  const OpeResult r = ope_from_errors(std::vector<double>(30, 1.0), std::vector<double>(30, 2.0));
  EXPECT_NEAR(r.precision, 0.0, 1.0);
}

TEST(Ope, HandComputedTrapezoid) {
  // Success curve: 1 up to t = 0.25, then 0.5. Precision curve: 0.5 below 1 m, then 1.
  const OpeResult r = ope_from_errors({1.0, 0.25}, {0.0, 1.0});
  EXPECT_NEAR(r.success, (25 + 0.75 + 74 * 0.5), 1e-9);
  EXPECT_NEAR(r.precision, (49 * 0.5 + 0.75 + 50), 1e-9);
}

TEST(Ope, EmptyOrMisalignedThrows) {
  EXPECT_THROW(ope_metrics({}, {}), std::invalid_argument);
  EXPECT_THROW(ope_metrics({Box3D{}}, {Box3D{}, Box3D{}}), std::invalid_argument);
}

TEST(Stream, HalfPeriodLatencyNeverDrops) {
  const auto seq = moving_sequence(50, 0.4);
  const auto tl = echo_stream(seq, LatencyModel::injected(0.05, 10));
  EXPECT_EQ(tl.dropped, 0u);
  EXPECT_EQ(tl.predictions.size(), 50u);
  EXPECT_NEAR(tl.fps(), 20.0, 1e-6);
}

TEST(Stream, TwoAndAHalfPeriodsDropsSixtyPercent) {
  const auto seq = moving_sequence(101, 0.4);
  const auto tl = echo_stream(seq, LatencyModel::injected(0.25, 10));
  EXPECT_EQ(tl.dropped, check::stream_drop_oracle(101, 0.1, 0.25));
  EXPECT_NEAR(tl.drop_percent(), 60.0, 2.0);
  EXPECT_NEAR(tl.drop_percent(), 100.0 * (1.0 - 0.1 / 0.25), 2.0);
}

TEST(Stream, DropCountMatchesOracleAcrossLatencies) {
  for (double lat : {0.0, 0.03, 0.1, 0.13, 0.2, 0.31, 0.45, 0.7}) {
    for (std::size_t n : {2u, 7u, 33u, 101u}) {
      const auto tl = echo_stream(moving_sequence(n, 0.1), LatencyModel::injected(lat, 10));
      EXPECT_EQ(tl.dropped, check::stream_drop_oracle(n, 0.1, lat)) << lat << " " << n;
      // Completion never precedes the start of processing; inputs strictly increase.
      for (std::size_t j = 1; j < tl.predictions.size(); ++j) {
        EXPECT_GE(tl.predictions[j].done_ns, tl.predictions[j].start_ns);
        EXPECT_GE(tl.predictions[j].start_ns, tl.arrivals[tl.predictions[j].frame]);
        EXPECT_GT(tl.predictions[j].frame, tl.predictions[j - 1].frame);
      }
    }
  }
}

TEST(Stream, SingleFrameSequenceThrows) {
  EXPECT_THROW(echo_stream(moving_sequence(1, 0.1), LatencyModel::injected(0, 10)), std::invalid_argument);
  EXPECT_THROW(echo_stream(moving_sequence(3, 0.1), LatencyModel::injected(-1, 10)), std::invalid_argument);
  EXPECT_THROW(echo_stream(moving_sequence(3, 0.1), LatencyModel::injected(0.1, 0)), std::invalid_argument);
}

TEST(Associate, ZeroLatencyIsIdentity) {
  const auto tl = echo_stream(moving_sequence(12, 0.4), LatencyModel::injected(0.0, 10));
  const auto pr = associate_predictive(tl);
  const auto npr = associate_nonpredictive(tl);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(pr[i], i);
    EXPECT_EQ(npr[i], i);
  }
}

TEST(Associate, OnePeriodLatencyNonPredictiveIsIdentity) {
  const auto tl = echo_stream(moving_sequence(12, 0.4), LatencyModel::injected(0.1, 10));
  EXPECT_EQ(tl.dropped, 0u);
  const auto npr = associate_nonpredictive(tl);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(npr[i], i);
}

TEST(Associate, HandWalkedTimeline) {
  StreamTimeline tl;
  tl.data_rate = 10;
  for (std::int64_t i = 0; i < 5; ++i) tl.arrivals.push_back(i * 100'000'000);
  tl.processed = {true, true, false, false, false};
  tl.predictions.push_back({0, 0, 50'000'000, {}});
  tl.predictions.push_back({1, 100'000'000, 250'000'000, {}});
  const auto pr = associate_predictive(tl);
  const auto npr = associate_nonpredictive(tl);
  EXPECT_EQ(pr[2], 0u);
  EXPECT_EQ(pr[3], 1u);
  EXPECT_EQ(npr[2], 1u);
}

TEST(Associate, EverythingTooSlowFallsBackToInit) {
  const auto tl = echo_stream(moving_sequence(6, 0.4), LatencyModel::injected(100.0, 10));
  for (std::size_t v : associate_predictive(tl)) EXPECT_EQ(v, 0u);
  for (std::size_t v : associate_nonpredictive(tl)) EXPECT_EQ(v, 0u);
}

TEST(Associate, MonotoneAndNonPredictiveDominates) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> lat(0.0, 0.4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 40;
    LatencyModel m = LatencyModel::injected(0, 10);
    m.injected_seconds.clear();
    for (std::size_t i = 0; i < n; ++i) m.injected_seconds.push_back(lat(rng));
    const auto tl = echo_stream(moving_sequence(n, 0.3), m);
    const auto pr = associate_predictive(tl);
    const auto npr = associate_nonpredictive(tl);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GE(npr[i], pr[i]);
      if (i > 0) {
        EXPECT_GE(pr[i], pr[i - 1]);
        EXPECT_GE(npr[i], npr[i - 1]);
      }
    }
  }
}

TEST(Evaluate, ZeroLatencyNonPredictiveEqualsOffline) {
  const auto seq = moving_sequence(40, 0.7);
  const auto off = evaluate(echo_factory(seq), {seq}, EvalMode::kOffline, LatencyModel::injected(0, 10));
  const auto npr = evaluate(echo_factory(seq), {seq}, EvalMode::kNonPredictive, LatencyModel::injected(0, 10));
  EXPECT_EQ(npr.ope.success, off.ope.success);
  EXPECT_EQ(npr.ope.precision, off.ope.precision);
  EXPECT_EQ(npr.ope.ious, off.ope.ious);
  EXPECT_EQ(npr.drop_percent, 0.0);
}

TEST(Evaluate, LatencyOrdersTheModes) {
  const auto seq = moving_sequence(101, 0.5);
  const auto lat = LatencyModel::injected(0.25, 10);
  const auto off = evaluate(echo_factory(seq), {seq}, EvalMode::kOffline, lat);
  const auto npr = evaluate(echo_factory(seq), {seq}, EvalMode::kNonPredictive, lat);
  const auto pr = evaluate(echo_factory(seq), {seq}, EvalMode::kPredictive, lat);
  EXPECT_LT(pr.ope.success, npr.ope.success);
  EXPECT_LT(npr.ope.success, off.ope.success);
  EXPECT_NEAR(npr.drop_percent, 60.0, 2.0);
  EXPECT_EQ(npr.drop_percent, echo_stream(seq, lat).drop_percent());
  EXPECT_NEAR(npr.fps, 4.0, 1e-6);
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  std::vector<TrackSequence> seqs;
  for (int k = 0; k < 6; ++k) seqs.push_back(moving_sequence(30 + 7 * k, 0.2 * (k + 1)));
  // Labels of the longest sequence; the shorter ones share its prefix.
  TrackerFactory f = [&seqs] {
    return std::make_unique<GtEchoTracker>(seqs.back().labels);
  };
  const auto lat = LatencyModel::injected(0.17, 10);
  const auto one = evaluate(f, seqs, EvalMode::kPredictive, lat, 1);
  const auto four = evaluate(f, seqs, EvalMode::kPredictive, lat, 4);
  EXPECT_EQ(one.ope.ious, four.ope.ious);
  EXPECT_EQ(one.drop_percent, four.drop_percent);
  ASSERT_EQ(four.sequences.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(four.sequences[k].association, one.sequences[k].association);
}

TEST(Evaluate, FailingSequenceIsRecordedAndSkipped) {
  auto good = moving_sequence(20, 0.3);
  auto bad = moving_sequence(20, 0.3);
  bad.name = "broken";
  bad.clouds = std::make_shared<const std::vector<PointCloud>>(1);  // fewer clouds than labels
  const auto sum = evaluate(echo_factory(good), {good, bad}, EvalMode::kOffline, LatencyModel::injected(0, 10));
  EXPECT_TRUE(sum.sequences[0].error.empty());
  EXPECT_FALSE(sum.sequences[1].error.empty());
  EXPECT_EQ(sum.sequences[1].name, "broken");
  EXPECT_EQ(sum.ope.ious.size(), 20u);
  EXPECT_THROW(evaluate(echo_factory(good), {bad}, EvalMode::kOffline, LatencyModel::injected(0, 10)),
               std::runtime_error);
}
