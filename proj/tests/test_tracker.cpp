#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "tenet/errors.hpp"
#include "tenet/tracker.hpp"

using namespace tenet;
using namespace tenet::tracker;

namespace {

io::FrameDetections frame(int f, std::vector<Box> boxes) {
  io::FrameDetections d{"v", f, io::DetectorSource::pretrained, {}};
  for (const auto& b : boxes) d.entries.push_back({b, 0.9});
  return d;
}

double brute_cost(const Eigen::MatrixXd& c) {
  const bool t = c.rows() > c.cols();
  const Eigen::MatrixXd m = t ? Eigen::MatrixXd(c.transpose()) : c;
  std::vector<int> perm(m.cols());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double s = 0;
    for (int r = 0; r < m.rows(); ++r) s += m(r, perm[r]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(Kalman, PredictPropagatesVelocity) {
  auto s = kf_init(Box(10, 10, 4, 4));
  auto p = kf_predict(s);
  EXPECT_DOUBLE_EQ(p.mean(0), 10);
  EXPECT_DOUBLE_EQ(p.mean(1), 10);
  s.mean(4) = 3;
  for (int k = 1; k <= 4; ++k) {
    s = kf_predict(s);
    EXPECT_NEAR(s.mean(0), 10 + 3 * k, 1e-12);
  }
}

TEST(Kalman, PredictGrowsAndUpdateShrinksTrace) {
  auto s = kf_init(Box(10, 10, 4, 4));
  const auto p = kf_predict(s);
  EXPECT_GE(p.covariance.trace(), s.covariance.trace());
  const auto u = kf_update(p, Box(10.5, 10, 4, 4));
  EXPECT_LE(u.covariance.trace(), p.covariance.trace());
}

TEST(Kalman, UpdateAtPredictionKeepsMean) {
  const auto p = kf_predict(kf_init(Box(10, 10, 4, 4)));
  const auto u = kf_update(p, from_measurement(p.measurement()));
  EXPECT_LT((u.mean - p.mean).norm(), 1e-9);
}

TEST(Kalman, TinyMeasurementNoiseFollowsObservation) {
  KalmanNoise n;
  n.measurement_position = 1e-12;
  n.measurement_shape = 1e-12;
  const auto p = kf_predict(kf_init(Box(10, 10, 4, 4), n), n);
  const Box obs(13, 8, 5, 3);
  const auto u = kf_update(p, obs, n);
  EXPECT_LT((u.measurement() - to_measurement(obs)).norm(), 1e-6);
}

TEST(Kalman, CovarianceStaysSymmetricPositive) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> jitter(0, 0.5);
  auto s = kf_init(Box(50, 50, 10, 10));
  for (int t = 0; t < 1000; ++t) {
    s = kf_predict(s);
    if (t % 3 != 2) s = kf_update(s, Box(50 + 0.1 * t + jitter(rng), 50 + jitter(rng), 10, 10));
    EXPECT_LT((s.covariance - s.covariance.transpose()).norm(), 1e-9);
    Eigen::LDLT<StateMatrix> ldlt(s.covariance);
    EXPECT_TRUE((ldlt.vectorD().array() > 0).all());
  }
}

TEST(Kalman, NoiseFreeLinearMotionConverges) {
  auto s = kf_init(Box(20, 30, 8, 4));
  for (int t = 1; t <= 40; ++t) {
    s = kf_predict(s);
    s = kf_update(s, Box(20 + 2 * t, 30 - t, 8, 4));
  }
  const Box next = kf_predict(s).box();
  EXPECT_NEAR(next.cx(), 20 + 2 * 41, 1e-3);
  EXPECT_NEAR(next.cy(), 30 - 41, 1e-3);
}

TEST(Assignment, Examples) {
  Eigen::MatrixXd m(3, 3);
  m << 0, 5, 5, 5, 0, 5, 5, 5, 0;
  EXPECT_EQ(assignment(m), (std::vector<Pair>{{0, 0}, {1, 1}, {2, 2}}));
  EXPECT_EQ(assignment(Eigen::MatrixXd::Constant(1, 1, 3.0)), (std::vector<Pair>{{0, 0}}));
  EXPECT_TRUE(assignment(Eigen::MatrixXd(0, 3)).empty());
}

TEST(Assignment, TiesResolvedLexicographically) {
  EXPECT_EQ(assignment(Eigen::MatrixXd::Zero(3, 3)), (std::vector<Pair>{{0, 0}, {1, 1}, {2, 2}}));
  EXPECT_EQ(assignment(Eigen::MatrixXd::Zero(2, 4)), (std::vector<Pair>{{0, 0}, {1, 1}}));
  EXPECT_EQ(assignment(Eigen::MatrixXd::Zero(4, 2)), (std::vector<Pair>{{0, 0}, {1, 1}}));
}

TEST(Assignment, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> v(0, 9);
  for (int trial = 0; trial < 200; ++trial) {
    const int r = 1 + trial % 5, c = 1 + (trial / 5) % 5;
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) m(i, j) = v(rng);
    }
    const auto pairs = assignment(m);
    ASSERT_EQ(pairs.size(), static_cast<std::size_t>(std::min(r, c)));
    double cost = 0;
    std::vector<int> used_r, used_c;
    for (auto [a, b] : pairs) {
      cost += m(a, b);
      used_r.push_back(a);
      used_c.push_back(b);
    }
    std::sort(used_c.begin(), used_c.end());
    EXPECT_EQ(std::adjacent_find(used_c.begin(), used_c.end()), used_c.end());
    EXPECT_TRUE(std::is_sorted(used_r.begin(), used_r.end()));
    EXPECT_EQ(cost, brute_cost(m));
  }
}

TEST(Associate, ThresholdDecidesMatch) {
  TrackHypothesis t;
  t.state = kf_init(Box(10, 10, 10, 10));
  t.last_observation = Box(10, 10, 10, 10);
  auto a = associate({t}, {{Box(10.5, 10, 10, 10), 0.9}}, 0.3);
  EXPECT_EQ(a.matches, (std::vector<Pair>{{0, 0}}));
  a = associate({t}, {{Box(18.5, 10, 10, 10), 0.9}}, 0.3);  // IoU ~0.08
  EXPECT_TRUE(a.matches.empty());
  EXPECT_EQ(a.unmatched_tracks, std::vector<int>{0});
  EXPECT_EQ(a.unmatched_detections, std::vector<int>{0});
}

TEST(Associate, CrossingConfigurationMinimizesCost) {
  // Two tracks moving towards each other; detections near the crossing.
  std::vector<TrackHypothesis> tracks(2);
  tracks[0].state = kf_init(Box(48, 50, 10, 10));
  tracks[0].last_observation = Box(48, 50, 10, 10);
  tracks[0].direction = Eigen::Vector2d(1, 0);
  tracks[1].state = kf_init(Box(52, 50, 10, 10));
  tracks[1].last_observation = Box(52, 50, 10, 10);
  tracks[1].direction = Eigen::Vector2d(-1, 0);
  const std::vector<io::ScoredBox> dets{{Box(51, 50, 10, 10), 0.9}, {Box(49, 50, 10, 10), 0.9}};
  const double lambda = 0.2;
  auto cost = [&](int t, int d) {
    return -iou(tracks[t].state.box(), dets[d].box) + lambda * direction_inconsistency(tracks[t], dets[d].box);
  };
  const double straight = cost(0, 0) + cost(1, 1);
  const double crossed = cost(0, 1) + cost(1, 0);
  const auto a = associate(tracks, dets, 0.3, lambda);
  ASSERT_EQ(a.matches.size(), 2u);
  const bool got_straight = a.matches[0] == Pair{0, 0};
  EXPECT_EQ(got_straight, straight <= crossed);
  EXPECT_NE(straight, crossed);
}

TEST(DirectionInconsistency, RangeAndUndefinedDirection) {
  TrackHypothesis t;
  t.last_observation = Box(0, 0, 2, 2);
  EXPECT_EQ(direction_inconsistency(t, Box(5, 0, 2, 2)), 0.0);
  t.direction = Eigen::Vector2d(1, 0);
  EXPECT_NEAR(direction_inconsistency(t, Box(5, 0, 2, 2)), 0.0, 1e-12);
  EXPECT_NEAR(direction_inconsistency(t, Box(-5, 0, 2, 2)), 1.0, 1e-12);
  EXPECT_NEAR(direction_inconsistency(t, Box(0, 5, 2, 2)), 0.5, 1e-12);
}

TEST(Tracker, FirstFrameSpawnsOneTrackPerDetection) {
  Tracker tr;
  const auto out = tr.step(frame(1, {Box(10, 10, 4, 4), Box(50, 50, 4, 4), Box(90, 20, 4, 4)}));
  EXPECT_EQ(out.size(), 3u);
  EXPECT_EQ(tr.active().size(), 3u);
}

TEST(Tracker, EmptyFrameAgesTracks) {
  Tracker tr;
  tr.step(frame(1, {Box(10, 10, 4, 4), Box(50, 50, 4, 4)}));
  const auto out = tr.step(frame(2, {}));
  EXPECT_TRUE(out.empty());
  for (const auto& t : tr.active()) EXPECT_EQ(t.time_since_update, 1);
}

TEST(Tracker, RejectsNonIncreasingFrames) {
  Tracker tr;
  tr.step(frame(3, {Box(10, 10, 4, 4)}));
  EXPECT_THROW(tr.step(frame(3, {})), OrderingError);
  EXPECT_THROW(tr.step(frame(2, {})), OrderingError);
}

TEST(Tracker, KeepsIdentityAcrossShortGap) {
  std::vector<io::FrameDetections> frames;
  for (int f = 1; f <= 12; ++f) {
    if (f == 6 || f == 7) {
      frames.push_back(frame(f, {}));
    } else {
      frames.push_back(frame(f, {Box(20 + 3 * f, 40, 12, 12)}));
    }
  }
  const auto tracks = run(frames);
  ASSERT_EQ(tracks.size(), 1u);
  EXPECT_EQ(tracks[0].observed_frames.size(), 10u);
}

TEST(Tracker, NoiseFreeSingleObjectGivesOneFullTrack) {
  std::vector<io::FrameDetections> frames;
  for (int f = 1; f <= 20; ++f) frames.push_back(frame(f, {Box(30 + 2 * f, 60 - f, 16, 10)}));
  const auto tracks = run(frames);
  ASSERT_EQ(tracks.size(), 1u);
  ASSERT_EQ(tracks[0].observed_frames.size(), 20u);
  for (int f = 1; f <= 20; ++f) EXPECT_EQ(tracks[0].observed_frames[f - 1].frame, f);
}

TEST(Tracker, TwoSeparatedObjectsHaveNoIdentitySwitch) {
  std::vector<io::FrameDetections> frames;
  for (int f = 1; f <= 20; ++f) {
    // Alternate listing order so index order carries no identity.
    std::vector<Box> b{Box(20 + 2 * f, 30, 10, 10), Box(150 - 2 * f, 120, 10, 10)};
    if (f % 2) std::swap(b[0], b[1]);
    frames.push_back(frame(f, b));
  }
  const auto tracks = run(frames);
  ASSERT_EQ(tracks.size(), 2u);
  for (const auto& t : tracks) {
    ASSERT_EQ(t.observed_frames.size(), 20u);
    const double y = t.observed_frames.front().box.cy();
    for (const auto& f : t.observed_frames) EXPECT_EQ(f.box.cy(), y);
  }
}

TEST(Tracker, NoDetectionsNoTracks) {
  std::vector<io::FrameDetections> frames;
  for (int f = 1; f <= 5; ++f) frames.push_back(frame(f, {}));
  EXPECT_TRUE(run(frames).empty());
}

TEST(Tracker, EachDetectionConsumedAtMostOnce) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> pos(10, 90), size(5, 20);
  std::vector<io::FrameDetections> frames;
  for (int f = 1; f <= 30; ++f) {
    std::vector<Box> b;
    for (int k = 0; k < 6; ++k) b.emplace_back(pos(rng), pos(rng), size(rng), size(rng));
    frames.push_back(frame(f, b));
  }
  std::map<std::tuple<int, double, double>, int> uses;
  for (const auto& t : run(frames)) {
    for (const auto& o : t.observed_frames) ++uses[{o.frame, o.box.cx(), o.box.cy()}];
  }
  EXPECT_FALSE(uses.empty());
  for (const auto& [k, n] : uses) EXPECT_EQ(n, 1);
}
