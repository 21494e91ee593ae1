#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "tenet/geometry.hpp"
#include "tenet/io.hpp"

namespace tenet::tracker {

using StateVector = Eigen::Matrix<double, 7, 1>;
using StateMatrix = Eigen::Matrix<double, 7, 7>;
using Measurement = Eigen::Matrix<double, 4, 1>;

// State [cx, cy, s, r, vcx, vcy, vs]; s is area, r is aspect ratio w/h.
struct KalmanTrackState {
  StateVector mean = StateVector::Zero();
  StateMatrix covariance = StateMatrix::Identity();

  Box box() const;
  Measurement measurement() const { return mean.head<4>(); }
};

// Diagonal noise model. Defaults are the usual SORT values.
struct KalmanNoise {
  double process_position = 1.0;    // cx, cy, s, r
  double process_velocity = 1e-2;   // vcx, vcy
  double process_area_velocity = 1e-4;
  double measurement_position = 1.0;  // cx, cy
  double measurement_shape = 10.0;    // s, r
  double initial_position = 10.0;
  double initial_velocity = 1e4;
};

Measurement to_measurement(const Box& b);
Box from_measurement(const Measurement& z);

KalmanTrackState kf_init(const Box& observation, const KalmanNoise& noise = {});
KalmanTrackState kf_predict(const KalmanTrackState& state, const KalmanNoise& noise = {});
KalmanTrackState kf_update(const KalmanTrackState& state, const Box& observation,
                           const KalmanNoise& noise = {});

using Pair = std::pair<int, int>;

// Minimum-cost one-to-one assignment of min(rows, cols) pairs, returned
// sorted by row. Among optimal assignments the lexicographically smallest
// (row, col) pair list is returned.
std::vector<Pair> assignment(const Eigen::MatrixXd& cost);

struct TrackerConfig {
  double iou_threshold = 0.3;
  int max_age = 30;
  int min_hits = 1;
  double direction_weight = 0.2;
  int velocity_delta = 3;  // frames back used for the motion direction
  KalmanNoise noise;
};

struct TrackHypothesis {
  int track_id = 0;
  KalmanTrackState state;
  KalmanTrackState state_at_observation;  // posterior at the last update
  int hits = 0;
  int time_since_update = 0;
  Box last_observation{0.0, 0.0, 1.0, 1.0};
  std::vector<io::TrackFrame> observed_frames;
  // Unit motion direction of the last observations, (0,0) when unknown.
  Eigen::Vector2d direction = Eigen::Vector2d::Zero();
};

struct Association {
  std::vector<Pair> matches;  // (track index, detection index)
  std::vector<int> unmatched_tracks;
  std::vector<int> unmatched_detections;
};

// Angle between the track's motion direction and the direction from its
// last observation to `detection`, scaled to [0,1]. 0 when either
// direction is undefined.
double direction_inconsistency(const TrackHypothesis& track, const Box& detection);

// Cost is -IoU(predicted, detection) + weight * direction inconsistency;
// pairs below the IoU threshold carry a neutral cost and are dropped after
// assignment.
Association associate(const std::vector<TrackHypothesis>& tracks,
                      const std::vector<io::ScoredBox>& detections, double iou_threshold,
                      double direction_weight = 0.2);

struct ConfirmedBox {
  int track_id;
  Box observation;
  Box filtered;
  double score;
};

// Online tracker for one video. Frames must arrive in strictly increasing
// order; skipped frame indices are treated as frames without detections.
class Tracker {
public:
  explicit Tracker(TrackerConfig config = {});

  std::vector<ConfirmedBox> step(const io::FrameDetections& frame);

  const std::vector<TrackHypothesis>& active() const { return active_; }
  // Active and retired tracks ordered by track id.
  std::vector<TrackHypothesis> all_tracks() const;
  int last_frame() const { return last_frame_; }

private:
  std::vector<ConfirmedBox> advance(int frame, const std::vector<io::ScoredBox>& detections);
  void update_track(TrackHypothesis& track, int frame, const io::ScoredBox& det) const;

  TrackerConfig config_;
  std::vector<TrackHypothesis> active_;
  std::vector<TrackHypothesis> retired_;
  int next_id_ = 1;
  int last_frame_ = 0;
};

struct RawTrack {
  int track_id;
  std::vector<io::TrackFrame> observed_frames;  // observed detection boxes
};

// Runs the tracker over one video's frames (any order of input list is
// sorted by frame first; duplicate frame indices are an OrderingError).
std::vector<RawTrack> run(std::vector<io::FrameDetections> frames, const TrackerConfig& config = {});

}  // namespace tenet::tracker
