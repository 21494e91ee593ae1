#include "tenet/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "tenet/errors.hpp"

namespace tenet::tracker {

namespace {

using MeasurementMatrix = Eigen::Matrix<double, 4, 7>;

StateMatrix transition() {
  StateMatrix f = StateMatrix::Identity();
  f(0, 4) = 1.0;
  f(1, 5) = 1.0;
  f(2, 6) = 1.0;
  return f;
}

MeasurementMatrix observation_model() {
  MeasurementMatrix h = MeasurementMatrix::Zero();
  h.leftCols<4>().setIdentity();
  return h;
}

StateMatrix process_noise(const KalmanNoise& n) {
  StateVector d;
  d << n.process_position, n.process_position, n.process_position, n.process_position,
      n.process_velocity, n.process_velocity, n.process_area_velocity;
  return d.asDiagonal();
}

Eigen::Matrix4d measurement_noise(const KalmanNoise& n) {
  Eigen::Vector4d d(n.measurement_position, n.measurement_position, n.measurement_shape,
                    n.measurement_shape);
  return d.asDiagonal();
}

void require_finite(const KalmanTrackState& s, const char* where) {
  if (!s.mean.allFinite() || !s.covariance.allFinite()) {
    throw NumericError(std::string("non-finite Kalman state in ") + where);
  }
}

}  // namespace

Measurement to_measurement(const Box& b) {
  return Measurement(b.cx(), b.cy(), b.w() * b.h(), b.w() / b.h());
}

Box from_measurement(const Measurement& z) {
  if (!(z(2) > 0.0) || !(z(3) > 0.0)) {
    throw NumericError("Kalman state has non-positive area or aspect ratio");
  }
  const double w = std::sqrt(z(2) * z(3));
  return Box(z(0), z(1), w, z(2) / w);
}

Box KalmanTrackState::box() const { return from_measurement(measurement()); }

KalmanTrackState kf_init(const Box& observation, const KalmanNoise& noise) {
  KalmanTrackState s;
  s.mean.setZero();
  s.mean.head<4>() = to_measurement(observation);
  StateVector p;
  p << noise.initial_position, noise.initial_position, noise.initial_position,
      noise.initial_position, noise.initial_velocity, noise.initial_velocity,
      noise.initial_velocity;
  s.covariance = p.asDiagonal();
  return s;
}

KalmanTrackState kf_predict(const KalmanTrackState& state, const KalmanNoise& noise) {
  require_finite(state, "predict");
  KalmanTrackState next = state;
  // Area may not shrink through zero.
  if (next.mean(2) + next.mean(6) <= 0.0) next.mean(6) = 0.0;
  const StateMatrix f = transition();
  next.mean = f * next.mean;
  next.covariance = f * state.covariance * f.transpose() + process_noise(noise);
  next.covariance = 0.5 * (next.covariance + next.covariance.transpose());
  return next;
}

KalmanTrackState kf_update(const KalmanTrackState& state, const Box& observation,
                           const KalmanNoise& noise) {
  require_finite(state, "update");
  const MeasurementMatrix h = observation_model();
  const Eigen::Matrix4d innovation_cov =
      h * state.covariance * h.transpose() + measurement_noise(noise);
  Eigen::LDLT<Eigen::Matrix4d> ldlt(innovation_cov);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= std::numeric_limits<double>::min()) {
    throw NumericError("singular innovation covariance");
  }
  // K = P H^T S^-1, computed as (S^-1 H P)^T with S symmetric.
  const Eigen::Matrix<double, 7, 4> gain =
      ldlt.solve(h * state.covariance).transpose();
  const Measurement residual = to_measurement(observation) - h * state.mean;

  KalmanTrackState next;
  next.mean = state.mean + gain * residual;
  next.covariance = (StateMatrix::Identity() - gain * h) * state.covariance;
  next.covariance = 0.5 * (next.covariance + next.covariance.transpose());
  require_finite(next, "update");
  return next;
}

namespace {

// Hungarian algorithm with potentials; requires rows <= cols. Returns the
// column assigned to every row and writes the optimal total to `total`.
std::vector<int> hungarian(const std::vector<std::vector<double>>& a, double& total) {
  const int n = static_cast<int>(a.size());
  const int m = n == 0 ? 0 : static_cast<int>(a[0].size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  total = 0.0;
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  for (int i = 0; i < n; ++i) total += a[i][row_to_col[i]];
  return row_to_col;
}

// Optimal total cost of assigning min(|rows|, |cols|) pairs within the
// given sub-matrix.
double optimal_cost(const Eigen::MatrixXd& cost, const std::vector<int>& rows,
                    const std::vector<int>& cols) {
  if (rows.empty() || cols.empty()) return 0.0;
  const bool transpose = rows.size() > cols.size();
  const auto& outer = transpose ? cols : rows;
  const auto& inner = transpose ? rows : cols;
  std::vector<std::vector<double>> sub(outer.size(), std::vector<double>(inner.size()));
  for (std::size_t i = 0; i < outer.size(); ++i) {
    for (std::size_t j = 0; j < inner.size(); ++j) {
      sub[i][j] = transpose ? cost(inner[j], outer[i]) : cost(outer[i], inner[j]);
    }
  }
  double total = 0.0;
  hungarian(sub, total);
  return total;
}

}  // namespace

std::vector<Pair> assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n == 0 || m == 0) return {};
  if (!cost.allFinite()) throw NumericError("assignment cost matrix has non-finite entries");

  std::vector<int> all_rows(n), all_cols(m);
  for (int i = 0; i < n; ++i) all_rows[i] = i;
  for (int j = 0; j < m; ++j) all_cols[j] = j;
  const double optimum = optimal_cost(cost, all_rows, all_cols);
  const double tol = 1e-9 * std::max(1.0, std::abs(optimum));
  const int needed_total = std::min(n, m);

  // Fix rows in order, trying columns in ascending order before leaving the
  // row unassigned, and keep the first choice that can still reach the
  // optimum. This yields the lexicographically smallest optimal pair list.
  std::vector<Pair> result;
  std::vector<int> free_cols = all_cols;
  double spent = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<int> rest_rows;
    for (int r = i + 1; r < n; ++r) rest_rows.push_back(r);
    const int needed = needed_total - static_cast<int>(result.size());
    if (needed == 0) break;

    bool placed = false;
    for (std::size_t k = 0; k < free_cols.size(); ++k) {
      std::vector<int> rest_cols = free_cols;
      rest_cols.erase(rest_cols.begin() + static_cast<std::ptrdiff_t>(k));
      const int reachable = std::min<int>(rest_rows.size(), rest_cols.size());
      if (reachable != needed - 1) continue;
      const double total = spent + cost(i, free_cols[k]) + optimal_cost(cost, rest_rows, rest_cols);
      if (total <= optimum + tol) {
        spent += cost(i, free_cols[k]);
        result.emplace_back(i, free_cols[k]);
        free_cols = std::move(rest_cols);
        placed = true;
        break;
      }
    }
    if (!placed) {
      // Leaving the row unassigned must still admit an optimal completion.
      const int reachable = std::min<int>(rest_rows.size(), free_cols.size());
      if (reachable != needed) throw NumericError("assignment refinement failed");
    }
  }
  return result;
}

double direction_inconsistency(const TrackHypothesis& track, const Box& detection) {
  if (track.direction.squaredNorm() == 0.0) return 0.0;
  Eigen::Vector2d to_det(detection.cx() - track.last_observation.cx(),
                         detection.cy() - track.last_observation.cy());
  const double norm = to_det.norm();
  if (norm < 1e-12) return 0.0;
  to_det /= norm;
  const double cosine = std::clamp(track.direction.dot(to_det), -1.0, 1.0);
  return std::acos(cosine) / std::numbers::pi;
}

Association associate(const std::vector<TrackHypothesis>& tracks,
                      const std::vector<io::ScoredBox>& detections, double iou_threshold,
                      double direction_weight) {
  Association out;
  const int n = static_cast<int>(tracks.size());
  const int m = static_cast<int>(detections.size());
  Eigen::MatrixXd overlap(n, m);
  Eigen::MatrixXd cost(n, m);
  std::vector<Box> predicted;
  predicted.reserve(n);
  for (const auto& t : tracks) predicted.push_back(t.state.box());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      overlap(i, j) = iou(predicted[i], detections[j].box);
      cost(i, j) = overlap(i, j) < iou_threshold
                       ? 0.0
                       : -overlap(i, j) +
                             direction_weight * direction_inconsistency(tracks[i], detections[j].box);
    }
  }

  std::vector<char> track_used(n, 0), det_used(m, 0);
  for (const auto& [i, j] : assignment(cost)) {
    if (overlap(i, j) < iou_threshold) continue;
    out.matches.emplace_back(i, j);
    track_used[i] = 1;
    det_used[j] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (!track_used[i]) out.unmatched_tracks.push_back(i);
  }
  for (int j = 0; j < m; ++j) {
    if (!det_used[j]) out.unmatched_detections.push_back(j);
  }
  return out;
}

Tracker::Tracker(TrackerConfig config) : config_(std::move(config)) {
  if (config_.max_age < 0 || config_.min_hits < 0 || config_.velocity_delta < 1) {
    throw ConfigError("invalid tracker configuration");
  }
}

std::vector<ConfirmedBox> Tracker::step(const io::FrameDetections& frame) {
  if (frame.frame_index <= last_frame_) {
    throw OrderingError("frame " + std::to_string(frame.frame_index) +
                        " presented after frame " + std::to_string(last_frame_));
  }
  while (last_frame_ + 1 < frame.frame_index) advance(last_frame_ + 1, {});
  return advance(frame.frame_index, frame.entries);
}

void Tracker::update_track(TrackHypothesis& track, int frame, const io::ScoredBox& det) const {
  const int last_frame = track.observed_frames.back().frame;
  const int gap = frame - last_frame;
  if (gap > 1) {
    // Observation-centric re-update: rewind to the last observation and
    // replay linearly interpolated virtual observations.
    KalmanTrackState s = track.state_at_observation;
    const Box& from = track.last_observation;
    const Box& to = det.box;
    for (int k = 1; k < gap; ++k) {
      const double a = static_cast<double>(k) / gap;
      const Box virtual_obs(from.cx() + a * (to.cx() - from.cx()),
                            from.cy() + a * (to.cy() - from.cy()),
                            from.w() + a * (to.w() - from.w()), from.h() + a * (to.h() - from.h()));
      s = kf_update(kf_predict(s, config_.noise), virtual_obs, config_.noise);
    }
    track.state = kf_update(kf_predict(s, config_.noise), det.box, config_.noise);
  } else {
    track.state = kf_update(track.state, det.box, config_.noise);
  }
  track.state_at_observation = track.state;
  track.hits += 1;
  track.time_since_update = 0;
  track.last_observation = det.box;
  track.observed_frames.push_back({frame, det.box, false, det.score});

  // Direction from the earliest observation within the look-back window.
  track.direction.setZero();
  const io::TrackFrame* previous = nullptr;
  for (const auto& f : track.observed_frames) {
    if (f.frame < frame && f.frame >= frame - config_.velocity_delta) {
      previous = &f;
      break;
    }
  }
  if (previous) {
    Eigen::Vector2d d(det.box.cx() - previous->box.cx(), det.box.cy() - previous->box.cy());
    const double norm = d.norm();
    if (norm > 1e-12) track.direction = d / norm;
  }
}

std::vector<ConfirmedBox> Tracker::advance(int frame,
                                           const std::vector<io::ScoredBox>& detections) {
  for (auto& t : active_) {
    t.state = kf_predict(t.state, config_.noise);
    t.time_since_update += 1;
  }

  const Association assoc =
      associate(active_, detections, config_.iou_threshold, config_.direction_weight);
  for (const auto& [ti, di] : assoc.matches) update_track(active_[ti], frame, detections[di]);

  for (int di : assoc.unmatched_detections) {
    TrackHypothesis t;
    t.track_id = next_id_++;
    t.state = kf_init(detections[di].box, config_.noise);
    t.state_at_observation = t.state;
    t.hits = 1;
    t.time_since_update = 0;
    t.last_observation = detections[di].box;
    t.observed_frames.push_back({frame, detections[di].box, false, detections[di].score});
    active_.push_back(std::move(t));
  }

  std::vector<ConfirmedBox> confirmed;
  for (const auto& t : active_) {
    if (t.time_since_update == 0 && t.hits >= config_.min_hits) {
      confirmed.push_back({t.track_id, t.last_observation, t.state.box(),
                           t.observed_frames.back().score});
    }
  }

  auto retire = std::stable_partition(active_.begin(), active_.end(), [&](const TrackHypothesis& t) {
    return t.time_since_update <= config_.max_age;
  });
  std::move(retire, active_.end(), std::back_inserter(retired_));
  active_.erase(retire, active_.end());
  last_frame_ = frame;
  return confirmed;
}

std::vector<TrackHypothesis> Tracker::all_tracks() const {
  std::vector<TrackHypothesis> all = retired_;
  all.insert(all.end(), active_.begin(), active_.end());
  std::sort(all.begin(), all.end(),
            [](const TrackHypothesis& a, const TrackHypothesis& b) { return a.track_id < b.track_id; });
  return all;
}

std::vector<RawTrack> run(std::vector<io::FrameDetections> frames, const TrackerConfig& config) {
  std::stable_sort(frames.begin(), frames.end(), [](const auto& a, const auto& b) {
    return a.frame_index < b.frame_index;
  });
  Tracker tracker(config);
  for (const auto& f : frames) tracker.step(f);
  std::vector<RawTrack> out;
  for (auto& t : tracker.all_tracks()) out.push_back({t.track_id, std::move(t.observed_frames)});
  return out;
}

}  // namespace tenet::tracker
