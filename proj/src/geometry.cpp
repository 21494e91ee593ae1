#include "tenet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tenet/errors.hpp"

namespace tenet {

Box::Box(double cx, double cy, double w, double h) : cx_(cx), cy_(cy), w_(w), h_(h) {
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) || !std::isfinite(h)) {
    throw InvalidBoxError("box has non-finite component");
  }
  if (!(w > 0.0) || !(h > 0.0)) {
    std::ostringstream os;
    os << "box extent must be positive, got w=" << w << " h=" << h;
    throw InvalidBoxError(os.str());
  }
}

Box Box::from_corners(const Corners& c) {
  return Box((c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1);
}

Corners Box::corners() const {
  return {cx_ - w_ / 2.0, cy_ - h_ / 2.0, cx_ + w_ / 2.0, cy_ + h_ / 2.0};
}

void BoxSequence::check_ordered() const {
  for (std::size_t i = 1; i < boxes.size(); ++i) {
    if (boxes[i].frame <= boxes[i - 1].frame) {
      throw OrderingError("box sequence for video '" + video_id +
                          "' has non-increasing frame " + std::to_string(boxes[i].frame));
    }
  }
}

void BoxSequence::check_complete(int num_frames) const {
  if (static_cast<int>(boxes.size()) != num_frames) {
    throw CoverageError("video '" + video_id + "' has " + std::to_string(boxes.size()) +
                        " boxes, expected " + std::to_string(num_frames));
  }
  for (int i = 0; i < num_frames; ++i) {
    if (boxes[i].frame != i + 1) {
      throw CoverageError("video '" + video_id + "' is missing frame " + std::to_string(i + 1));
    }
  }
}

namespace {

double intersection_area(const Corners& a, const Corners& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a.corners(), b.corners());
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

double giou(const Box& a, const Box& b) {
  const Corners ca = a.corners();
  const Corners cb = b.corners();
  const double inter = intersection_area(ca, cb);
  const double uni = a.area() + b.area() - inter;
  const double enclose = (std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1)) *
                         (std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1));
  return inter / uni - (enclose - uni) / enclose;
}

double box_miou(const BoxSequence& a, const BoxSequence& b) {
  if (a.video_id != b.video_id) {
    throw AlignmentError("video mismatch: '" + a.video_id + "' vs '" + b.video_id + "'");
  }
  if (a.boxes.size() != b.boxes.size() || a.boxes.empty()) {
    throw AlignmentError("frame coverage mismatch for video '" + a.video_id + "': " +
                         std::to_string(a.boxes.size()) + " vs " +
                         std::to_string(b.boxes.size()) + " frames");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    if (a.boxes[i].frame != b.boxes[i].frame) {
      throw AlignmentError("frame coverage mismatch for video '" + a.video_id + "' at frame " +
                           std::to_string(a.boxes[i].frame));
    }
    sum += iou(a.boxes[i].box, b.boxes[i].box);
  }
  return sum / static_cast<double>(a.boxes.size());
}

Box clamp_to_frame(const Box& b, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) {
    throw ValidationError("frame size must be positive");
  }
  const Corners c = b.corners();
  const Corners clipped{std::clamp(c.x1, 0.0, width), std::clamp(c.y1, 0.0, height),
                        std::clamp(c.x2, 0.0, width), std::clamp(c.y2, 0.0, height)};
  if (clipped.x2 - clipped.x1 <= 0.0 || clipped.y2 - clipped.y1 <= 0.0) {
    throw DegenerateBoxError("box lies outside the frame");
  }
  if (clipped.x1 == c.x1 && clipped.y1 == c.y1 && clipped.x2 == c.x2 && clipped.y2 == c.y2) {
    return b;
  }
  return Box::from_corners(clipped);
}

}  // namespace tenet
