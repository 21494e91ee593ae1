#pragma once

#include <string>
#include <vector>

namespace tenet {

struct Corners {
  double x1, y1, x2, y2;
};

// Axis-aligned box in center-size form. Construction enforces finite
// components and strictly positive extent.
class Box {
public:
  Box(double cx, double cy, double w, double h);

  static Box from_corners(const Corners& c);

  double cx() const { return cx_; }
  double cy() const { return cy_; }
  double w() const { return w_; }
  double h() const { return h_; }
  double area() const { return w_ * h_; }
  Corners corners() const;

  friend bool operator==(const Box&, const Box&) = default;

private:
  double cx_, cy_, w_, h_;
};

struct FramedBox {
  int frame;
  Box box;

  friend bool operator==(const FramedBox&, const FramedBox&) = default;
};

// Per-frame box track of one video. Frames are 1-based.
struct BoxSequence {
  std::string video_id;
  std::vector<FramedBox> boxes;

  // Throws OrderingError unless frame indices are strictly increasing.
  void check_ordered() const;
  // Throws CoverageError unless frames are exactly 1..num_frames.
  void check_complete(int num_frames) const;

  friend bool operator==(const BoxSequence&, const BoxSequence&) = default;
};

double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);

// Mean per-frame IoU. Both sequences must belong to the same video and
// cover the same frames, otherwise AlignmentError.
double box_miou(const BoxSequence& a, const BoxSequence& b);

// Clip to [0,width]x[0,height]. Throws DegenerateBoxError when nothing
// of the box remains inside the frame.
Box clamp_to_frame(const Box& b, double width, double height);

}  // namespace tenet
