#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tenet/errors.hpp"
#include "tenet/geometry.hpp"

using namespace tenet;

namespace {

// Pixel-count IoU for boxes with integer corners.
double raster_iou(const Box& a, const Box& b) {
  const auto ca = a.corners(), cb = b.corners();
  int inter = 0, uni = 0;
  for (int y = -50; y < 50; ++y) {
    for (int x = -50; x < 50; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const bool ia = px > ca.x1 && px < ca.x2 && py > ca.y1 && py < ca.y2;
      const bool ib = px > cb.x1 && px < cb.x2 && py > cb.y1 && py < cb.y2;
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return static_cast<double>(inter) / uni;
}

BoxSequence seq(std::vector<Box> boxes) {
  BoxSequence s{"v", {}};
  for (std::size_t i = 0; i < boxes.size(); ++i) s.boxes.push_back({static_cast<int>(i) + 1, boxes[i]});
  return s;
}

}  // namespace

TEST(Box, RejectsNonPositiveOrNonFinite) {
  EXPECT_THROW(Box(0, 0, 0, 1), InvalidBoxError);
  EXPECT_THROW(Box(0, 0, 1, -1), InvalidBoxError);
  EXPECT_THROW(Box(NAN, 0, 1, 1), InvalidBoxError);
  EXPECT_THROW(Box(0, INFINITY, 1, 1), InvalidBoxError);
}

TEST(Box, CornerConversionRoundTrips) {
  const Box b(3, 4, 2, 6);
  const auto c = b.corners();
  EXPECT_DOUBLE_EQ(c.x1, 2);
  EXPECT_DOUBLE_EQ(c.y2, 7);
  EXPECT_EQ(Box::from_corners(c), b);
}

TEST(Iou, Examples) {
  const Box b(1, 1, 2, 2);
  EXPECT_DOUBLE_EQ(iou(b, b), 1.0);
  EXPECT_DOUBLE_EQ(iou(b, Box(10, 10, 2, 2)), 0.0);
  EXPECT_NEAR(iou(b, Box(2, 1, 2, 2)), 1.0 / 3.0, 1e-15);
}

TEST(Iou, MatchesPixelRasterOnIntegerBoxes) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> pos(-20, 20), size(1, 15);
  for (int i = 0; i < 200; ++i) {
    const double ax = pos(rng), ay = pos(rng), bx = pos(rng) / 2, by = pos(rng) / 2;
    const Box p = Box::from_corners({ax, ay, ax + size(rng), ay + size(rng)});
    const Box q = Box::from_corners({bx, by, bx + size(rng), by + size(rng)});
    if (raster_iou(p, q) == 0.0) {
      EXPECT_EQ(iou(p, q), 0.0);
    } else {
      EXPECT_NEAR(iou(p, q), raster_iou(p, q), 1e-12);
    }
  }
}

TEST(Iou, SymmetricBoundedAndAffineInvariant) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> pos(-5, 5), size(0.1, 4), scale(0.1, 10);
  for (int i = 0; i < 500; ++i) {
    const Box a(pos(rng), pos(rng), size(rng), size(rng));
    const Box b(pos(rng), pos(rng), size(rng), size(rng));
    const double v = iou(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    const double s = scale(rng), tx = pos(rng), ty = pos(rng);
    auto map = [&](const Box& x) { return Box(s * x.cx() + tx, s * x.cy() + ty, s * x.w(), s * x.h()); };
    EXPECT_NEAR(iou(map(a), map(b)), v, 1e-12);
    EXPECT_LE(giou(a, b), v + 1e-15);
    EXPECT_GE(giou(a, b), -1.0);
  }
}

TEST(Giou, Examples) {
  const Box b(1, 1, 2, 2);
  EXPECT_DOUBLE_EQ(giou(b, b), 1.0);
  // IoU 0, union 8, enclosure 10.
  EXPECT_NEAR(giou(b, Box(4, 1, 2, 2)), -0.2, 1e-15);
  EXPECT_NEAR(giou(b, Box(1e6, 1, 2, 2)), -1.0, 1e-3);
}

TEST(Giou, EqualsIouWhenUnionFillsEnclosure) {
  const Box a(1, 1, 2, 2), b(2, 1, 2, 2);
  EXPECT_DOUBLE_EQ(giou(a, b), iou(a, b));
}

TEST(BoxMiou, Examples) {
  const auto s = seq({Box(1, 1, 2, 2), Box(5, 5, 2, 2)});
  EXPECT_DOUBLE_EQ(box_miou(s, s), 1.0);
  const auto t = seq({Box(1, 1, 2, 2), Box(50, 50, 2, 2)});
  EXPECT_DOUBLE_EQ(box_miou(s, t), 0.5);
}

TEST(BoxMiou, MatchesPerFrameLoop) {
  const auto a = seq({Box(1, 1, 2, 2), Box(3, 3, 4, 2), Box(0, 0, 1, 1)});
  const auto b = seq({Box(1.5, 1, 2, 2), Box(3, 4, 4, 2), Box(0.2, 0.1, 1, 2)});
  double sum = 0;
  for (int i = 0; i < 3; ++i) sum += iou(a.boxes[i].box, b.boxes[i].box);
  EXPECT_NEAR(box_miou(a, b), sum / 3, 1e-15);
}

TEST(BoxMiou, RejectsMisalignedSequences) {
  const auto a = seq({Box(1, 1, 2, 2), Box(1, 1, 2, 2)});
  auto b = seq({Box(1, 1, 2, 2)});
  EXPECT_THROW(box_miou(a, b), AlignmentError);
  auto c = a;
  c.boxes[1].frame = 3;
  EXPECT_THROW(box_miou(a, c), AlignmentError);
  auto d = a;
  d.video_id = "other";
  EXPECT_THROW(box_miou(a, d), AlignmentError);
}

TEST(Clamp, Examples) {
  const Box inside(5, 5, 2, 2);
  EXPECT_EQ(clamp_to_frame(inside, 10, 10), inside);
  EXPECT_EQ(clamp_to_frame(Box(0, 0, 4, 4), 10, 10), Box(1, 1, 2, 2));
  EXPECT_THROW(clamp_to_frame(Box(-10, 5, 2, 2), 10, 10), DegenerateBoxError);
}

TEST(BoxSequence, OrderAndCoverageChecks) {
  auto s = seq({Box(1, 1, 1, 1), Box(1, 1, 1, 1), Box(1, 1, 1, 1)});
  EXPECT_NO_THROW(s.check_ordered());
  EXPECT_NO_THROW(s.check_complete(3));
  EXPECT_THROW(s.check_complete(4), CoverageError);
  std::swap(s.boxes[0], s.boxes[1]);
  EXPECT_THROW(s.check_ordered(), OrderingError);
}
