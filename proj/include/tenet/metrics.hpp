#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tenet/geometry.hpp"
#include "tenet/io.hpp"

namespace tenet::metrics {

// |pred ∩ gt| / |pred ∪ gt|; 1 when both masks are empty.
double region_j(const io::MaskRaster& pred, const io::MaskRaster& gt);

// Mask pixels with at least one 4-neighbour outside the mask (pixels
// outside the image count as outside).
io::MaskRaster boundary(const io::MaskRaster& m);

// Boundary F-measure: a boundary pixel matches when the other mask's
// boundary has a pixel within Euclidean distance `tolerance_radius`.
double contour_f(const io::MaskRaster& pred, const io::MaskRaster& gt, double tolerance_radius);

// ceil(0.008 * image diagonal)
double default_tolerance(int width, int height);

struct VideoScore {
  std::string video_id;
  int frames = 0;
  double j = 0.0;
  double f = 0.0;
  double jf = 0.0;
  std::optional<double> box_miou;
};

struct EvalReport {
  std::vector<VideoScore> videos;  // ordered by video id
  double mean_j = 0.0;
  double mean_f = 0.0;
  double mean_jf = 0.0;
  std::optional<double> mean_box_miou;
  int total_frames = 0;
};

// Per-video pair (predicted boxes, ground-truth boxes).
using BoxPairs = std::map<std::string, std::pair<BoxSequence, BoxSequence>>;

// Frame means per video, then unweighted means over videos. The key sets
// of `pred` and `gt` must agree (CoverageError listing the offending keys).
// `tolerance_radius` defaults to default_tolerance of each frame.
EvalReport evaluate(const std::vector<io::MaskRecord>& pred, const std::vector<io::MaskRecord>& gt,
                    const BoxPairs& boxes = {}, std::optional<double> tolerance_radius = {});

void write_report(std::ostream& out, const EvalReport& report);

}  // namespace tenet::metrics
