#include "tenet/metrics.hpp"

#include <cmath>
#include <set>
#include <tuple>

#include "tenet/errors.hpp"
#include "tenet/record_json.hpp"

namespace tenet::metrics {

namespace {

void check_shape(const io::MaskRaster& a, const io::MaskRaster& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ShapeError("mask shapes differ: " + std::to_string(a.width()) + "x" +
                     std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                     std::to_string(b.height()));
  }
}

io::MaskRaster dilate(const io::MaskRaster& m, double radius) {
  const int r = static_cast<int>(std::floor(radius));
  std::vector<std::pair<int, int>> disk;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (static_cast<double>(dx * dx + dy * dy) <= radius * radius) disk.emplace_back(dx, dy);
    }
  }
  io::MaskRaster out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(x, y)) continue;
      for (const auto& [dx, dy] : disk) {
        const int nx = x + dx;
        const int ny = y + dy;
        if (nx >= 0 && ny >= 0 && nx < m.width() && ny < m.height()) out.set(nx, ny, true);
      }
    }
  }
  return out;
}

std::size_t count_within(const io::MaskRaster& points, const io::MaskRaster& dilated) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < points.bits().size(); ++i) {
    n += (points.bits()[i] && dilated.bits()[i]) ? 1 : 0;
  }
  return n;
}

}  // namespace

double region_j(const io::MaskRaster& pred, const io::MaskRaster& gt) {
  check_shape(pred, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.bits().size(); ++i) {
    inter += (pred.bits()[i] & gt.bits()[i]);
    uni += (pred.bits()[i] | gt.bits()[i]);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

io::MaskRaster boundary(const io::MaskRaster& m) {
  io::MaskRaster out(m.width(), m.height());
  auto inside = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < m.width() && y < m.height() && m.at(x, y);
  };
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m.at(x, y)) continue;
      if (!inside(x - 1, y) || !inside(x + 1, y) || !inside(x, y - 1) || !inside(x, y + 1)) {
        out.set(x, y, true);
      }
    }
  }
  return out;
}

double contour_f(const io::MaskRaster& pred, const io::MaskRaster& gt, double tolerance_radius) {
  check_shape(pred, gt);
  if (tolerance_radius < 0.0) throw ValidationError("tolerance radius must be non-negative");
  const io::MaskRaster pb = boundary(pred);
  const io::MaskRaster gb = boundary(gt);
  const std::size_t np = pb.count();
  const std::size_t ng = gb.count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  const double precision =
      static_cast<double>(count_within(pb, dilate(gb, tolerance_radius))) / static_cast<double>(np);
  const double recall =
      static_cast<double>(count_within(gb, dilate(pb, tolerance_radius))) / static_cast<double>(ng);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double default_tolerance(int width, int height) {
  return std::ceil(0.008 * std::sqrt(static_cast<double>(width) * width +
                                     static_cast<double>(height) * height));
}

EvalReport evaluate(const std::vector<io::MaskRecord>& pred, const std::vector<io::MaskRecord>& gt,
                    const BoxPairs& boxes, std::optional<double> tolerance_radius) {
  using Key = std::pair<std::string, int>;
  std::map<Key, const io::MaskRaster*> pred_by_key, gt_by_key;
  for (const auto& m : pred) pred_by_key[{m.video_id, m.frame}] = &m.mask;
  for (const auto& m : gt) gt_by_key[{m.video_id, m.frame}] = &m.mask;

  std::vector<std::string> missing;
  for (const auto& [k, v] : gt_by_key) {
    if (!pred_by_key.count(k)) missing.push_back("prediction " + k.first + "#" + std::to_string(k.second));
  }
  for (const auto& [k, v] : pred_by_key) {
    if (!gt_by_key.count(k)) missing.push_back("ground truth " + k.first + "#" + std::to_string(k.second));
  }
  if (!missing.empty()) {
    std::string msg = "missing frames:";
    for (const auto& m : missing) msg += " " + m;
    throw CoverageError(msg);
  }

  EvalReport report;
  std::map<std::string, VideoScore> per_video;
  for (const auto& [key, g] : gt_by_key) {
    const io::MaskRaster& p = *pred_by_key.at(key);
    const double radius = tolerance_radius.value_or(default_tolerance(g->width(), g->height()));
    auto& v = per_video[key.first];
    v.video_id = key.first;
    v.frames += 1;
    v.j += region_j(p, *g);
    v.f += contour_f(p, *g, radius);
  }
  double box_sum = 0.0;
  int box_videos = 0;
  for (auto& [id, v] : per_video) {
    v.j /= v.frames;
    v.f /= v.frames;
    v.jf = 0.5 * (v.j + v.f);
    if (auto it = boxes.find(id); it != boxes.end()) {
      v.box_miou = box_miou(it->second.first, it->second.second);
      box_sum += *v.box_miou;
      ++box_videos;
    }
    report.total_frames += v.frames;
    report.mean_j += v.j;
    report.mean_f += v.f;
    report.mean_jf += v.jf;
    report.videos.push_back(v);
  }
  if (!report.videos.empty()) {
    const double n = static_cast<double>(report.videos.size());
    report.mean_j /= n;
    report.mean_f /= n;
    report.mean_jf /= n;
  }
  if (box_videos > 0) report.mean_box_miou = box_sum / box_videos;
  return report;
}

void write_report(std::ostream& out, const EvalReport& report) {
  for (const auto& v : report.videos) {
    io::Json j;
    j["schema"] = io::kSchemaVersion;
    j["video"] = v.video_id;
    j["frames"] = v.frames;
    j["J"] = v.j;
    j["F"] = v.f;
    j["JF"] = v.jf;
    if (v.box_miou) j["box_mIoU"] = *v.box_miou;
    out << j.dump() << '\n';
  }
  io::Json d;
  d["schema"] = io::kSchemaVersion;
  d["dataset"] = true;
  d["videos"] = report.videos.size();
  d["frames"] = report.total_frames;
  d["J"] = report.mean_j;
  d["F"] = report.mean_f;
  d["JF"] = report.mean_jf;
  if (report.mean_box_miou) d["box_mIoU"] = *report.mean_box_miou;
  out << d.dump() << '\n';
}

}  // namespace tenet::metrics
