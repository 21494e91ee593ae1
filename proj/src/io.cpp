#include "tenet/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "tenet/errors.hpp"
#include "tenet/record_json.hpp"

namespace tenet::io {

BoxSequence TrackRecord::to_sequence() const {
  BoxSequence seq{video_id, {}};
  seq.boxes.reserve(frames.size());
  for (const auto& f : frames) seq.boxes.push_back({f.frame, f.box});
  return seq;
}

MaskRaster::MaskRaster(int width, int height)
    : MaskRaster(width, height,
                 std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(width, 0)) *
                                               static_cast<std::size_t>(std::max(height, 0)),
                                           0)) {}

MaskRaster::MaskRaster(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  if (width < 0 || height < 0) throw ShapeError("mask dimensions must be non-negative");
  if (bits_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw ShapeError("mask bit count does not equal width*height");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t MaskRaster::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::string to_string(DetectorSource s) {
  return s == DetectorSource::pretrained ? "pretrained" : "finetuned";
}

std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::candidate_track: return "candidate_track";
    case FeatureKind::reference: return "reference";
    case FeatureKind::text: return "text";
    case FeatureKind::detection: return "detection";
  }
  return "?";
}

std::string to_string(TrackKind k) {
  switch (k) {
    case TrackKind::raw: return "raw";
    case TrackKind::reference: return "reference";
    case TrackKind::candidate_track: return "candidate_track";
    case TrackKind::gt: return "gt";
    case TrackKind::merged: return "merged";
    case TrackKind::selected: return "selected";
  }
  return "?";
}

DetectorSource parse_source(const std::string& s) {
  if (s == "pretrained") return DetectorSource::pretrained;
  if (s == "finetuned") return DetectorSource::finetuned;
  throw ParseError("unknown detector source '" + s + "'");
}

FeatureKind parse_feature_kind(const std::string& s) {
  for (auto k : {FeatureKind::candidate_track, FeatureKind::reference, FeatureKind::text,
                 FeatureKind::detection}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError("unknown feature kind '" + s + "'");
}

TrackKind parse_track_kind(const std::string& s) {
  for (auto k : {TrackKind::raw, TrackKind::reference, TrackKind::candidate_track, TrackKind::gt,
                 TrackKind::merged, TrackKind::selected}) {
    if (to_string(k) == s) return k;
  }
  throw ParseError("unknown track kind '" + s + "'");
}

std::vector<std::uint64_t> rle_encode(const MaskRaster& m) {
  std::vector<std::uint64_t> counts;
  std::uint8_t current = 0;
  std::uint64_t run = 0;
  for (int x = 0; x < m.width(); ++x) {
    for (int y = 0; y < m.height(); ++y) {
      const std::uint8_t v = m.at(x, y) ? 1 : 0;
      if (v != current) {
        counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  counts.push_back(run);
  return counts;
}

MaskRaster rle_decode(const std::vector<std::uint64_t>& counts, int width, int height) {
  if (width < 0 || height < 0) throw ShapeError("mask dimensions must be non-negative");
  const std::uint64_t total = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  std::uint64_t sum = 0;
  for (auto c : counts) {
    sum += c;
    if (sum > total) break;
  }
  if (sum != total) {
    throw LengthError("RLE counts sum to " + std::to_string(sum) + ", expected " +
                      std::to_string(total));
  }
  MaskRaster m(width, height);
  std::uint64_t pos = 0;
  bool value = false;
  for (auto c : counts) {
    for (std::uint64_t i = 0; i < c; ++i, ++pos) {
      if (value) {
        const int x = static_cast<int>(pos / static_cast<std::uint64_t>(height));
        const int y = static_cast<int>(pos % static_cast<std::uint64_t>(height));
        m.set(x, y, true);
      }
    }
    value = !value;
  }
  return m;
}

Json box_to_json(const Box& b) { return Json::array({b.cx(), b.cy(), b.w(), b.h()}); }

Box box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw ParseError("box must be an array [cx,cy,w,h]");
  return Box(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

Json mask_to_json(const MaskRecord& m) {
  Json j;
  j["schema"] = kSchemaVersion;
  j["video"] = m.video_id;
  j["frame"] = m.frame;
  j["width"] = m.mask.width();
  j["height"] = m.mask.height();
  j["rle"] = rle_encode(m.mask);
  return j;
}

namespace {

void check_schema(const Json& j) {
  if (!j.is_object()) throw ParseError("record is not an object");
  if (!j.contains("schema") || j.at("schema").get<int>() != kSchemaVersion) {
    throw ParseError("unsupported or missing schema version");
  }
}

}  // namespace

MaskRecord mask_from_json(const Json& j) {
  try {
    check_schema(j);
    MaskRecord m;
    m.video_id = j.at("video").get<std::string>();
    m.frame = j.at("frame").get<int>();
    const int w = j.at("width").get<int>();
    const int h = j.at("height").get<int>();
    m.mask = rle_decode(j.at("rle").get<std::vector<std::uint64_t>>(), w, h);
    return m;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed mask record: ") + e.what());
  }
}

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write '" + path + "'");
  return out;
}

// Calls `fn(json, line_number)` for every non-blank line, translating JSON
// and domain errors into ParseError with the line number attached.
void for_each_record(std::istream& in, const std::function<void(const Json&, int)>& fn) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      check_schema(j);
      fn(j, line_no);
    } catch (const Json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DimensionError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void warn(Warnings* warnings, const std::string& msg) {
  if (warnings) {
    warnings->push_back(msg);
  } else {
    std::cerr << "warning: " << msg << '\n';
  }
}

auto box_key(const Box& b) { return std::make_tuple(b.cx(), b.cy(), b.w(), b.h()); }

}  // namespace

std::vector<FrameDetections> parse_detections(std::istream& in, Warnings* warnings) {
  using Key = std::tuple<std::string, int, int>;
  std::map<Key, FrameDetections> groups;
  for_each_record(in, [&](const Json& j, int line_no) {
    const std::string video = j.at("video").get<std::string>();
    const int frame = j.at("frame").get<int>();
    if (frame < 1) throw ParseError("frame index must be >= 1");
    const DetectorSource source = parse_source(j.at("source").get<std::string>());
    const Box box = box_from_json(j.at("box"));
    double score = j.at("score").get<double>();
    if (!std::isfinite(score)) throw ParseError("non-finite score");
    if (score < 0.0 || score > 1.0) {
      warn(warnings, "line " + std::to_string(line_no) + ": score " + std::to_string(score) +
                         " clamped to [0,1]");
      score = std::clamp(score, 0.0, 1.0);
    }
    auto& g = groups[{video, frame, static_cast<int>(source)}];
    g.video_id = video;
    g.frame_index = frame;
    g.source = source;
    for (const auto& e : g.entries) {
      if (e.box == box) {
        warn(warnings, "line " + std::to_string(line_no) + ": duplicate detection in video '" +
                           video + "' frame " + std::to_string(frame));
        break;
      }
    }
    g.entries.push_back({box, score});
  });

  std::vector<FrameDetections> out;
  out.reserve(groups.size());
  for (auto& [key, g] : groups) {
    std::sort(g.entries.begin(), g.entries.end(), [](const ScoredBox& a, const ScoredBox& b) {
      if (a.score != b.score) return a.score > b.score;
      return box_key(a.box) < box_key(b.box);
    });
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<FrameDetections> parse_detections(const std::string& path, Warnings* warnings) {
  auto in = open_in(path);
  return parse_detections(in, warnings);
}

void write_detections(std::ostream& out, const std::vector<FrameDetections>& dets) {
  for (const auto& fd : dets) {
    for (const auto& e : fd.entries) {
      Json j;
      j["schema"] = kSchemaVersion;
      j["video"] = fd.video_id;
      j["frame"] = fd.frame_index;
      j["source"] = to_string(fd.source);
      j["box"] = box_to_json(e.box);
      j["score"] = e.score;
      out << j.dump() << '\n';
    }
  }
}

void write_detections(const std::string& path, const std::vector<FrameDetections>& dets) {
  auto out = open_out(path);
  write_detections(out, dets);
}

std::vector<FeatureRecord> parse_features(std::istream& in) {
  std::vector<FeatureRecord> records;
  std::optional<std::size_t> dataset_dim;
  for_each_record(in, [&](const Json& j, int) {
    FeatureRecord r;
    r.video_id = j.at("video").get<std::string>();
    r.prompt_id = j.at("prompt_id").get<int>();
    r.kind = parse_feature_kind(j.at("kind").get<std::string>());
    r.vectors = j.at("vectors").get<std::vector<std::vector<double>>>();
    const std::string key = "(" + r.video_id + ", " + to_string(r.kind) + " " +
                            std::to_string(r.prompt_id) + ")";
    const auto dim = j.at("dim").get<std::size_t>();
    if (dim == 0) throw DimensionError("feature record " + key + " has dimension 0");
    if (r.vectors.empty()) throw DimensionError("feature record " + key + " has no vectors");
    if (r.kind == FeatureKind::text && r.vectors.size() != 1) {
      throw DimensionError("text feature record " + key + " must hold exactly one vector");
    }
    for (const auto& v : r.vectors) {
      if (v.size() != dim) {
        throw DimensionError("feature record " + key + " has a vector of size " +
                             std::to_string(v.size()) + ", declared dim " + std::to_string(dim));
      }
      for (double x : v) {
        if (!std::isfinite(x)) throw ParseError("feature record " + key + " has non-finite entry");
      }
    }
    if (dataset_dim && *dataset_dim != dim) {
      throw DimensionError("feature record " + key + " has dim " + std::to_string(dim) +
                           ", dataset uses " + std::to_string(*dataset_dim));
    }
    dataset_dim = dim;
    if (r.kind == FeatureKind::detection) {
      r.frame = j.at("frame").get<int>();
      r.box = box_from_json(j.at("box"));
    }
    records.push_back(std::move(r));
  });
  std::stable_sort(records.begin(), records.end(), [](const FeatureRecord& a, const FeatureRecord& b) {
    return std::make_tuple(a.video_id, static_cast<int>(a.kind), a.prompt_id, a.frame.value_or(0)) <
           std::make_tuple(b.video_id, static_cast<int>(b.kind), b.prompt_id, b.frame.value_or(0));
  });
  return records;
}

std::vector<FeatureRecord> parse_features(const std::string& path) {
  auto in = open_in(path);
  return parse_features(in);
}

void write_features(std::ostream& out, const std::vector<FeatureRecord>& records) {
  for (const auto& r : records) {
    Json j;
    j["schema"] = kSchemaVersion;
    j["video"] = r.video_id;
    j["prompt_id"] = r.prompt_id;
    j["kind"] = to_string(r.kind);
    j["dim"] = r.dim();
    j["vectors"] = r.vectors;
    if (r.frame) j["frame"] = *r.frame;
    if (r.box) j["box"] = box_to_json(*r.box);
    out << j.dump() << '\n';
  }
}

void write_features(const std::string& path, const std::vector<FeatureRecord>& records) {
  auto out = open_out(path);
  write_features(out, records);
}

std::vector<TrackRecord> parse_tracks(std::istream& in) {
  std::vector<TrackRecord> tracks;
  for_each_record(in, [&](const Json& j, int) {
    TrackRecord t;
    t.video_id = j.at("video").get<std::string>();
    t.prompt_id = j.at("prompt_id").get<int>();
    t.kind = parse_track_kind(j.at("kind").get<std::string>());
    t.source_track_id = j.value("source_track_id", -1);
    for (const auto& f : j.at("frames")) {
      t.frames.push_back({f.at("frame").get<int>(), box_from_json(f.at("box")),
                          f.at("filled").get<bool>(), f.value("score", 0.0)});
    }
    t.to_sequence().check_ordered();
    tracks.push_back(std::move(t));
  });
  std::stable_sort(tracks.begin(), tracks.end(), [](const TrackRecord& a, const TrackRecord& b) {
    return std::make_tuple(a.video_id, static_cast<int>(a.kind), a.prompt_id) <
           std::make_tuple(b.video_id, static_cast<int>(b.kind), b.prompt_id);
  });
  return tracks;
}

std::vector<TrackRecord> parse_tracks(const std::string& path) {
  auto in = open_in(path);
  return parse_tracks(in);
}

void write_tracks(std::ostream& out, const std::vector<TrackRecord>& tracks) {
  for (const auto& t : tracks) {
    Json j;
    j["schema"] = kSchemaVersion;
    j["video"] = t.video_id;
    j["prompt_id"] = t.prompt_id;
    j["kind"] = to_string(t.kind);
    j["source_track_id"] = t.source_track_id;
    Json frames = Json::array();
    for (const auto& f : t.frames) {
      Json jf;
      jf["frame"] = f.frame;
      jf["box"] = box_to_json(f.box);
      jf["filled"] = f.filled;
      jf["score"] = f.score;
      frames.push_back(std::move(jf));
    }
    j["frames"] = std::move(frames);
    out << j.dump() << '\n';
  }
}

void write_tracks(const std::string& path, const std::vector<TrackRecord>& tracks) {
  auto out = open_out(path);
  write_tracks(out, tracks);
}

std::vector<MaskRecord> parse_masks(std::istream& in) {
  std::vector<MaskRecord> masks;
  for_each_record(in, [&](const Json& j, int) { masks.push_back(mask_from_json(j)); });
  std::stable_sort(masks.begin(), masks.end(), [](const MaskRecord& a, const MaskRecord& b) {
    return std::tie(a.video_id, a.frame) < std::tie(b.video_id, b.frame);
  });
  return masks;
}

std::vector<MaskRecord> parse_masks(const std::string& path) {
  auto in = open_in(path);
  return parse_masks(in);
}

void write_masks(std::ostream& out, const std::vector<MaskRecord>& masks) {
  for (const auto& m : masks) out << mask_to_json(m).dump() << '\n';
}

void write_masks(const std::string& path, const std::vector<MaskRecord>& masks) {
  auto out = open_out(path);
  write_masks(out, masks);
}

std::vector<VideoInfo> parse_videos(std::istream& in) {
  std::vector<VideoInfo> videos;
  for_each_record(in, [&](const Json& j, int) {
    VideoInfo v{j.at("video").get<std::string>(), j.at("frames").get<int>(),
                j.at("width").get<int>(), j.at("height").get<int>()};
    if (v.frames < 1 || v.width < 1 || v.height < 1) {
      throw ParseError("video '" + v.video_id + "' has non-positive size");
    }
    videos.push_back(std::move(v));
  });
  std::stable_sort(videos.begin(), videos.end(),
                   [](const VideoInfo& a, const VideoInfo& b) { return a.video_id < b.video_id; });
  return videos;
}

std::vector<VideoInfo> parse_videos(const std::string& path) {
  auto in = open_in(path);
  return parse_videos(in);
}

void write_videos(std::ostream& out, const std::vector<VideoInfo>& videos) {
  for (const auto& v : videos) {
    Json j;
    j["schema"] = kSchemaVersion;
    j["video"] = v.video_id;
    j["frames"] = v.frames;
    j["width"] = v.width;
    j["height"] = v.height;
    out << j.dump() << '\n';
  }
}

void write_videos(const std::string& path, const std::vector<VideoInfo>& videos) {
  auto out = open_out(path);
  write_videos(out, videos);
}

}  // namespace tenet::io
