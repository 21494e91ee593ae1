#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tenet/geometry.hpp"

// Line-delimited JSON record formats. Every record carries "schema": 1.
//
//   detections  {schema, video, frame, source, box:[cx,cy,w,h], score}
//   tracks      {schema, video, prompt_id, kind, source_track_id,
//                frames:[{frame, box, filled, score}]}
//   features    {schema, video, prompt_id, kind, dim, vectors:[[...]],
//                frame?, box?}          (frame/box only for kind=detection)
//   masks       {schema, video, frame, width, height, rle:[...]}
//   videos      {schema, video, frames, width, height}
//
// Parsers return records in a canonical order that does not depend on the
// order of lines in the file.
namespace tenet::io {

inline constexpr int kSchemaVersion = 1;

enum class DetectorSource { pretrained, finetuned };

struct ScoredBox {
  Box box;
  double score;
  friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

struct FrameDetections {
  std::string video_id;
  int frame_index = 1;
  DetectorSource source = DetectorSource::pretrained;
  std::vector<ScoredBox> entries;  // descending score

  friend bool operator==(const FrameDetections&, const FrameDetections&) = default;
};

enum class FeatureKind { candidate_track, reference, text, detection };

struct FeatureRecord {
  std::string video_id;
  int prompt_id = 0;
  FeatureKind kind = FeatureKind::candidate_track;
  std::vector<std::vector<double>> vectors;
  // Only for kind == detection: the frame and box the vector describes.
  std::optional<int> frame;
  std::optional<Box> box;

  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

enum class TrackKind { raw, reference, candidate_track, gt, merged, selected };

struct TrackFrame {
  int frame;
  Box box;
  // Candidate tracks: box copied from the reference proposal.
  // Reference proposals: box carried forward from the previous frame.
  bool filled = false;
  double score = 0.0;
  friend bool operator==(const TrackFrame&, const TrackFrame&) = default;
};

struct TrackRecord {
  std::string video_id;
  int prompt_id = 0;
  TrackKind kind = TrackKind::raw;
  int source_track_id = -1;
  std::vector<TrackFrame> frames;

  BoxSequence to_sequence() const;
  friend bool operator==(const TrackRecord&, const TrackRecord&) = default;
};

// Row-major binary mask.
class MaskRaster {
public:
  MaskRaster() = default;
  MaskRaster(int width, int height);
  MaskRaster(int width, int height, std::vector<std::uint8_t> bits);

  int width() const { return width_; }
  int height() const { return height_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t count() const;

  friend bool operator==(const MaskRaster&, const MaskRaster&) = default;

private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct MaskRecord {
  std::string video_id;
  int frame = 1;
  MaskRaster mask;
  friend bool operator==(const MaskRecord&, const MaskRecord&) = default;
};

struct VideoInfo {
  std::string video_id;
  int frames = 0;
  int width = 0;
  int height = 0;
  friend bool operator==(const VideoInfo&, const VideoInfo&) = default;
};

std::string to_string(DetectorSource s);
std::string to_string(FeatureKind k);
std::string to_string(TrackKind k);
DetectorSource parse_source(const std::string& s);
FeatureKind parse_feature_kind(const std::string& s);
TrackKind parse_track_kind(const std::string& s);

// Column-major uncompressed RLE: alternating zero/one runs, starting with a
// (possibly empty) zero run.
std::vector<std::uint64_t> rle_encode(const MaskRaster& m);
MaskRaster rle_decode(const std::vector<std::uint64_t>& counts, int width, int height);

// Warnings (duplicate detections, clamped scores) are appended to
// `warnings` when given, otherwise printed to stderr.
using Warnings = std::vector<std::string>;

std::vector<FrameDetections> parse_detections(std::istream& in, Warnings* warnings = nullptr);
std::vector<FrameDetections> parse_detections(const std::string& path, Warnings* warnings = nullptr);
void write_detections(std::ostream& out, const std::vector<FrameDetections>& dets);
void write_detections(const std::string& path, const std::vector<FrameDetections>& dets);

std::vector<FeatureRecord> parse_features(std::istream& in);
std::vector<FeatureRecord> parse_features(const std::string& path);
void write_features(std::ostream& out, const std::vector<FeatureRecord>& records);
void write_features(const std::string& path, const std::vector<FeatureRecord>& records);

std::vector<TrackRecord> parse_tracks(std::istream& in);
std::vector<TrackRecord> parse_tracks(const std::string& path);
void write_tracks(std::ostream& out, const std::vector<TrackRecord>& tracks);
void write_tracks(const std::string& path, const std::vector<TrackRecord>& tracks);

std::vector<MaskRecord> parse_masks(std::istream& in);
std::vector<MaskRecord> parse_masks(const std::string& path);
void write_masks(std::ostream& out, const std::vector<MaskRecord>& masks);
void write_masks(const std::string& path, const std::vector<MaskRecord>& masks);

std::vector<VideoInfo> parse_videos(std::istream& in);
std::vector<VideoInfo> parse_videos(const std::string& path);
void write_videos(std::ostream& out, const std::vector<VideoInfo>& videos);
void write_videos(const std::string& path, const std::vector<VideoInfo>& videos);

}  // namespace tenet::io
