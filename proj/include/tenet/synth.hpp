#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tenet/geometry.hpp"
#include "tenet/io.hpp"
#include "tenet/record_json.hpp"

namespace tenet::synth {

enum class MotionKind { linear, sinusoidal };

struct Motion {
  MotionKind kind = MotionKind::linear;
  double vx = 0.0, vy = 0.0;  // pixels per frame
  double ax = 0.0, ay = 0.0;  // sinusoid amplitude (pixels)
  double period = 20.0;       // frames
  double phase = 0.0;         // radians
};

struct SceneObject {
  Box initial{0.0, 0.0, 1.0, 1.0};
  Motion motion;
  bool is_target = false;
};

struct NoiseSpec {
  double center_sigma = 0.03;   // finetuned jitter, fraction of box size
  double size_sigma = 0.03;
  double dropout = 0.0;         // finetuned empty-frame probability (never frame 1)
  double distractor_score_bias = 0.2;  // added to pretrained distractor scores
  double swap_probability = 0.15;      // finetuned top-1 is a distractor
  double pretrained_jitter = 1.5;      // multiplier on the finetuned jitter
  double pretrained_miss = 0.05;       // per-object miss probability
  int false_positives = 4;             // low-score random pretrained boxes per frame
};

struct FeatureSpec {
  int dim = 16;
  double signal = 16.0;      // gain on the box/target overlap component
  double noise = 0.05;       // std-dev of additive noise
  int signal_dims = 4;
};

struct SceneSpec {
  std::string video_id;
  int width = 320;
  int height = 180;
  int frames = 8;
  std::vector<SceneObject> objects;
  NoiseSpec noise;
  FeatureSpec features;
  std::uint64_t seed = 0;

  // Throws ValidationError: needs exactly one target and frames >= 1.
  void validate() const;
};

// Random scenes: one target plus `distractors` objects moving linearly or
// sinusoidally inside the frame.
struct SuiteSpec {
  int videos = 200;
  int frames = 8;
  int width = 320;
  int height = 180;
  int distractors = 2;
  NoiseSpec noise;
  FeatureSpec features;
  std::uint64_t seed = 0;
};

struct SyntheticVideo {
  io::VideoInfo info;
  io::TrackRecord gt;  // kind gt, prompt id 0
  std::vector<io::MaskRecord> gt_masks;
  std::vector<io::FrameDetections> detections;  // both sources, by frame
  // Per-detection features (kind detection) and one text feature.
  std::vector<io::FeatureRecord> features;
  // Object index behind every pretrained entry (-1 for false positives),
  // aligned with the pretrained FrameDetections entries. Test-only insight.
  std::vector<std::vector<int>> pretrained_objects;
};

// Object box at a 1-based frame, before clamping.
Box object_box(const SceneObject& obj, int frame);

SyntheticVideo generate(const SceneSpec& spec);

std::vector<SceneSpec> make_suite(const SuiteSpec& suite);

// Config file: {"suite": {...}} or {"scenes": [...]}; omitted fields take
// the defaults above.
std::vector<SceneSpec> scenes_from_json(const io::Json& j, std::uint64_t seed_override,
                                        bool override_seed);

}  // namespace tenet::synth
