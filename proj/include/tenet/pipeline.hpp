#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tenet/metrics.hpp"
#include "tenet/preference.hpp"
#include "tenet/prompts.hpp"
#include "tenet/record_json.hpp"
#include "tenet/tracker.hpp"

namespace tenet::pipeline {

// Stage file names inside the data and output directories.
namespace files {
inline constexpr const char* kDetections = "detections.jsonl";
inline constexpr const char* kGtTracks = "gt_tracks.jsonl";
inline constexpr const char* kGtMasks = "gt_masks.jsonl";
inline constexpr const char* kFeatures = "features.jsonl";
inline constexpr const char* kVideos = "videos.jsonl";
inline constexpr const char* kRawTracks = "raw_tracks.jsonl";
inline constexpr const char* kPrompts = "prompts.jsonl";
inline constexpr const char* kPromptFeatures = "prompt_features.jsonl";
inline constexpr const char* kModel = "model.ckpt";
inline constexpr const char* kTrainLog = "train_log.jsonl";
inline constexpr const char* kGradCheck = "grad_check.json";
inline constexpr const char* kSelection = "selection.jsonl";
inline constexpr const char* kSelected = "selected.jsonl";
inline constexpr const char* kMasks = "masks.jsonl";
inline constexpr const char* kReport = "report.jsonl";
inline constexpr const char* kComparison = "comparison.jsonl";
}  // namespace files

struct PipelineConfig {
  std::string data_dir;  // dataset inputs; empty means out_dir
  std::string out_dir = ".";
  int k = 5;
  double coverage_min = 0.3;
  tracker::TrackerConfig tracker;
  preference::ModelConfig model;
  preference::TrainingConfig training;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string segmenter = "mock";  // mock | endpoint
  std::string endpoint;
  double timeout_seconds = 30.0;
  int retries = 3;
  std::string checkpoint;  // empty: <out>/model.ckpt when present
  bool oracle = false;     // select with the ground-truth oracle scorer
  std::string prompt_source = "selected";  // segment input: selected | gt | reference

  void validate() const;
  std::string data_path(const char* name) const;
  std::string out_path(const char* name) const;
};

// Overlays the fields present in `j` onto `config`.
void apply_json(PipelineConfig& config, const io::Json& j);
io::Json to_json(const PipelineConfig& config);
// TENET_ENDPOINT and TENET_TIMEOUT.
void apply_env(PipelineConfig& config);
// Writes <out>/<stage>.config.json with directories relative to the output.
void write_effective_config(const PipelineConfig& config, const std::string& stage);

// Runs fn(0..n-1) on up to `jobs` threads; results land in index order.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

void cmd_synth(const std::string& spec_path, const PipelineConfig& config);
void cmd_track(const PipelineConfig& config);
void cmd_prompts(const PipelineConfig& config);
void cmd_train(const PipelineConfig& config);
void cmd_select(const PipelineConfig& config);
void cmd_segment(const PipelineConfig& config);
// Returns the rendered comparison table (also printed by the CLI).
std::string cmd_eval(const PipelineConfig& config);

// Per-frame detection feature lookup; a prompt's feature record holds one
// vector per frame, taken from the detection whose box the prompt uses.
class FeatureBank {
public:
  explicit FeatureBank(const std::vector<io::FeatureRecord>& records);
  io::FeatureRecord prompt_features(const prompts::Prompt& prompt) const;
  const io::FeatureRecord* text(const std::string& video_id) const;

private:
  std::vector<io::FeatureRecord> records_;
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> by_frame_;
  std::map<std::string, std::size_t> text_;
};

// Prompts of one video as written by cmd_prompts.
struct VideoPrompts {
  prompts::Prompt reference;
  std::vector<prompts::Prompt> candidates;
};
std::map<std::string, VideoPrompts> group_prompts(const std::vector<io::TrackRecord>& records);

// Candidate samples of one video; labels from `gt` when given.
preference::VideoBatch make_batch(const VideoPrompts& video,
                                  const std::map<std::pair<int, int>, io::FeatureRecord>& features,
                                  const io::FeatureRecord* text, int frames,
                                  const BoxSequence* gt);

struct ComparisonRow {
  std::string method;
  double box_miou;
  double j;
  double f;
  double jf;
};

}  // namespace tenet::pipeline
