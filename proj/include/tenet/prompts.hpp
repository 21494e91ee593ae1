#pragma once

#include <optional>
#include <vector>

#include "tenet/geometry.hpp"
#include "tenet/io.hpp"
#include "tenet/tracker.hpp"

namespace tenet::prompts {

// Temporal prompts are stored as track records: the reference proposal has
// kind=reference and prompt_id 0, candidate tracks kind=candidate_track and
// prompt ids 1..n.
using Prompt = io::TrackRecord;

inline constexpr int kReferencePromptId = 0;

// Per frame, the highest-scoring finetuned detection (first listed on
// ties). Frames without detections carry the previous box forward with
// `filled` set. `num_frames` extends the video past the last detection
// record when larger than it.
Prompt build_reference(const std::vector<io::FrameDetections>& finetuned, int num_frames = 0);

// Top-K pretrained entries followed by the finetuned top-1, if any.
io::FrameDetections assemble_tracker_input(const io::FrameDetections& pretrained,
                                           const std::optional<io::ScoredBox>& finetuned_top1,
                                           int k);

// Drops raw tracks observing fewer than `coverage_min` of the reference's
// frames, fills the remaining frames from the reference and orders the
// result by descending native coverage, then source track id.
std::vector<Prompt> build_candidates(const std::vector<tracker::RawTrack>& raw_tracks,
                                     const Prompt& reference, double coverage_min);

// Native (unfilled) frames of candidates, keyed by source track id.
std::vector<tracker::RawTrack> native_tracks(const std::vector<Prompt>& candidates);

struct ScoredPrompt {
  int prompt_id;
  double value;
};

// Prompt (reference included) with the highest box mIoU; ties favour the
// reference, then the earlier candidate.
ScoredPrompt oracle_best(const std::vector<Prompt>& candidates, const Prompt& reference,
                         const BoxSequence& gt);

// Candidate with the highest mean native-frame score. Throws
// EmptySelectionError for an empty list.
ScoredPrompt oracle_conf(const std::vector<Prompt>& candidates);

// Greedy rank-ordered merge. Starts from the best prompt and visits the
// candidates in descending mIoU order; a candidate's native boxes replace
// the current boxes on frames not yet claimed by an accepted candidate,
// and the replacement is kept only when it raises the merged mIoU.
Prompt merge_tracks_oracle(const std::vector<Prompt>& candidates, const Prompt& reference,
                           const BoxSequence& gt);

const Prompt& find_prompt(const std::vector<Prompt>& candidates, const Prompt& reference,
                          int prompt_id);

struct VideoDetections {
  std::string video_id;
  int num_frames = 0;
  std::vector<io::FrameDetections> pretrained;
  std::vector<io::FrameDetections> finetuned;
};

// Groups parsed detections by video. Videos without any finetuned record
// are reported with an empty finetuned list.
std::vector<VideoDetections> group_by_video(const std::vector<io::FrameDetections>& dets);

struct PromptSet {
  Prompt reference;
  std::vector<tracker::RawTrack> raw_tracks;
  std::vector<Prompt> candidates;
};

struct GenerationConfig {
  int k = 5;
  double coverage_min = 0.3;
  tracker::TrackerConfig tracker;
};

// build_reference -> assemble_tracker_input -> tracker::run -> build_candidates
PromptSet generate(const VideoDetections& video, const GenerationConfig& config);

struct SweepRow {
  int k;
  double oracle_best_miou;  // mean over videos
};

// Oracle-best box mIoU for each distinct K (ascending), averaged over the
// videos. `gt` is aligned with `videos`.
std::vector<SweepRow> k_sweep(const std::vector<VideoDetections>& videos,
                              const std::vector<BoxSequence>& gt, std::vector<int> k_values,
                              GenerationConfig config);

}  // namespace tenet::prompts
