#include "tenet/prompts.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "tenet/errors.hpp"

namespace tenet::prompts {

Prompt build_reference(const std::vector<io::FrameDetections>& finetuned, int num_frames) {
  Prompt ref;
  ref.kind = io::TrackKind::reference;
  ref.prompt_id = kReferencePromptId;
  if (finetuned.empty()) throw MissingAnchorError("no finetuned detections");
  ref.video_id = finetuned.front().video_id;

  std::map<int, const io::FrameDetections*> by_frame;
  for (const auto& fd : finetuned) {
    if (fd.video_id != ref.video_id) {
      throw ValidationError("build_reference received detections from several videos");
    }
    if (fd.source != io::DetectorSource::finetuned) {
      throw ValidationError("build_reference requires finetuned detections");
    }
    if (!by_frame.emplace(fd.frame_index, &fd).second) {
      throw OrderingError("duplicate finetuned frame " + std::to_string(fd.frame_index));
    }
  }
  const int frames = std::max(num_frames, by_frame.rbegin()->first);

  for (int t = 1; t <= frames; ++t) {
    auto it = by_frame.find(t);
    if (it != by_frame.end() && !it->second->entries.empty()) {
      const auto& top = it->second->entries.front();
      ref.frames.push_back({t, top.box, false, top.score});
    } else if (t == 1) {
      throw MissingAnchorError("video '" + ref.video_id + "' has no finetuned detection on frame 1");
    } else {
      io::TrackFrame carried = ref.frames.back();
      carried.frame = t;
      carried.filled = true;
      ref.frames.push_back(carried);
    }
  }
  return ref;
}

io::FrameDetections assemble_tracker_input(const io::FrameDetections& pretrained,
                                           const std::optional<io::ScoredBox>& finetuned_top1,
                                           int k) {
  if (k < 1) throw ConfigError("K must be >= 1");
  io::FrameDetections out;
  out.video_id = pretrained.video_id;
  out.frame_index = pretrained.frame_index;
  out.source = io::DetectorSource::pretrained;
  const std::size_t take = std::min<std::size_t>(pretrained.entries.size(), static_cast<std::size_t>(k));
  out.entries.assign(pretrained.entries.begin(), pretrained.entries.begin() + static_cast<std::ptrdiff_t>(take));
  if (finetuned_top1) out.entries.push_back(*finetuned_top1);
  return out;
}

std::vector<Prompt> build_candidates(const std::vector<tracker::RawTrack>& raw_tracks,
                                     const Prompt& reference, double coverage_min) {
  const int frames = static_cast<int>(reference.frames.size());
  struct Survivor {
    std::size_t native;
    int track_id;
    Prompt prompt;
  };
  std::vector<Survivor> survivors;
  for (const auto& raw : raw_tracks) {
    std::map<int, const io::TrackFrame*> native;
    for (const auto& f : raw.observed_frames) {
      if (f.frame >= 1 && f.frame <= frames) native.emplace(f.frame, &f);
    }
    if (frames == 0 || static_cast<double>(native.size()) < coverage_min * frames) continue;

    Prompt c;
    c.video_id = reference.video_id;
    c.kind = io::TrackKind::candidate_track;
    c.source_track_id = raw.track_id;
    for (const auto& rf : reference.frames) {
      auto it = native.find(rf.frame);
      if (it != native.end()) {
        c.frames.push_back({rf.frame, it->second->box, false, it->second->score});
      } else {
        c.frames.push_back({rf.frame, rf.box, true, rf.score});
      }
    }
    survivors.push_back({native.size(), raw.track_id, std::move(c)});
  }
  std::stable_sort(survivors.begin(), survivors.end(), [](const Survivor& a, const Survivor& b) {
    if (a.native != b.native) return a.native > b.native;
    return a.track_id < b.track_id;
  });
  std::vector<Prompt> out;
  out.reserve(survivors.size());
  for (auto& s : survivors) {
    s.prompt.prompt_id = static_cast<int>(out.size()) + 1;
    out.push_back(std::move(s.prompt));
  }
  return out;
}

std::vector<tracker::RawTrack> native_tracks(const std::vector<Prompt>& candidates) {
  std::vector<tracker::RawTrack> raw;
  for (const auto& c : candidates) {
    tracker::RawTrack r{c.source_track_id, {}};
    for (const auto& f : c.frames) {
      if (!f.filled) r.observed_frames.push_back(f);
    }
    raw.push_back(std::move(r));
  }
  return raw;
}

ScoredPrompt oracle_best(const std::vector<Prompt>& candidates, const Prompt& reference,
                         const BoxSequence& gt) {
  ScoredPrompt best{reference.prompt_id, box_miou(reference.to_sequence(), gt)};
  for (const auto& c : candidates) {
    const double m = box_miou(c.to_sequence(), gt);
    if (m > best.value) best = {c.prompt_id, m};
  }
  return best;
}

ScoredPrompt oracle_conf(const std::vector<Prompt>& candidates) {
  if (candidates.empty()) throw EmptySelectionError("no candidate tracks to choose from");
  std::optional<ScoredPrompt> best;
  for (const auto& c : candidates) {
    double sum = 0.0;
    int n = 0;
    for (const auto& f : c.frames) {
      if (f.filled) continue;
      sum += f.score;
      ++n;
    }
    const double mean = n > 0 ? sum / n : 0.0;
    if (!best || mean > best->value) best = ScoredPrompt{c.prompt_id, mean};
  }
  return *best;
}

const Prompt& find_prompt(const std::vector<Prompt>& candidates, const Prompt& reference,
                          int prompt_id) {
  if (prompt_id == reference.prompt_id) return reference;
  for (const auto& c : candidates) {
    if (c.prompt_id == prompt_id) return c;
  }
  throw ValidationError("unknown prompt id " + std::to_string(prompt_id));
}

Prompt merge_tracks_oracle(const std::vector<Prompt>& candidates, const Prompt& reference,
                           const BoxSequence& gt) {
  const ScoredPrompt best = oracle_best(candidates, reference, gt);
  Prompt merged = find_prompt(candidates, reference, best.prompt_id);
  merged.kind = io::TrackKind::merged;
  merged.source_track_id = -1;
  double merged_miou = best.value;

  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ranked.emplace_back(box_miou(candidates[i].to_sequence(), gt), i);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  const bool best_is_candidate = best.prompt_id != reference.prompt_id;
  std::vector<char> claimed(merged.frames.size(), 0);
  for (std::size_t t = 0; t < merged.frames.size(); ++t) {
    claimed[t] = best_is_candidate && !merged.frames[t].filled;
  }
  for (const auto& [miou, idx] : ranked) {
    const Prompt& c = candidates[idx];
    Prompt trial = merged;
    std::vector<char> trial_claimed = claimed;
    bool changed = false;
    for (std::size_t t = 0; t < trial.frames.size(); ++t) {
      if (c.frames[t].filled || claimed[t]) continue;
      trial.frames[t] = c.frames[t];
      trial_claimed[t] = 1;
      changed = true;
    }
    if (!changed) continue;
    const double m = box_miou(trial.to_sequence(), gt);
    if (m > merged_miou) {
      merged = std::move(trial);
      claimed = std::move(trial_claimed);
      merged_miou = m;
    }
  }
  return merged;
}

std::vector<VideoDetections> group_by_video(const std::vector<io::FrameDetections>& dets) {
  std::map<std::string, VideoDetections> videos;
  for (const auto& fd : dets) {
    auto& v = videos[fd.video_id];
    v.video_id = fd.video_id;
    v.num_frames = std::max(v.num_frames, fd.frame_index);
    (fd.source == io::DetectorSource::pretrained ? v.pretrained : v.finetuned).push_back(fd);
  }
  std::vector<VideoDetections> out;
  for (auto& [id, v] : videos) {
    auto by_frame = [](const auto& a, const auto& b) { return a.frame_index < b.frame_index; };
    std::stable_sort(v.pretrained.begin(), v.pretrained.end(), by_frame);
    std::stable_sort(v.finetuned.begin(), v.finetuned.end(), by_frame);
    out.push_back(std::move(v));
  }
  return out;
}

PromptSet generate(const VideoDetections& video, const GenerationConfig& config) {
  PromptSet set;
  set.reference = build_reference(video.finetuned, video.num_frames);
  const int frames = static_cast<int>(set.reference.frames.size());

  std::map<int, const io::FrameDetections*> pretrained;
  for (const auto& fd : video.pretrained) pretrained.emplace(fd.frame_index, &fd);
  std::map<int, const io::FrameDetections*> finetuned;
  for (const auto& fd : video.finetuned) finetuned.emplace(fd.frame_index, &fd);

  std::vector<io::FrameDetections> tracker_input;
  for (int t = 1; t <= frames; ++t) {
    io::FrameDetections pre{video.video_id, t, io::DetectorSource::pretrained, {}};
    if (auto it = pretrained.find(t); it != pretrained.end()) pre = *it->second;
    std::optional<io::ScoredBox> top1;
    if (auto it = finetuned.find(t); it != finetuned.end() && !it->second->entries.empty()) {
      top1 = it->second->entries.front();
    }
    tracker_input.push_back(assemble_tracker_input(pre, top1, config.k));
  }
  set.raw_tracks = tracker::run(std::move(tracker_input), config.tracker);
  set.candidates = build_candidates(set.raw_tracks, set.reference, config.coverage_min);
  return set;
}

std::vector<SweepRow> k_sweep(const std::vector<VideoDetections>& videos,
                              const std::vector<BoxSequence>& gt, std::vector<int> k_values,
                              GenerationConfig config) {
  if (videos.size() != gt.size()) throw AlignmentError("k_sweep needs one gt sequence per video");
  std::sort(k_values.begin(), k_values.end());
  k_values.erase(std::unique(k_values.begin(), k_values.end()), k_values.end());
  std::vector<SweepRow> rows;
  for (int k : k_values) {
    config.k = k;
    double sum = 0.0;
    for (std::size_t v = 0; v < videos.size(); ++v) {
      const PromptSet set = generate(videos[v], config);
      sum += oracle_best(set.candidates, set.reference, gt[v]).value;
    }
    rows.push_back({k, videos.empty() ? 0.0 : sum / static_cast<double>(videos.size())});
  }
  return rows;
}

}  // namespace tenet::prompts
