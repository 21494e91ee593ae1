#include "tenet/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "tenet/errors.hpp"
#include "tenet/random.hpp"
#include "tenet/segment.hpp"
#include "tenet/synth.hpp"

namespace fs = std::filesystem;

namespace tenet::pipeline {

void PipelineConfig::validate() const {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (coverage_min < 0.0 || coverage_min > 1.0) throw ConfigError("coverage_min must lie in [0,1]");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (segmenter != "mock" && segmenter != "endpoint") {
    throw ConfigError("segmenter must be 'mock' or 'endpoint'");
  }
  if (prompt_source != "selected" && prompt_source != "gt" && prompt_source != "reference") {
    throw ConfigError("prompt_source must be selected, gt or reference");
  }
  model.validate();
  training.validate();
}

std::string PipelineConfig::data_path(const char* name) const {
  return (fs::path(data_dir.empty() ? out_dir : data_dir) / name).string();
}

std::string PipelineConfig::out_path(const char* name) const {
  return (fs::path(out_dir) / name).string();
}

void apply_json(PipelineConfig& c, const io::Json& j) {
  try {
    c.data_dir = j.value("data_dir", c.data_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.k = j.value("k", c.k);
    c.coverage_min = j.value("coverage_min", c.coverage_min);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.segmenter = j.value("segmenter", c.segmenter);
    c.endpoint = j.value("endpoint", c.endpoint);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.retries = j.value("retries", c.retries);
    c.checkpoint = j.value("checkpoint", c.checkpoint);
    c.oracle = j.value("oracle", c.oracle);
    c.prompt_source = j.value("prompt_source", c.prompt_source);
    if (j.contains("tracker")) {
      const auto& t = j.at("tracker");
      c.tracker.iou_threshold = t.value("iou_threshold", c.tracker.iou_threshold);
      c.tracker.max_age = t.value("max_age", c.tracker.max_age);
      c.tracker.min_hits = t.value("min_hits", c.tracker.min_hits);
      c.tracker.direction_weight = t.value("direction_weight", c.tracker.direction_weight);
      c.tracker.velocity_delta = t.value("velocity_delta", c.tracker.velocity_delta);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.model.d_model = m.value("d_model", c.model.d_model);
      c.model.heads = m.value("heads", c.model.heads);
      c.model.frames = m.value("frames", c.model.frames);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.beta1 = t.value("beta1", c.training.beta1);
      c.training.beta2 = t.value("beta2", c.training.beta2);
      c.training.epsilon = t.value("epsilon", c.training.epsilon);
    }
  } catch (const io::Json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

io::Json to_json(const PipelineConfig& c) {
  io::Json j;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["k"] = c.k;
  j["coverage_min"] = c.coverage_min;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["segmenter"] = c.segmenter;
  j["endpoint"] = c.endpoint;
  j["timeout_seconds"] = c.timeout_seconds;
  j["retries"] = c.retries;
  j["checkpoint"] = c.checkpoint;
  j["oracle"] = c.oracle;
  j["prompt_source"] = c.prompt_source;
  j["tracker"] = {{"iou_threshold", c.tracker.iou_threshold},
                  {"max_age", c.tracker.max_age},
                  {"min_hits", c.tracker.min_hits},
                  {"direction_weight", c.tracker.direction_weight},
                  {"velocity_delta", c.tracker.velocity_delta}};
  j["model"] = {{"d_model", c.model.d_model}, {"heads", c.model.heads}, {"frames", c.model.frames}};
  j["training"] = {{"learning_rate", c.training.learning_rate},
                   {"epochs", c.training.epochs},
                   {"beta1", c.training.beta1},
                   {"beta2", c.training.beta2},
                   {"epsilon", c.training.epsilon}};
  return j;
}

void apply_env(PipelineConfig& c) {
  if (const char* e = std::getenv("TENET_ENDPOINT"); e && *e) {
    c.endpoint = e;
    c.segmenter = "endpoint";
  }
  if (const char* t = std::getenv("TENET_TIMEOUT"); t && *t) {
    try {
      c.timeout_seconds = std::stod(t);
    } catch (const std::exception&) {
      throw ConfigError(std::string("TENET_TIMEOUT is not a number: ") + t);
    }
  }
}

void write_effective_config(const PipelineConfig& config, const std::string& stage) {
  fs::create_directories(config.out_dir);
  PipelineConfig shown = config;
  const fs::path out = fs::absolute(config.out_dir);
  auto relative = [&](const std::string& p) {
    if (p.empty()) return p;
    return fs::absolute(p).lexically_normal().lexically_relative(out.lexically_normal()).string();
  };
  shown.data_dir = relative(config.data_dir.empty() ? config.out_dir : config.data_dir);
  shown.out_dir = ".";
  shown.checkpoint = relative(config.checkpoint);
  io::Json j = to_json(shown);
  j["stage"] = stage;
  std::ofstream f(config.out_path((stage + ".config.json").c_str()), std::ios::trunc);
  f << j.dump(2) << '\n';
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const int workers = std::min<int>(jobs, static_cast<int>(n));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

void require_file(const std::string& path, const std::string& stage) {
  if (!fs::exists(path)) {
    throw UsageError(stage + ": missing input '" + path + "'");
  }
}

std::map<std::string, io::VideoInfo> load_videos(const PipelineConfig& c) {
  std::map<std::string, io::VideoInfo> out;
  const auto path = c.data_path(files::kVideos);
  if (!fs::exists(path)) return out;
  for (auto& v : io::parse_videos(path)) out.emplace(v.video_id, v);
  return out;
}

std::map<std::string, BoxSequence> load_gt(const PipelineConfig& c) {
  std::map<std::string, BoxSequence> out;
  for (const auto& t : io::parse_tracks(c.data_path(files::kGtTracks))) {
    if (t.kind == io::TrackKind::gt) out.emplace(t.video_id, t.to_sequence());
  }
  return out;
}

prompts::GenerationConfig generation_config(const PipelineConfig& c) {
  return {c.k, c.coverage_min, c.tracker};
}

std::vector<prompts::VideoDetections> load_detections(const PipelineConfig& c, const std::string& stage) {
  require_file(c.data_path(files::kDetections), stage);
  auto videos = prompts::group_by_video(io::parse_detections(c.data_path(files::kDetections)));
  const auto info = load_videos(c);
  for (auto& v : videos) {
    if (auto it = info.find(v.video_id); it != info.end()) {
      v.num_frames = std::max(v.num_frames, it->second.frames);
    }
  }
  return videos;
}

std::vector<prompts::PromptSet> generate_all(const PipelineConfig& c,
                                             const std::vector<prompts::VideoDetections>& videos) {
  std::vector<prompts::PromptSet> sets(videos.size());
  parallel_for(videos.size(), c.jobs,
               [&](std::size_t i) { sets[i] = prompts::generate(videos[i], generation_config(c)); });
  return sets;
}

template <class Fn>
auto with_stage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw Error(e.kind(), stage + ": " + e.what());
  }
}

}  // namespace

FeatureBank::FeatureBank(const std::vector<io::FeatureRecord>& records) : records_(records) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.kind == io::FeatureKind::detection && r.frame) {
      by_frame_[{r.video_id, *r.frame}].push_back(i);
    } else if (r.kind == io::FeatureKind::text) {
      text_.emplace(r.video_id, i);
    }
  }
}

io::FeatureRecord FeatureBank::prompt_features(const prompts::Prompt& prompt) const {
  io::FeatureRecord out;
  out.video_id = prompt.video_id;
  out.prompt_id = prompt.prompt_id;
  out.kind = prompt.kind == io::TrackKind::reference ? io::FeatureKind::reference
                                                     : io::FeatureKind::candidate_track;
  for (const auto& f : prompt.frames) {
    const std::vector<double>* found = nullptr;
    if (auto it = by_frame_.find({prompt.video_id, f.frame}); it != by_frame_.end()) {
      for (std::size_t idx : it->second) {
        if (*records_[idx].box == f.box) {
          found = &records_[idx].vectors.front();
          break;
        }
      }
    }
    if (!found) {
      // A carried-forward reference box has no detection on this frame;
      // use the box's feature from the frame it was observed on.
      for (auto it = out.vectors.rbegin(); it != out.vectors.rend() && !found; ++it) found = &*it;
    }
    if (!found) {
      throw DimensionError("no feature for video '" + prompt.video_id + "' frame " +
                           std::to_string(f.frame));
    }
    out.vectors.push_back(*found);
  }
  return out;
}

const io::FeatureRecord* FeatureBank::text(const std::string& video_id) const {
  auto it = text_.find(video_id);
  return it == text_.end() ? nullptr : &records_[it->second];
}

std::map<std::string, VideoPrompts> group_prompts(const std::vector<io::TrackRecord>& records) {
  std::map<std::string, VideoPrompts> out;
  std::map<std::string, bool> has_reference;
  for (const auto& r : records) {
    if (r.kind == io::TrackKind::reference) {
      out[r.video_id].reference = r;
      has_reference[r.video_id] = true;
    } else if (r.kind == io::TrackKind::candidate_track) {
      out[r.video_id].candidates.push_back(r);
    }
  }
  for (const auto& [id, v] : out) {
    if (!has_reference[id]) throw CoverageError("video '" + id + "' has no reference proposal");
  }
  for (auto& [id, v] : out) {
    std::sort(v.candidates.begin(), v.candidates.end(),
              [](const auto& a, const auto& b) { return a.prompt_id < b.prompt_id; });
  }
  return out;
}

preference::VideoBatch make_batch(const VideoPrompts& video,
                                  const std::map<std::pair<int, int>, io::FeatureRecord>& features,
                                  const io::FeatureRecord* text, int frames, const BoxSequence* gt) {
  preference::VideoBatch batch;
  batch.video_id = video.reference.video_id;
  auto lookup = [&](io::FeatureKind kind, int id) -> const io::FeatureRecord& {
    auto it = features.find({static_cast<int>(kind), id});
    if (it == features.end()) {
      throw CoverageError("missing features for video '" + batch.video_id + "' prompt " +
                          std::to_string(id));
    }
    return it->second;
  };
  const preference::Matrix ref_tokens =
      preference::sample_track_tokens(lookup(io::FeatureKind::reference, 0), frames);
  std::vector<int> labels(video.candidates.size(), 0);
  if (gt) labels = preference::make_labels(video.candidates, video.reference, *gt);
  for (std::size_t i = 0; i < video.candidates.size(); ++i) {
    preference::PreferenceSample s;
    s.candidate = preference::sample_track_tokens(
        lookup(io::FeatureKind::candidate_track, video.candidates[i].prompt_id), frames);
    s.reference = ref_tokens;
    if (text) s.text = text->vectors.front();
    s.label = labels[i];
    batch.samples.push_back(std::move(s));
  }
  return batch;
}

void cmd_synth(const std::string& spec_path, const PipelineConfig& config) {
  with_stage("synth", [&] {
    require_file(spec_path, "synth");
    std::ifstream in(spec_path);
    io::Json spec;
    try {
      spec = io::Json::parse(in);
    } catch (const io::Json::exception& e) {
      throw ValidationError(std::string("scene config is not JSON: ") + e.what());
    }
    const bool override_seed = config.seed != 0;
    const auto scenes = synth::scenes_from_json(spec, config.seed, override_seed);

    std::vector<synth::SyntheticVideo> videos(scenes.size());
    parallel_for(scenes.size(), config.jobs, [&](std::size_t i) { videos[i] = synth::generate(scenes[i]); });

    fs::create_directories(config.out_dir);
    std::vector<io::FrameDetections> dets;
    std::vector<io::TrackRecord> gt;
    std::vector<io::MaskRecord> masks;
    std::vector<io::FeatureRecord> features;
    std::vector<io::VideoInfo> info;
    for (auto& v : videos) {
      dets.insert(dets.end(), v.detections.begin(), v.detections.end());
      gt.push_back(v.gt);
      masks.insert(masks.end(), v.gt_masks.begin(), v.gt_masks.end());
      features.insert(features.end(), v.features.begin(), v.features.end());
      info.push_back(v.info);
    }
    io::write_detections(config.out_path(files::kDetections), dets);
    io::write_tracks(config.out_path(files::kGtTracks), gt);
    io::write_masks(config.out_path(files::kGtMasks), masks);
    io::write_features(config.out_path(files::kFeatures), features);
    io::write_videos(config.out_path(files::kVideos), info);
    write_effective_config(config, "synth");
  });
}

void cmd_track(const PipelineConfig& config) {
  with_stage("track", [&] {
    config.validate();
    const auto videos = load_detections(config, "track");
    const auto sets = generate_all(config, videos);
    std::vector<io::TrackRecord> out;
    for (const auto& set : sets) {
      for (const auto& raw : set.raw_tracks) {
        io::TrackRecord r;
        r.video_id = set.reference.video_id;
        r.prompt_id = raw.track_id;
        r.kind = io::TrackKind::raw;
        r.source_track_id = raw.track_id;
        r.frames = raw.observed_frames;
        out.push_back(std::move(r));
      }
    }
    fs::create_directories(config.out_dir);
    io::write_tracks(config.out_path(files::kRawTracks), out);
    write_effective_config(config, "track");
  });
}

void cmd_prompts(const PipelineConfig& config) {
  with_stage("prompts", [&] {
    config.validate();
    const auto videos = load_detections(config, "prompts");
    const auto sets = generate_all(config, videos);
    std::vector<io::TrackRecord> tracks;
    for (const auto& set : sets) {
      tracks.push_back(set.reference);
      tracks.insert(tracks.end(), set.candidates.begin(), set.candidates.end());
    }
    fs::create_directories(config.out_dir);
    io::write_tracks(config.out_path(files::kPrompts), tracks);

    if (fs::exists(config.data_path(files::kFeatures))) {
      const FeatureBank bank(io::parse_features(config.data_path(files::kFeatures)));
      std::vector<io::FeatureRecord> features(tracks.size());
      parallel_for(tracks.size(), config.jobs,
                   [&](std::size_t i) { features[i] = bank.prompt_features(tracks[i]); });
      for (const auto& set : sets) {
        if (const auto* t = bank.text(set.reference.video_id)) features.push_back(*t);
      }
      io::write_features(config.out_path(files::kPromptFeatures), features);
    }
    write_effective_config(config, "prompts");
  });
}

namespace {

struct Dataset {
  std::map<std::string, VideoPrompts> prompts;
  std::map<std::string, std::map<std::pair<int, int>, io::FeatureRecord>> features;
  std::map<std::string, io::FeatureRecord> text;
  int d_in = 0;
};

Dataset load_prompt_dataset(const PipelineConfig& c, const std::string& stage, bool need_features) {
  require_file(c.out_path(files::kPrompts), stage);
  Dataset d;
  d.prompts = group_prompts(io::parse_tracks(c.out_path(files::kPrompts)));
  if (!need_features) return d;
  require_file(c.out_path(files::kPromptFeatures), stage);
  for (auto& r : io::parse_features(c.out_path(files::kPromptFeatures))) {
    d.d_in = static_cast<int>(r.dim());
    if (r.kind == io::FeatureKind::text) {
      d.text.emplace(r.video_id, std::move(r));
    } else {
      const std::pair<int, int> key{static_cast<int>(r.kind), r.prompt_id};
      d.features[r.video_id].emplace(key, std::move(r));
    }
  }
  return d;
}

std::vector<preference::VideoBatch> make_batches(const Dataset& d, int frames,
                                                 const std::map<std::string, BoxSequence>* gt) {
  std::vector<preference::VideoBatch> out;
  for (const auto& [id, v] : d.prompts) {
    const BoxSequence* g = nullptr;
    if (gt) {
      auto it = gt->find(id);
      if (it == gt->end()) throw CoverageError("no ground truth for video '" + id + "'");
      g = &it->second;
    }
    auto fit = d.features.find(id);
    if (fit == d.features.end()) throw CoverageError("no prompt features for video '" + id + "'");
    auto tit = d.text.find(id);
    out.push_back(make_batch(v, fit->second, tit == d.text.end() ? nullptr : &tit->second, frames, g));
  }
  return out;
}

}  // namespace

void cmd_train(const PipelineConfig& config) {
  with_stage("train", [&] {
    config.validate();
    require_file(config.data_path(files::kGtTracks), "train");
    const Dataset data = load_prompt_dataset(config, "train", true);
    const auto gt = load_gt(config);
    const auto batches = make_batches(data, config.model.frames, &gt);

    preference::ModelConfig model_config = config.model;
    model_config.d_in = data.d_in;

    // Gradient smoke test on a tiny model with the dataset's first sample.
    io::Json check;
    for (const auto& b : batches) {
      if (b.samples.empty()) continue;
      preference::ModelConfig tiny{data.d_in, 8, 2, 2, true, 1e-5};
      const auto& s = b.samples.front();
      preference::PreferenceSample small;
      small.candidate = preference::Matrix(2, data.d_in);
      small.reference = preference::Matrix(2, data.d_in);
      for (int r = 0; r < 2; ++r) {
        const int src = r == 0 ? 0 : s.candidate.rows - 1;
        std::copy(s.candidate.row(src), s.candidate.row(src) + data.d_in, small.candidate.row(r));
        std::copy(s.reference.row(src), s.reference.row(src) + data.d_in, small.reference.row(r));
      }
      small.text = s.text;
      small.label = s.label;
      const auto report = preference::grad_check(
          preference::PreferenceModel::initialize(tiny, config.seed), {small});
      check["video"] = b.video_id;
      check["max_relative_error"] = report.max_relative_error;
      check["worst_tensor"] = report.worst_tensor;
      if (report.max_relative_error >= 1e-4) {
        throw NumericError("gradient check failed: relative error " +
                           std::to_string(report.max_relative_error) + " in " + report.worst_tensor);
      }
      break;
    }

    preference::TrainingConfig training = config.training;
    training.seed = config.seed;
    fs::create_directories(config.out_dir);
    std::ofstream log(config.out_path(files::kTrainLog), std::ios::trunc);
    auto result = preference::train(preference::PreferenceModel::initialize(model_config, config.seed),
                                    batches, training, [&](const preference::EpochLog& e) {
                                      io::Json j;
                                      j["epoch"] = e.epoch;
                                      j["loss"] = e.loss;
                                      j["train_acc"] = e.train_acc;
                                      log << j.dump() << '\n';
                                    });
    preference::save_checkpoint(config.out_path(files::kModel), result.model);
    std::ofstream(config.out_path(files::kGradCheck), std::ios::trunc) << check.dump() << '\n';
    write_effective_config(config, "train");
  });
}

void cmd_select(const PipelineConfig& config) {
  with_stage("select", [&] {
    config.validate();
    std::string checkpoint = config.checkpoint;
    if (checkpoint.empty() && fs::exists(config.out_path(files::kModel))) {
      checkpoint = config.out_path(files::kModel);
    }
    const bool use_model = !config.oracle && !checkpoint.empty();
    if (!checkpoint.empty() && use_model) require_file(checkpoint, "select");

    const Dataset data = load_prompt_dataset(config, "select", use_model);
    std::map<std::string, BoxSequence> gt;
    if (config.oracle) {
      require_file(config.data_path(files::kGtTracks), "select");
      gt = load_gt(config);
    }
    std::optional<preference::PreferenceModel> model;
    std::vector<preference::VideoBatch> batches;
    if (use_model) {
      model = preference::load_checkpoint(checkpoint);
      batches = make_batches(data, model->config.frames, nullptr);
    }

    std::vector<std::pair<std::string, const VideoPrompts*>> videos;
    for (const auto& [id, v] : data.prompts) videos.emplace_back(id, &v);
    std::vector<io::Json> decisions(videos.size());
    std::vector<io::TrackRecord> selected(videos.size());
    parallel_for(videos.size(), config.jobs, [&](std::size_t i) {
      const auto& [id, v] = videos[i];
      std::vector<int> ids;
      for (const auto& c : v->candidates) ids.push_back(c.prompt_id);
      std::vector<double> probs;
      std::string mode = "reference";
      if (config.oracle) {
        mode = "oracle";
        auto it = gt.find(id);
        if (it == gt.end()) throw CoverageError("no ground truth for video '" + id + "'");
        for (int y : preference::make_labels(v->candidates, v->reference, it->second)) {
          probs.push_back(static_cast<double>(y));
        }
      } else if (model) {
        mode = "model";
        probs = preference::select(*model, ids, batches[i].samples).probabilities;
      } else {
        probs.assign(ids.size(), 0.0);
      }
      const int chosen = preference::select_prompt(ids, probs);
      io::TrackRecord rec = prompts::find_prompt(v->candidates, v->reference, chosen);
      rec.kind = io::TrackKind::selected;
      selected[i] = std::move(rec);
      io::Json j;
      j["schema"] = io::kSchemaVersion;
      j["video"] = id;
      j["mode"] = mode;
      j["prompt_id"] = chosen;
      j["prompt_ids"] = ids;
      j["probabilities"] = probs;
      decisions[i] = std::move(j);
    });

    fs::create_directories(config.out_dir);
    std::ofstream out(config.out_path(files::kSelection), std::ios::trunc);
    for (const auto& j : decisions) out << j.dump() << '\n';
    io::write_tracks(config.out_path(files::kSelected), selected);
    write_effective_config(config, "select");
  });
}

namespace {

std::map<std::string, std::pair<int, int>> frame_sizes(const PipelineConfig& c) {
  std::map<std::string, std::pair<int, int>> out;
  for (const auto& [id, v] : load_videos(c)) out[id] = {v.width, v.height};
  if (out.empty() && fs::exists(c.data_path(files::kGtMasks))) {
    for (const auto& m : io::parse_masks(c.data_path(files::kGtMasks))) {
      out.emplace(m.video_id, std::make_pair(m.mask.width(), m.mask.height()));
    }
  }
  return out;
}

std::vector<io::MaskRecord> mock_masks(const std::vector<io::TrackRecord>& tracks,
                                       const std::map<std::string, std::pair<int, int>>& sizes,
                                       int jobs) {
  std::vector<std::vector<io::MaskRecord>> per_track(tracks.size());
  parallel_for(tracks.size(), jobs, [&](std::size_t i) {
    const auto& t = tracks[i];
    auto it = sizes.find(t.video_id);
    if (it == sizes.end()) throw CoverageError("unknown frame size for video '" + t.video_id + "'");
    for (const auto& f : t.frames) {
      segment::SegmentRequest req{t.video_id, f.frame, it->second.first, it->second.second, f.box};
      io::Warnings w;
      per_track[i].push_back({t.video_id, f.frame, segment::mock_segment(req, &w)});
    }
  });
  std::vector<io::MaskRecord> out;
  for (auto& v : per_track) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace

void cmd_segment(const PipelineConfig& config) {
  with_stage("segment", [&] {
    config.validate();
    std::vector<io::TrackRecord> tracks;
    if (config.prompt_source == "gt") {
      require_file(config.data_path(files::kGtTracks), "segment");
      tracks = io::parse_tracks(config.data_path(files::kGtTracks));
    } else if (config.prompt_source == "reference") {
      require_file(config.out_path(files::kPrompts), "segment");
      for (auto& t : io::parse_tracks(config.out_path(files::kPrompts))) {
        if (t.kind == io::TrackKind::reference) tracks.push_back(std::move(t));
      }
    } else {
      require_file(config.out_path(files::kSelected), "segment");
      tracks = io::parse_tracks(config.out_path(files::kSelected));
    }
    const auto sizes = frame_sizes(config);

    std::vector<io::MaskRecord> masks;
    if (config.segmenter == "mock") {
      masks = mock_masks(tracks, sizes, config.jobs);
    } else {
      segment::SegmentClient client({config.endpoint, config.timeout_seconds, config.retries, 0.05});
      std::vector<segment::SegmentRequest> reqs;
      for (const auto& t : tracks) {
        auto it = sizes.find(t.video_id);
        if (it == sizes.end()) throw CoverageError("unknown frame size for video '" + t.video_id + "'");
        for (const auto& f : t.frames) {
          reqs.push_back({t.video_id, f.frame, it->second.first, it->second.second, f.box});
        }
      }
      const auto rasters = client.segment_all(reqs, config.jobs);
      for (std::size_t i = 0; i < reqs.size(); ++i) {
        masks.push_back({reqs[i].video_id, reqs[i].frame_index, rasters[i]});
      }
    }
    fs::create_directories(config.out_dir);
    io::write_masks(config.out_path(files::kMasks), masks);
    write_effective_config(config, "segment");
  });
}

std::string cmd_eval(const PipelineConfig& config) {
  return with_stage("eval", [&] {
    config.validate();
    require_file(config.out_path(files::kMasks), "eval");
    require_file(config.data_path(files::kGtMasks), "eval");
    require_file(config.data_path(files::kGtTracks), "eval");
    const auto gt_masks = io::parse_masks(config.data_path(files::kGtMasks));
    const auto pred_masks = io::parse_masks(config.out_path(files::kMasks));
    const auto gt = load_gt(config);

    std::vector<io::TrackRecord> selected;
    if (fs::exists(config.out_path(files::kSelected))) {
      selected = io::parse_tracks(config.out_path(files::kSelected));
    }
    metrics::BoxPairs pairs;
    for (const auto& s : selected) {
      auto it = gt.find(s.video_id);
      if (it != gt.end()) pairs[s.video_id] = {s.to_sequence(), it->second};
    }
    const metrics::EvalReport report = metrics::evaluate(pred_masks, gt_masks, pairs);
    fs::create_directories(config.out_dir);
    {
      std::ofstream out(config.out_path(files::kReport), std::ios::trunc);
      metrics::write_report(out, report);
    }

    // Comparison rows over the prompts of every video.
    std::vector<ComparisonRow> rows;
    if (fs::exists(config.out_path(files::kPrompts))) {
      const auto grouped = group_prompts(io::parse_tracks(config.out_path(files::kPrompts)));
      const auto sizes = frame_sizes(config);
      std::map<std::string, std::vector<io::TrackRecord>> choice;
      for (const auto& [id, v] : grouped) {
        auto it = gt.find(id);
        if (it == gt.end()) throw CoverageError("no ground truth for video '" + id + "'");
        const BoxSequence& g = it->second;
        choice["reference"].push_back(v.reference);
        const int conf = v.candidates.empty() ? prompts::kReferencePromptId
                                              : prompts::oracle_conf(v.candidates).prompt_id;
        choice["highest-conf"].push_back(prompts::find_prompt(v.candidates, v.reference, conf));
        const int best = prompts::oracle_best(v.candidates, v.reference, g).prompt_id;
        choice["oracle-best"].push_back(prompts::find_prompt(v.candidates, v.reference, best));
        choice["merged-oracle"].push_back(prompts::merge_tracks_oracle(v.candidates, v.reference, g));
        io::TrackRecord gt_track;
        gt_track.video_id = id;
        gt_track.kind = io::TrackKind::gt;
        for (const auto& fb : g.boxes) gt_track.frames.push_back({fb.frame, fb.box, false, 1.0});
        choice["ground-truth"].push_back(std::move(gt_track));
      }
      if (!selected.empty()) choice["selected"] = selected;

      for (const char* method :
           {"reference", "highest-conf", "oracle-best", "selected", "merged-oracle", "ground-truth"}) {
        auto it = choice.find(method);
        if (it == choice.end()) continue;
        const auto& tracks = it->second;
        metrics::BoxPairs bp;
        for (const auto& t : tracks) bp[t.video_id] = {t.to_sequence(), gt.at(t.video_id)};
        const auto masks = std::string(method) == "selected" ? pred_masks
                                                             : mock_masks(tracks, sizes, config.jobs);
        const auto r = metrics::evaluate(masks, gt_masks, bp);
        rows.push_back({method, r.mean_box_miou.value_or(0.0), r.mean_j, r.mean_f, r.mean_jf});
      }
    }

    std::ofstream cmp(config.out_path(files::kComparison), std::ios::trunc);
    std::ostringstream table;
    table << std::fixed << std::setprecision(1);
    table << std::left << std::setw(16) << "method" << std::right << std::setw(10) << "box mIoU"
          << std::setw(8) << "J&F" << std::setw(8) << "J" << std::setw(8) << "F" << '\n';
    for (const auto& r : rows) {
      io::Json j;
      j["schema"] = io::kSchemaVersion;
      j["method"] = r.method;
      j["box_mIoU"] = r.box_miou;
      j["J"] = r.j;
      j["F"] = r.f;
      j["JF"] = r.jf;
      cmp << j.dump() << '\n';
      table << std::left << std::setw(16) << r.method << std::right << std::setw(10)
            << 100.0 * r.box_miou << std::setw(8) << 100.0 * r.jf << std::setw(8) << 100.0 * r.j
            << std::setw(8) << 100.0 * r.f << '\n';
    }
    table << "dataset (" << report.videos.size() << " videos): J&F " << 100.0 * report.mean_jf
          << "  J " << 100.0 * report.mean_j << "  F " << 100.0 * report.mean_f << '\n';
    write_effective_config(config, "eval");
    return table.str();
  });
}

}  // namespace tenet::pipeline
