#include "tenet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tenet/errors.hpp"
#include "tenet/random.hpp"
#include "tenet/segment.hpp"

namespace tenet::synth {

void SceneSpec::validate() const {
  if (frames < 1) throw ValidationError("scene '" + video_id + "' needs at least one frame");
  if (width < 1 || height < 1) throw ValidationError("scene '" + video_id + "' has an empty frame");
  const auto targets = std::count_if(objects.begin(), objects.end(),
                                     [](const SceneObject& o) { return o.is_target; });
  if (targets != 1) {
    throw ValidationError("scene '" + video_id + "' must have exactly one target object, has " +
                          std::to_string(targets));
  }
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(noise.dropout) || !prob(noise.swap_probability) || !prob(noise.pretrained_miss) ||
      noise.center_sigma < 0.0 || noise.size_sigma < 0.0 || noise.pretrained_jitter < 0.0 ||
      noise.false_positives < 0) {
    throw ValidationError("scene '" + video_id + "' has invalid noise parameters");
  }
  if (features.dim < 1 || features.signal_dims < 0 || features.signal_dims + 5 > features.dim ||
      features.noise < 0.0) {
    throw ValidationError("scene '" + video_id + "' has invalid feature parameters");
  }
}

Box object_box(const SceneObject& obj, int frame) {
  const double t = frame - 1;
  double cx = obj.initial.cx() + obj.motion.vx * t;
  double cy = obj.initial.cy() + obj.motion.vy * t;
  if (obj.motion.kind == MotionKind::sinusoidal) {
    const double angle = 2.0 * std::numbers::pi * t / obj.motion.period + obj.motion.phase;
    cx += obj.motion.ax * std::sin(angle);
    cy += obj.motion.ay * std::sin(angle);
  }
  return Box(cx, cy, obj.initial.w(), obj.initial.h());
}

namespace {

Box jitter(const Box& b, double center_sigma, double size_sigma, std::mt19937_64& rng, int width,
           int height) {
  std::normal_distribution<double> n(0.0, 1.0);
  const double cx = b.cx() + center_sigma * b.w() * n(rng);
  const double cy = b.cy() + center_sigma * b.h() * n(rng);
  const double w = std::max(2.0, b.w() * (1.0 + size_sigma * n(rng)));
  const double h = std::max(2.0, b.h() * (1.0 + size_sigma * n(rng)));
  try {
    return clamp_to_frame(Box(cx, cy, w, h), width, height);
  } catch (const DegenerateBoxError&) {
    return clamp_to_frame(b, width, height);
  }
}

std::vector<double> box_feature(const SceneSpec& spec, const Box& box, double score,
                                const Box& target, std::mt19937_64& rng) {
  const auto& f = spec.features;
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(f.dim, 0.0);
  const double overlap = iou(box, target);
  int i = 0;
  for (; i < f.signal_dims; ++i) v[i] = f.signal * overlap + f.noise * n(rng);
  v[i++] = box.cx() / spec.width;
  v[i++] = box.cy() / spec.height;
  v[i++] = box.w() / spec.width;
  v[i++] = box.h() / spec.height;
  v[i++] = score;
  for (; i < f.dim; ++i) v[i] = f.noise * n(rng);
  return v;
}

}  // namespace

SyntheticVideo generate(const SceneSpec& spec) {
  spec.validate();
  SyntheticVideo out;
  out.info = {spec.video_id, spec.frames, spec.width, spec.height};
  out.gt.video_id = spec.video_id;
  out.gt.kind = io::TrackKind::gt;
  out.gt.prompt_id = 0;

  const auto target_it = std::find_if(spec.objects.begin(), spec.objects.end(),
                                      [](const SceneObject& o) { return o.is_target; });
  const std::size_t target = static_cast<std::size_t>(target_it - spec.objects.begin());
  std::vector<std::size_t> distractors;
  for (std::size_t o = 0; o < spec.objects.size(); ++o) {
    if (o != target) distractors.push_back(o);
  }

  auto det_rng = make_stream(spec.seed, "synth.detections/" + spec.video_id);
  auto feat_rng = make_stream(spec.seed, "synth.features/" + spec.video_id);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(det_rng); };

  const auto& noise = spec.noise;
  int feature_id = 0;
  for (int t = 1; t <= spec.frames; ++t) {
    std::vector<Box> truth;
    for (const auto& obj : spec.objects) {
      try {
        truth.push_back(clamp_to_frame(object_box(obj, t), spec.width, spec.height));
      } catch (const DegenerateBoxError&) {
        throw ValidationError("object leaves the frame in scene '" + spec.video_id + "' at frame " +
                              std::to_string(t));
      }
    }
    const Box& gt_box = truth[target];
    out.gt.frames.push_back({t, gt_box, false, 1.0});
    out.gt_masks.push_back(
        {spec.video_id, t, segment::rasterize_box(gt_box, spec.width, spec.height)});

    // Finetuned detector: target first unless a distractor swap occurs.
    io::FrameDetections fine{spec.video_id, t, io::DetectorSource::finetuned, {}};
    const bool dropped = t > 1 && unit(det_rng) < noise.dropout;
    const double target_score = uniform(0.55, 0.95);
    const Box target_det = jitter(gt_box, noise.center_sigma, noise.size_sigma, det_rng,
                                  spec.width, spec.height);
    const bool swap = !distractors.empty() && unit(det_rng) < noise.swap_probability;
    const std::size_t swapped =
        distractors.empty() ? 0 : static_cast<std::size_t>(unit(det_rng) * distractors.size()) % distractors.size();
    if (!dropped) {
      fine.entries.push_back({target_det, target_score});
      for (std::size_t k = 0; k < distractors.size(); ++k) {
        const Box b = jitter(truth[distractors[k]], noise.center_sigma, noise.size_sigma, det_rng,
                             spec.width, spec.height);
        const double s = (swap && k == swapped) ? std::min(1.0, target_score + uniform(0.02, 0.1))
                                                : uniform(0.1, 0.5);
        fine.entries.push_back({b, s});
      }
      std::stable_sort(fine.entries.begin(), fine.entries.end(),
                       [](const auto& a, const auto& b) { return a.score > b.score; });
      out.detections.push_back(fine);
    }

    // Pretrained detector: all objects, larger jitter, biased distractors.
    io::FrameDetections pre{spec.video_id, t, io::DetectorSource::pretrained, {}};
    std::vector<std::pair<io::ScoredBox, int>> tagged;
    const double pj = noise.pretrained_jitter;
    for (std::size_t o = 0; o < spec.objects.size(); ++o) {
      if (unit(det_rng) < noise.pretrained_miss) continue;
      const Box b = jitter(truth[o], pj * noise.center_sigma, pj * noise.size_sigma, det_rng,
                           spec.width, spec.height);
      double s = uniform(0.3, 0.7);
      if (o != target) s = std::min(1.0, s + noise.distractor_score_bias);
      tagged.push_back({{b, s}, static_cast<int>(o)});
    }
    for (int k = 0; k < noise.false_positives; ++k) {
      const double w = uniform(15.0, 50.0);
      const double h = uniform(15.0, 50.0);
      const Box b(uniform(w / 2, spec.width - w / 2), uniform(h / 2, spec.height - h / 2), w, h);
      tagged.push_back({{b, uniform(0.05, 0.3)}, -1});
    }
    std::stable_sort(tagged.begin(), tagged.end(),
                     [](const auto& a, const auto& b) { return a.first.score > b.first.score; });
    std::vector<int> owners;
    for (auto& [sb, owner] : tagged) {
      pre.entries.push_back(sb);
      owners.push_back(owner);
    }
    out.pretrained_objects.push_back(std::move(owners));
    out.detections.push_back(pre);

    for (const auto* fd : {&fine, &pre}) {
      if (fd == &fine && dropped) continue;
      for (const auto& e : fd->entries) {
        io::FeatureRecord r;
        r.video_id = spec.video_id;
        r.prompt_id = feature_id++;
        r.kind = io::FeatureKind::detection;
        r.frame = t;
        r.box = e.box;
        r.vectors.push_back(box_feature(spec, e.box, e.score, gt_box, feat_rng));
        out.features.push_back(std::move(r));
      }
    }
  }

  io::FeatureRecord text;
  text.video_id = spec.video_id;
  text.prompt_id = 0;
  text.kind = io::FeatureKind::text;
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> tv(spec.features.dim);
  for (auto& x : tv) x = n(feat_rng);
  text.vectors.push_back(std::move(tv));
  out.features.push_back(std::move(text));
  return out;
}

std::vector<SceneSpec> make_suite(const SuiteSpec& suite) {
  if (suite.videos < 0 || suite.distractors < 0) throw ValidationError("invalid suite size");
  std::vector<SceneSpec> scenes;
  for (int v = 0; v < suite.videos; ++v) {
    char name[32];
    std::snprintf(name, sizeof(name), "vid%04d", v);
    SceneSpec s;
    s.video_id = name;
    s.width = suite.width;
    s.height = suite.height;
    s.frames = suite.frames;
    s.noise = suite.noise;
    s.features = suite.features;
    s.seed = suite.seed;

    auto rng = make_stream(suite.seed, std::string("synth.scene/") + name);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const double span = std::max(0, suite.frames - 1);
    for (int o = 0; o <= suite.distractors; ++o) {
      SceneObject obj;
      obj.is_target = (o == 0);
      const double w = uniform(25.0, 50.0);
      const double h = uniform(30.0, 60.0);
      Motion m;
      m.vx = uniform(-3.0, 3.0);
      m.vy = uniform(-1.5, 1.5);
      if (unit(rng) < 0.3) {
        m.kind = MotionKind::sinusoidal;
        m.ax = uniform(0.0, 15.0);
        m.ay = uniform(0.0, 8.0);
        m.period = uniform(10.0, 30.0);
        m.phase = uniform(0.0, 2.0 * std::numbers::pi);
      }
      // Start so that the whole path stays inside the frame.
      const double margin_x = w / 2 + m.ax + 1.0;
      const double margin_y = h / 2 + m.ay + 1.0;
      const double lo_x = margin_x + std::max(0.0, -m.vx * span);
      const double hi_x = suite.width - margin_x - std::max(0.0, m.vx * span);
      const double lo_y = margin_y + std::max(0.0, -m.vy * span);
      const double hi_y = suite.height - margin_y - std::max(0.0, m.vy * span);
      if (hi_x <= lo_x) m.vx = 0.0;
      if (hi_y <= lo_y) m.vy = 0.0;
      const double cx = hi_x > lo_x ? uniform(lo_x, hi_x) : suite.width / 2.0;
      const double cy = hi_y > lo_y ? uniform(lo_y, hi_y) : suite.height / 2.0;
      obj.initial = Box(cx, cy, w, h);
      obj.motion = m;
      s.objects.push_back(obj);
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

namespace {

NoiseSpec noise_from_json(const io::Json& j, NoiseSpec n) {
  n.center_sigma = j.value("center_sigma", n.center_sigma);
  n.size_sigma = j.value("size_sigma", n.size_sigma);
  n.dropout = j.value("dropout", n.dropout);
  n.distractor_score_bias = j.value("distractor_score_bias", n.distractor_score_bias);
  n.swap_probability = j.value("swap_probability", n.swap_probability);
  n.pretrained_jitter = j.value("pretrained_jitter", n.pretrained_jitter);
  n.pretrained_miss = j.value("pretrained_miss", n.pretrained_miss);
  n.false_positives = j.value("false_positives", n.false_positives);
  return n;
}

FeatureSpec features_from_json(const io::Json& j, FeatureSpec f) {
  f.dim = j.value("dim", f.dim);
  f.signal = j.value("signal", f.signal);
  f.noise = j.value("noise", f.noise);
  f.signal_dims = j.value("signal_dims", f.signal_dims);
  return f;
}

}  // namespace

std::vector<SceneSpec> scenes_from_json(const io::Json& j, std::uint64_t seed_override,
                                        bool override_seed) {
  try {
    if (j.contains("suite")) {
      const auto& s = j.at("suite");
      SuiteSpec suite;
      suite.videos = s.value("videos", suite.videos);
      suite.frames = s.value("frames", suite.frames);
      suite.width = s.value("width", suite.width);
      suite.height = s.value("height", suite.height);
      suite.distractors = s.value("distractors", suite.distractors);
      suite.seed = s.value("seed", suite.seed);
      if (s.contains("noise")) suite.noise = noise_from_json(s.at("noise"), suite.noise);
      if (s.contains("features")) suite.features = features_from_json(s.at("features"), suite.features);
      if (override_seed) suite.seed = seed_override;
      return make_suite(suite);
    }
    std::vector<SceneSpec> scenes;
    for (const auto& sj : j.at("scenes")) {
      SceneSpec s;
      s.video_id = sj.at("video").get<std::string>();
      s.width = sj.value("width", s.width);
      s.height = sj.value("height", s.height);
      s.frames = sj.value("frames", s.frames);
      s.seed = override_seed ? seed_override : sj.value("seed", s.seed);
      if (sj.contains("noise")) s.noise = noise_from_json(sj.at("noise"), s.noise);
      if (sj.contains("features")) s.features = features_from_json(sj.at("features"), s.features);
      for (const auto& oj : sj.at("objects")) {
        SceneObject o;
        o.initial = io::box_from_json(oj.at("box"));
        o.is_target = oj.value("is_target", false);
        if (oj.contains("motion")) {
          const auto& mj = oj.at("motion");
          const std::string kind = mj.value("kind", std::string("linear"));
          if (kind == "sinusoidal") {
            o.motion.kind = MotionKind::sinusoidal;
          } else if (kind != "linear") {
            throw ValidationError("unknown motion kind '" + kind + "'");
          }
          o.motion.vx = mj.value("vx", 0.0);
          o.motion.vy = mj.value("vy", 0.0);
          o.motion.ax = mj.value("ax", 0.0);
          o.motion.ay = mj.value("ay", 0.0);
          o.motion.period = mj.value("period", o.motion.period);
          o.motion.phase = mj.value("phase", 0.0);
        }
        s.objects.push_back(o);
      }
      s.validate();
      scenes.push_back(std::move(s));
    }
    return scenes;
  } catch (const io::Json::exception& e) {
    throw ValidationError(std::string("invalid synthetic scene config: ") + e.what());
  }
}

}  // namespace tenet::synth
