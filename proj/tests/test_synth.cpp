#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"
#include "tenet/errors.hpp"
#include "tenet/synth.hpp"

using namespace tenet;
using namespace tenet::synth;

namespace {

SceneSpec single_object(std::uint64_t seed) {
  SceneSpec s;
  s.video_id = "solo";
  s.frames = 10;
  s.seed = seed;
  SceneObject o;
  o.initial = Box(60, 60, 30, 40);
  o.motion.vx = 2;
  o.is_target = true;
  s.objects.push_back(o);
  s.noise.center_sigma = 0;
  s.noise.size_sigma = 0;
  s.noise.swap_probability = 0;
  return s;
}

}  // namespace

TEST(Synth, NoiseFreeTopOneIsGroundTruth) {
  const auto v = generate(single_object(1));
  int checked = 0;
  for (const auto& d : v.detections) {
    if (d.source != io::DetectorSource::finetuned) continue;
    EXPECT_EQ(d.entries.front().box, v.gt.frames[d.frame_index - 1].box);
    ++checked;
  }
  EXPECT_EQ(checked, 10);
}

TEST(Synth, DropoutExercisesCarryForward) {
  auto spec = single_object(2);
  spec.noise.dropout = 1.0;
  const auto v = generate(spec);
  auto grouped = prompts::group_by_video(v.detections);
  ASSERT_EQ(grouped.front().finetuned.size(), 1u);
  const auto ref = prompts::build_reference(grouped.front().finetuned, spec.frames);
  ASSERT_EQ(ref.frames.size(), 10u);
  for (std::size_t i = 1; i < ref.frames.size(); ++i) {
    EXPECT_TRUE(ref.frames[i].filled);
    EXPECT_EQ(ref.frames[i].box, ref.frames[0].box);
  }
}

TEST(Synth, SameSeedSameOutput) {
  SuiteSpec s;
  s.videos = 3;
  s.seed = 9;
  auto dump = [](const std::vector<SceneSpec>& scenes) {
    std::ostringstream out;
    for (const auto& sc : scenes) {
      const auto v = generate(sc);
      io::write_detections(out, v.detections);
      io::write_features(out, v.features);
      io::write_masks(out, v.gt_masks);
    }
    return out.str();
  };
  EXPECT_EQ(dump(make_suite(s)), dump(make_suite(s)));
  auto other = s;
  other.seed = 10;
  EXPECT_NE(dump(make_suite(s)), dump(make_suite(other)));
}

TEST(Synth, DistractorsOutscoreTargetInPretrainedDetector) {
  SuiteSpec s;
  s.videos = 20;
  s.seed = 4;
  double target = 0, distractor = 0;
  int nt = 0, nd = 0;
  for (const auto& sc : make_suite(s)) {
    const auto v = generate(sc);
    int pre = 0;
    for (const auto& d : v.detections) {
      if (d.source != io::DetectorSource::pretrained) continue;
      const auto& owners = v.pretrained_objects[pre++];
      for (std::size_t i = 0; i < d.entries.size(); ++i) {
        if (owners[i] == 0) {
          target += d.entries[i].score;
          ++nt;
        } else if (owners[i] > 0) {
          distractor += d.entries[i].score;
          ++nd;
        }
      }
    }
  }
  EXPECT_GT(distractor / nd, target / nt + 0.1);
}

TEST(Synth, FeaturesCoverEveryDetection) {
  SuiteSpec s;
  s.videos = 2;
  for (const auto& sc : make_suite(s)) {
    const auto v = generate(sc);
    std::size_t entries = 0;
    for (const auto& d : v.detections) entries += d.entries.size();
    std::size_t det = 0, text = 0;
    for (const auto& f : v.features) {
      det += f.kind == io::FeatureKind::detection;
      text += f.kind == io::FeatureKind::text;
      EXPECT_EQ(f.dim(), 16u);
    }
    EXPECT_EQ(det, entries);
    EXPECT_EQ(text, 1u);
  }
}

TEST(Synth, SceneValidation) {
  SceneSpec s = single_object(1);
  s.objects.front().is_target = false;
  EXPECT_THROW(generate(s), ValidationError);
  s = single_object(1);
  s.objects.front().motion.vx = 100;  // leaves the frame
  EXPECT_THROW(generate(s), ValidationError);
}

TEST(Synth, ScenesFromJson) {
  const auto j = io::Json::parse(R"({"scenes":[{"video":"a","frames":4,"seed":3,
      "objects":[{"box":[50,50,20,20],"is_target":true,"motion":{"kind":"linear","vx":1}},
                 {"box":[120,80,20,20]}]}]})");
  const auto scenes = scenes_from_json(j, 0, false);
  ASSERT_EQ(scenes.size(), 1u);
  EXPECT_EQ(scenes[0].frames, 4);
  EXPECT_EQ(scenes[0].seed, 3u);
  EXPECT_EQ(scenes_from_json(j, 77, true)[0].seed, 77u);
  EXPECT_EQ(object_box(scenes[0].objects[0], 3).cx(), 52);
  EXPECT_THROW(scenes_from_json(io::Json::parse(R"({"nothing":1})"), 0, false), ValidationError);
}
