#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tenet/pipeline.hpp"
#include "tenet/prompts.hpp"
#include "tenet/synth.hpp"

namespace tenet::testkit {

struct SuiteVideo {
  synth::SyntheticVideo data;
  BoxSequence gt;
  prompts::PromptSet prompts;
  preference::VideoBatch batch;
};

inline prompts::VideoDetections detections_of(const synth::SyntheticVideo& v) {
  auto grouped = prompts::group_by_video(v.detections);
  grouped.front().num_frames = v.info.frames;
  return grouped.front();
}

// Synthesizes the suite and runs prompt generation and feature assembly
// on every video, the same way the CLI stages do.
inline std::vector<SuiteVideo> run_suite(const synth::SuiteSpec& suite,
                                         const prompts::GenerationConfig& gen = {},
                                         int frames = 8) {
  const auto scenes = synth::make_suite(suite);
  std::vector<SuiteVideo> out(scenes.size());
  pipeline::parallel_for(scenes.size(), 8, [&](std::size_t i) {
    SuiteVideo& v = out[i];
    v.data = synth::generate(scenes[i]);
    v.gt = v.data.gt.to_sequence();
    v.prompts = prompts::generate(detections_of(v.data), gen);

    const pipeline::FeatureBank bank(v.data.features);
    std::map<std::pair<int, int>, io::FeatureRecord> features;
    auto add = [&](const prompts::Prompt& p) {
      auto rec = bank.prompt_features(p);
      features.emplace(std::make_pair(static_cast<int>(rec.kind), rec.prompt_id), std::move(rec));
    };
    add(v.prompts.reference);
    for (const auto& c : v.prompts.candidates) add(c);
    pipeline::VideoPrompts vp{v.prompts.reference, v.prompts.candidates};
    v.batch = pipeline::make_batch(vp, features, bank.text(v.data.info.video_id), frames, &v.gt);
  });
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tenet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace tenet::testkit
