#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "tenet/errors.hpp"
#include "tenet/pipeline.hpp"

namespace {

using tenet::pipeline::PipelineConfig;

int fail(const std::string& kind, const std::string& stage, const std::string& message) {
  tenet::io::Json j;
  j["schema"] = tenet::io::kSchemaVersion;
  j["error"] = kind;
  j["stage"] = stage;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
  return kind == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Candidate-track prompt selection for referring video segmentation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  int jobs = 0;
  std::string out_dir;
  std::string data_dir;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--data", data_dir, "Dataset directory (defaults to --out)");

  std::optional<int> k;
  std::optional<double> coverage_min;
  bool oracle = false;
  std::string checkpoint, segmenter, endpoint, prompt_source, spec_path;
  std::optional<int> epochs;
  std::optional<double> lr;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("spec", spec_path, "Scene configuration JSON")->required();
  auto* track = app.add_subcommand("track", "Run the tracker on the pretrained detections");
  auto* prompts = app.add_subcommand("prompts", "Build the reference proposal and candidate tracks");
  for (auto* sub : {track, prompts}) {
    sub->add_option("-k,--top-k", k, "Pretrained detections per frame");
    sub->add_option("--coverage-min", coverage_min, "Minimum native coverage of a candidate");
  }
  auto* train = app.add_subcommand("train", "Train the preference model");
  train->add_option("--epochs", epochs, "Training epochs");
  train->add_option("--lr", lr, "Adam learning rate");
  auto* select = app.add_subcommand("select", "Choose one prompt per video");
  select->add_option("--checkpoint", checkpoint, "Model checkpoint");
  select->add_flag("--oracle", oracle, "Score candidates against the ground truth");
  auto* segment = app.add_subcommand("segment", "Turn the chosen prompts into masks");
  segment->add_option("--segmenter", segmenter, "mock or endpoint");
  segment->add_option("--endpoint", endpoint, "Segmentation service URL");
  segment->add_option("--prompts", prompt_source, "selected, reference or gt");
  auto* eval = app.add_subcommand("eval", "Score masks and print the comparison table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", "cli", e.what());
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    PipelineConfig config;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      tenet::io::Json j;
      try {
        j = tenet::io::Json::parse(in);
      } catch (const tenet::io::Json::exception& e) {
        throw tenet::ConfigError(std::string("config file is not JSON: ") + e.what());
      }
      tenet::pipeline::apply_json(config, j);
    }
    if (app.count("--seed")) config.seed = seed;
    if (jobs > 0) config.jobs = jobs;
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (!data_dir.empty()) config.data_dir = data_dir;
    if (k) config.k = *k;
    if (coverage_min) config.coverage_min = *coverage_min;
    if (epochs) config.training.epochs = *epochs;
    if (lr) config.training.learning_rate = *lr;
    if (!checkpoint.empty()) config.checkpoint = checkpoint;
    if (oracle) config.oracle = true;
    if (!segmenter.empty()) config.segmenter = segmenter;
    if (!endpoint.empty()) {
      config.endpoint = endpoint;
      if (segmenter.empty()) config.segmenter = "endpoint";
    }
    if (!prompt_source.empty()) config.prompt_source = prompt_source;
    tenet::pipeline::apply_env(config);

    if (*synth) tenet::pipeline::cmd_synth(spec_path, config);
    if (*track) tenet::pipeline::cmd_track(config);
    if (*prompts) tenet::pipeline::cmd_prompts(config);
    if (*train) tenet::pipeline::cmd_train(config);
    if (*select) tenet::pipeline::cmd_select(config);
    if (*segment) tenet::pipeline::cmd_segment(config);
    if (*eval) std::cout << tenet::pipeline::cmd_eval(config);
  } catch (const tenet::UsageError& e) {
    return fail("usage", stage, e.what());
  } catch (const tenet::Error& e) {
    return fail(e.kind(), stage, e.what());
  } catch (const std::exception& e) {
    return fail("internal", stage, e.what());
  }
  return 0;
}
