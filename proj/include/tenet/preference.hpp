#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tenet/geometry.hpp"
#include "tenet/io.hpp"

namespace tenet::preference {

// Dense row-major matrix of doubles.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::size_t size() const { return data.size(); }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct ModelConfig {
  int d_in = 16;
  int d_model = 64;
  int heads = 4;
  int frames = 8;  // sampled frames per track (N)
  // Without the encoder the head reads the classification token directly.
  bool use_encoder = true;
  double layer_norm_eps = 1e-5;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum Role : int { kRoleClass = 0, kRoleCandidate = 1, kRoleReference = 2, kRoleText = 3 };

// Every trainable tensor. Linear weights are stored out x in; biases and
// vectors as 1 x n rows.
struct Parameters {
  Matrix class_token;
  Matrix vis_w1, vis_b1, vis_w2, vis_b2;
  Matrix txt_w1, txt_b1, txt_w2, txt_b2;
  Matrix role_embeddings;      // 4 x d_model
  Matrix temporal_embeddings;  // frames x d_model
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln1_gamma, ln1_beta;
  Matrix ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Matrix ln2_gamma, ln2_beta;
  Matrix head_w, head_b;

  static Parameters zeros(const ModelConfig& config);

  // Visits tensors in a fixed order with stable names.
  template <class Self, class F>
  static void visit(Self& self, F&& fn) {
    fn("class_token", self.class_token);
    fn("visual_projection.w1", self.vis_w1);
    fn("visual_projection.b1", self.vis_b1);
    fn("visual_projection.w2", self.vis_w2);
    fn("visual_projection.b2", self.vis_b2);
    fn("text_projection.w1", self.txt_w1);
    fn("text_projection.b1", self.txt_b1);
    fn("text_projection.w2", self.txt_w2);
    fn("text_projection.b2", self.txt_b2);
    fn("role_embeddings", self.role_embeddings);
    fn("temporal_embeddings", self.temporal_embeddings);
    fn("encoder.attention.wq", self.wq);
    fn("encoder.attention.bq", self.bq);
    fn("encoder.attention.wk", self.wk);
    fn("encoder.attention.bk", self.bk);
    fn("encoder.attention.wv", self.wv);
    fn("encoder.attention.bv", self.bv);
    fn("encoder.attention.wo", self.wo);
    fn("encoder.attention.bo", self.bo);
    fn("encoder.norm1.gamma", self.ln1_gamma);
    fn("encoder.norm1.beta", self.ln1_beta);
    fn("encoder.ffn.w1", self.ffn_w1);
    fn("encoder.ffn.b1", self.ffn_b1);
    fn("encoder.ffn.w2", self.ffn_w2);
    fn("encoder.ffn.b2", self.ffn_b2);
    fn("encoder.norm2.gamma", self.ln2_gamma);
    fn("encoder.norm2.beta", self.ln2_beta);
    fn("head.w", self.head_w);
    fn("head.b", self.head_b);
  }

  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  static std::vector<std::string> names();

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

struct PreferenceModel {
  ModelConfig config;
  Parameters params;

  // Weights and biases of linear maps ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
  // classification token and embeddings ~ N(0, 0.02^2), layer norms at
  // identity. Deterministic in `seed`.
  static PreferenceModel initialize(const ModelConfig& config, std::uint64_t seed);

  friend bool operator==(const PreferenceModel&, const PreferenceModel&) = default;
};

struct PreferenceSample {
  Matrix candidate;  // frames x d_in
  Matrix reference;  // frames x d_in
  std::optional<std::vector<double>> text;
  int label = 0;
};

// Encoder input: [z, candidate tokens, reference tokens, text token], with
// role and temporal embeddings added. (1 + 2N [+1]) x d_model.
Matrix assemble_tokens(const PreferenceModel& model, const PreferenceSample& sample);

// Raw score from an already assembled token matrix (row 0 is the class
// token).
double score_tokens(const PreferenceModel& model, const Matrix& tokens);

double score(const PreferenceModel& model, const PreferenceSample& sample);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(score) and
// returns the score.
double score_backward(const PreferenceModel& model, const PreferenceSample& sample,
                      double dscore, Parameters& grads);

double sigmoid(double s);

// Sum of per-candidate binary cross entropies on raw scores, evaluated in
// the stable log-sum-exp form. Throws EmptyBatchError when empty.
double bce_loss(std::span<const double> scores, std::span<const int> labels);

// y_i = 1 iff candidate mIoU strictly exceeds the reference mIoU.
std::vector<int> make_labels(const std::vector<io::TrackRecord>& candidates,
                             const io::TrackRecord& reference, const BoxSequence& gt);

// Evenly spaced 1-based frame indices over 1..num_frames, endpoints
// included. Throws EmptyVideoError when num_frames < 1.
std::vector<int> sample_frame_indices(int num_frames, int count);

// Selects `count` per-frame vectors of a prompt's feature record (one
// vector per frame) in temporal order.
Matrix sample_track_tokens(const io::FeatureRecord& features, int count);

struct TrainingConfig {
  double learning_rate = 1e-4;
  int epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

// All candidates of one video; one optimizer step per video.
struct VideoBatch {
  std::string video_id;
  std::vector<PreferenceSample> samples;
};

struct EpochLog {
  int epoch;
  double loss;       // mean per-video loss
  double train_acc;  // fraction of samples with (sigma(s) > 0.5) == label
};

struct TrainResult {
  PreferenceModel model;
  std::vector<EpochLog> log;
};

TrainResult train(PreferenceModel model, const std::vector<VideoBatch>& data,
                  const TrainingConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  // Per entry: |analytic - numeric| / max(|analytic|, |numeric|, 1e-2).
  std::vector<std::pair<std::string, double>> per_tensor;
};

// Compares analytic gradients of bce_loss(score(samples)) with central
// differences at `step`, on at most `max_entries` entries per tensor.
GradCheckReport grad_check(const PreferenceModel& model,
                           const std::vector<PreferenceSample>& samples, double step = 1e-5,
                           int max_entries = 64);

// Analytic and central-difference gradient of a single parameter entry.
std::pair<double, double> gradient_entry(const PreferenceModel& model,
                                         const std::vector<PreferenceSample>& samples,
                                         const std::string& tensor, std::size_t index,
                                         double step = 1e-5);

struct Selection {
  int prompt_id;                   // kReferencePromptId when no candidate passes
  std::vector<double> probabilities;  // sigma(s_i) per candidate
};

// If some probability exceeds 0.5, the candidate with the highest one
// (lowest prompt id on ties); otherwise the reference (prompt id 0).
int select_prompt(std::span<const int> prompt_ids, std::span<const double> probabilities);

Selection select(const PreferenceModel& model, std::span<const int> prompt_ids,
                 const std::vector<PreferenceSample>& candidates);

void save_checkpoint(std::ostream& out, const PreferenceModel& model);
void save_checkpoint(const std::string& path, const PreferenceModel& model);
PreferenceModel load_checkpoint(std::istream& in);
PreferenceModel load_checkpoint(const std::string& path);

}  // namespace tenet::preference
