#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <sstream>

#include "tenet/errors.hpp"
#include "tenet/preference.hpp"

using namespace tenet;
using namespace tenet::preference;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (auto& v : m.data) v = n(rng);
  return m;
}

PreferenceSample random_sample(const ModelConfig& cfg, std::mt19937_64& rng, bool text) {
  PreferenceSample s;
  s.candidate = random_matrix(cfg.frames, cfg.d_in, rng);
  s.reference = random_matrix(cfg.frames, cfg.d_in, rng);
  if (text) s.text = random_matrix(1, cfg.d_in, rng).data;
  s.label = static_cast<int>(rng() % 2);
  return s;
}

Eigen::MatrixXd E(const Matrix& m) {
  Eigen::MatrixXd out(m.rows, m.cols);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) out(r, c) = m(r, c);
  }
  return out;
}

Eigen::RowVectorXd Ev(const Matrix& m) { return E(m).row(0); }

Eigen::MatrixXd gelu(Eigen::MatrixXd x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v))); });
}

Eigen::MatrixXd add_bias(Eigen::MatrixXd x, const Eigen::RowVectorXd& b) {
  x.rowwise() += b;
  return x;
}

Eigen::MatrixXd norm_rows(const Eigen::MatrixXd& x, const Matrix& gamma, const Matrix& beta, double eps) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    out.row(r) = ((x.row(r).array() - mu) / std::sqrt(var + eps)).matrix();
    out.row(r) = out.row(r).cwiseProduct(Ev(gamma)) + Ev(beta);
  }
  return out;
}

// Full encoder layer over every token, written out with dense matrices.
double straight_line_score(const PreferenceModel& m, const PreferenceSample& s) {
  const auto& p = m.params;
  const int n = m.config.frames, d = m.config.d_model, h = m.config.heads, dh = d / h;
  auto mlp = [&](const Eigen::MatrixXd& x, const Matrix& w1, const Matrix& b1, const Matrix& w2, const Matrix& b2) {
    return add_bias(gelu(add_bias(x * E(w1).transpose(), Ev(b1))) * E(w2).transpose(), Ev(b2));
  };
  const Eigen::MatrixXd cand = mlp(E(s.candidate), p.vis_w1, p.vis_b1, p.vis_w2, p.vis_b2);
  const Eigen::MatrixXd ref = mlp(E(s.reference), p.vis_w1, p.vis_b1, p.vis_w2, p.vis_b2);
  const int len = 1 + 2 * n + (s.text ? 1 : 0);
  Eigen::MatrixXd X(len, d);
  X.row(0) = Ev(p.class_token);
  for (int k = 0; k < n; ++k) {
    X.row(1 + k) = cand.row(k) + E(p.role_embeddings).row(1) + E(p.temporal_embeddings).row(k);
    X.row(1 + n + k) = ref.row(k) + E(p.role_embeddings).row(2) + E(p.temporal_embeddings).row(k);
  }
  if (s.text) {
    Eigen::MatrixXd t(1, m.config.d_in);
    for (int i = 0; i < m.config.d_in; ++i) t(0, i) = (*s.text)[i];
    X.row(len - 1) = mlp(t, p.txt_w1, p.txt_b1, p.txt_w2, p.txt_b2).row(0) + E(p.role_embeddings).row(3);
  }
  const Eigen::MatrixXd Q = add_bias(X * E(p.wq).transpose(), Ev(p.bq));
  const Eigen::MatrixXd K = add_bias(X * E(p.wk).transpose(), Ev(p.bk));
  const Eigen::MatrixXd V = add_bias(X * E(p.wv).transpose(), Ev(p.bv));
  Eigen::MatrixXd ctx(len, d);
  for (int head = 0; head < h; ++head) {
    Eigen::MatrixXd a = Q.middleCols(head * dh, dh) * K.middleCols(head * dh, dh).transpose() / std::sqrt(double(dh));
    for (int r = 0; r < len; ++r) {
      a.row(r) = (a.row(r).array() - a.row(r).maxCoeff()).exp().matrix();
      a.row(r) /= a.row(r).sum();
    }
    ctx.middleCols(head * dh, dh) = a * V.middleCols(head * dh, dh);
  }
  const Eigen::MatrixXd attn = add_bias(ctx * E(p.wo).transpose(), Ev(p.bo));
  const Eigen::MatrixXd h1 = norm_rows(X + attn, p.ln1_gamma, p.ln1_beta, m.config.layer_norm_eps);
  const Eigen::MatrixXd f = add_bias(gelu(add_bias(h1 * E(p.ffn_w1).transpose(), Ev(p.ffn_b1))) * E(p.ffn_w2).transpose(), Ev(p.ffn_b2));
  const Eigen::MatrixXd out = norm_rows(h1 + f, p.ln2_gamma, p.ln2_beta, m.config.layer_norm_eps);
  return (out.row(0) * E(p.head_w).transpose())(0, 0) + p.head_b(0, 0);
}

}  // namespace

TEST(Config, Validation) {
  ModelConfig c;
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c.heads = 4;
  EXPECT_NO_THROW(c.validate());
  TrainingConfig t;
  t.learning_rate = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(Model, InitializationIsDeterministic) {
  const ModelConfig c;
  EXPECT_EQ(PreferenceModel::initialize(c, 3), PreferenceModel::initialize(c, 3));
  EXPECT_NE(PreferenceModel::initialize(c, 3), PreferenceModel::initialize(c, 4));
  const auto m = PreferenceModel::initialize(c, 3);
  for (double g : m.params.ln1_gamma.data) EXPECT_EQ(g, 1.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(c.d_in));
  for (double w : m.params.vis_w1.data) EXPECT_LE(std::abs(w), bound);
}

TEST(Tokens, LayoutAndShape) {
  ModelConfig c{3, 4, 1, 2, true, 1e-5};
  std::mt19937_64 rng(1);
  auto m = PreferenceModel::initialize(c, 1);
  auto s = random_sample(c, rng, true);
  const Matrix t = assemble_tokens(m, s);
  EXPECT_EQ(t.rows, 6);
  EXPECT_EQ(t.cols, 4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(t(0, i), m.params.class_token(0, i));
  s.text.reset();
  EXPECT_EQ(assemble_tokens(m, s).rows, 5);
  s.candidate = Matrix(3, 3);
  EXPECT_THROW(score(m, s), ConfigError);
}

TEST(Score, ZeroHeadGivesBias) {
  ModelConfig c{5, 8, 2, 3, true, 1e-5};
  std::mt19937_64 rng(2);
  auto m = PreferenceModel::initialize(c, 2);
  m.params.head_w.fill(0.0);
  m.params.head_b(0, 0) = 0.37;
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(score(m, random_sample(c, rng, i % 2)), 0.37);
}

TEST(Score, MatchesStraightLineForwardOnTinyModel) {
  ModelConfig c{3, 4, 1, 2, true, 1e-5};
  auto m = PreferenceModel::initialize(c, 0);
  int k = 0;
  for (Matrix* t : m.params.tensors()) {
    for (auto& v : t->data) v = 0.5 * std::sin(0.7 * ++k) + 0.1 * std::cos(1.3 * k);
  }
  PreferenceSample s;
  s.candidate = Matrix(2, 3);
  s.reference = Matrix(2, 3);
  s.candidate.data = {0.5, -1.0, 2.0, 1.5, 0.0, -0.5};
  s.reference.data = {-0.25, 0.75, 1.0, 0.0, 1.0, -1.5};
  s.text = std::vector<double>{0.3, -0.2, 0.9};
  EXPECT_NEAR(score(m, s), straight_line_score(m, s), 1e-12);
  s.text.reset();
  EXPECT_NEAR(score(m, s), straight_line_score(m, s), 1e-12);
}

TEST(Score, MatchesStraightLineForwardMultiHead) {
  ModelConfig c{6, 16, 4, 3, true, 1e-5};
  std::mt19937_64 rng(4);
  const auto m = PreferenceModel::initialize(c, 8);
  for (int i = 0; i < 5; ++i) {
    const auto s = random_sample(c, rng, i % 2);
    EXPECT_NEAR(score(m, s), straight_line_score(m, s), 1e-11);
  }
}

TEST(Score, CandidatesScoredIndependently) {
  ModelConfig c{4, 8, 2, 2, true, 1e-5};
  std::mt19937_64 rng(5);
  const auto m = PreferenceModel::initialize(c, 5);
  std::vector<PreferenceSample> cands;
  for (int i = 0; i < 4; ++i) cands.push_back(random_sample(c, rng, true));
  const auto a = select(m, std::vector<int>{1, 2, 3, 4}, cands);
  std::vector<PreferenceSample> rev(cands.rbegin(), cands.rend());
  const auto b = select(m, std::vector<int>{4, 3, 2, 1}, rev);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(a.probabilities[i], b.probabilities[3 - i]);
  EXPECT_EQ(a.prompt_id, b.prompt_id);
}

TEST(Bce, AnalyticValues) {
  const double s0[] = {0.0};
  const int y1[] = {1};
  EXPECT_NEAR(bce_loss(s0, y1), std::log(2.0), 1e-15);
  const double big[] = {50.0};
  EXPECT_LT(bce_loss(big, y1), 1e-20);
  EXPECT_THROW(bce_loss(std::span<const double>{}, std::span<const int>{}), EmptyBatchError);
}

TEST(Bce, MatchesNaiveFormula) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 4);
  std::vector<double> s(8);
  std::vector<int> y(8);
  double naive = 0;
  for (int i = 0; i < 8; ++i) {
    s[i] = n(rng);
    y[i] = static_cast<int>(rng() % 2);
    const double p = 1 / (1 + std::exp(-s[i]));
    naive -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
  }
  EXPECT_NEAR(bce_loss(s, y), naive, 1e-9);
}

TEST(Labels, StrictInequality) {
  const Box gt = Box::from_corners({0, 0, 10, 10});
  auto rec = [&](double h, int id) {
    return io::TrackRecord{"v", id, io::TrackKind::candidate_track, -1, {{1, Box::from_corners({0, 0, 10, h}), false, 0}}};
  };
  const BoxSequence g{"v", {{1, gt}}};
  EXPECT_EQ(make_labels({rec(8.0, 1)}, rec(7.5, 0), g), std::vector<int>{1});
  EXPECT_EQ(make_labels({rec(7.5, 1)}, rec(7.5, 0), g), std::vector<int>{0});
  std::vector<io::TrackRecord> five;
  const double hs[] = {1, 9, 7.5, 7.6, 3};
  for (int i = 0; i < 5; ++i) five.push_back(rec(hs[i], i + 1));
  const auto labels = make_labels(five, rec(7.5, 0), g);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(labels[i], hs[i] / 10 > 0.75 ? 1 : 0);
}

TEST(Sampling, EvenSpacing) {
  EXPECT_EQ(sample_frame_indices(5, 5), (std::vector<int>{1, 2, 3, 4, 5}));
  EXPECT_EQ(sample_frame_indices(7, 4), (std::vector<int>{1, 3, 5, 7}));
  EXPECT_EQ(sample_frame_indices(1, 3), (std::vector<int>{1, 1, 1}));
  EXPECT_THROW(sample_frame_indices(0, 3), EmptyVideoError);
  for (int t = 1; t < 40; ++t) {
    const auto idx = sample_frame_indices(t, 8);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(idx.front(), 1);
    EXPECT_EQ(idx.back(), t);
  }
}

TEST(Selection, Rule) {
  EXPECT_EQ(select_prompt(std::vector<int>{1, 2}, std::vector<double>{0.4, 0.45}), 0);
  EXPECT_EQ(select_prompt(std::vector<int>{1, 2}, std::vector<double>{0.6, 0.9}), 2);
  EXPECT_EQ(select_prompt(std::vector<int>{}, std::vector<double>{}), 0);
  EXPECT_EQ(select_prompt(std::vector<int>{3, 1}, std::vector<double>{0.7, 0.7}), 1);
  EXPECT_EQ(select_prompt(std::vector<int>{1}, std::vector<double>{0.5}), 0);
}

TEST(Selection, ArgmaxInvariantToHeadBiasShift) {
  ModelConfig c{4, 8, 2, 2, true, 1e-5};
  std::mt19937_64 rng(7);
  auto m = PreferenceModel::initialize(c, 7);
  std::vector<PreferenceSample> cands;
  for (int i = 0; i < 5; ++i) cands.push_back(random_sample(c, rng, false));
  const std::vector<int> ids{1, 2, 3, 4, 5};
  m.params.head_b(0, 0) = 20.0;  // every candidate passes the threshold
  const int high = select(m, ids, cands).prompt_id;
  m.params.head_b(0, 0) = 25.0;
  EXPECT_EQ(select(m, ids, cands).prompt_id, high);
  m.params.head_b(0, 0) = -40.0;
  EXPECT_EQ(select(m, ids, cands).prompt_id, 0);
  for (double p : select(m, ids, cands).probabilities) {
    EXPECT_GE(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(GradCheck, FullTinyModels) {
  std::mt19937_64 rng(8);
  for (int d : {4, 8}) {
    ModelConfig c{3, d, d == 4 ? 1 : 2, 2, true, 1e-5};
    const auto m = PreferenceModel::initialize(c, d);
    std::vector<PreferenceSample> s{random_sample(c, rng, true), random_sample(c, rng, false)};
    const auto r = grad_check(m, s);
    EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_tensor;
    EXPECT_EQ(r.per_tensor.size(), Parameters::names().size());
  }
}

TEST(GradCheck, LinearHeadOnly) {
  ModelConfig c{3, 4, 1, 2, false, 1e-5};
  std::mt19937_64 rng(9);
  const auto m = PreferenceModel::initialize(c, 9);
  const auto r = grad_check(m, {random_sample(c, rng, true)});
  EXPECT_LT(r.max_relative_error, 1e-8) << r.worst_tensor;
}

TEST(GradCheck, UnusedRoleEmbeddingsHaveZeroGradient) {
  ModelConfig c{3, 4, 1, 2, true, 1e-5};
  std::mt19937_64 rng(10);
  const auto m = PreferenceModel::initialize(c, 10);
  const std::vector<PreferenceSample> s{random_sample(c, rng, false)};
  for (std::size_t i = 0; i < 4; ++i) {
    // Row 0: classification role; row 3: text role with no text token.
    for (std::size_t row : {0u, 3u}) {
      const auto [analytic, numeric] = gradient_entry(m, s, "role_embeddings", row * 4 + i);
      EXPECT_EQ(analytic, 0.0);
      EXPECT_NEAR(numeric, 0.0, 1e-12);
    }
  }
  EXPECT_THROW(gradient_entry(m, s, "nope", 0), ConfigError);
}

TEST(Training, ZeroEpochsLeavesParameters) {
  ModelConfig c{3, 4, 1, 2, true, 1e-5};
  std::mt19937_64 rng(11);
  const auto m = PreferenceModel::initialize(c, 11);
  TrainingConfig t;
  t.epochs = 0;
  const auto r = train(m, {{"v", {random_sample(c, rng, true)}}}, t);
  EXPECT_EQ(r.model, m);
  EXPECT_TRUE(r.log.empty());
}

TEST(Training, SeparableSetIsLearned) {
  // The label is the sign of a fixed linear function of the candidate-minus-
  // reference mean token, with a unit margin.
  ModelConfig c{6, 16, 2, 4, true, 1e-5};
  std::mt19937_64 rng(12);
  std::normal_distribution<double> noise(0.0, 0.1);
  const std::vector<double> direction{0.5, -0.5, 0.5, 0.0, 0.5, -0.5};
  std::vector<VideoBatch> data;
  int correct_by_rule = 0;
  for (int v = 0; v < 200; ++v) {
    auto s = random_sample(c, rng, false);
    const double sign = (rng() % 2) ? 1.0 : -1.0;
    for (int r = 0; r < c.frames; ++r) {
      for (int i = 0; i < c.d_in; ++i) s.candidate(r, i) = s.reference(r, i) + sign * direction[i] + noise(rng);
    }
    double proj = 0;
    for (int r = 0; r < c.frames; ++r) {
      for (int i = 0; i < c.d_in; ++i) proj += direction[i] * (s.candidate(r, i) - s.reference(r, i));
    }
    s.label = proj > 0 ? 1 : 0;
    correct_by_rule += s.label == (sign > 0 ? 1 : 0);
    data.push_back({"v" + std::to_string(v), {std::move(s)}});
  }
  ASSERT_EQ(correct_by_rule, 200);
  TrainingConfig t;  // lr 1e-4, 50 epochs
  const auto r = train(PreferenceModel::initialize(c, 12), data, t);
  EXPECT_GE(r.log.back().train_acc, 0.95);
  EXPECT_LT(r.log.back().loss, r.log.front().loss);
}

TEST(Training, SameSeedSameParameters) {
  ModelConfig c{3, 8, 2, 2, true, 1e-5};
  std::mt19937_64 rng(13);
  std::vector<VideoBatch> data;
  for (int v = 0; v < 6; ++v) data.push_back({"v", {random_sample(c, rng, true), random_sample(c, rng, true)}});
  TrainingConfig t;
  t.epochs = 3;
  t.seed = 4;
  const auto a = train(PreferenceModel::initialize(c, 1), data, t);
  const auto b = train(PreferenceModel::initialize(c, 1), data, t);
  EXPECT_EQ(a.model, b.model);
}

TEST(Training, DivergenceIsReported) {
  ModelConfig c{3, 4, 1, 2, true, 1e-5};
  std::mt19937_64 rng(14);
  auto s = random_sample(c, rng, false);
  s.candidate(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train(PreferenceModel::initialize(c, 1), {{"v", {s}}}, TrainingConfig{}), DivergenceError);
}

TEST(Checkpoint, RoundTrip) {
  ModelConfig c{5, 8, 2, 3, true, 1e-5};
  const auto m = PreferenceModel::initialize(c, 15);
  std::stringstream s;
  save_checkpoint(s, m);
  EXPECT_EQ(load_checkpoint(s), m);
  std::istringstream bad("{\"schema\":1,\"kind\":\"other\"}\n");
  EXPECT_ANY_THROW(load_checkpoint(bad));
}

TEST(OracleScorer, NeverWorseThanReference) {
  // sigma_i := 1 when the candidate beats the reference, else 0.
  std::mt19937_64 rng(16);
  const BoxSequence g{"v", {{1, Box::from_corners({0, 0, 10, 10})}, {2, Box::from_corners({0, 0, 10, 10})}}};
  for (int trial = 0; trial < 100; ++trial) {
    auto rec = [&](int id) {
      io::TrackRecord r{"v", id, io::TrackKind::candidate_track, -1, {}};
      for (int f = 1; f <= 2; ++f) r.frames.push_back({f, Box::from_corners({0, 0, 10, 1.0 + rng() % 10}), false, 0});
      return r;
    };
    const auto ref = rec(0);
    std::vector<io::TrackRecord> cands;
    std::vector<int> ids;
    for (int i = 1; i <= 4; ++i) {
      cands.push_back(rec(i));
      ids.push_back(i);
    }
    std::vector<double> probs;
    for (int y : make_labels(cands, ref, g)) probs.push_back(y);
    const int chosen = select_prompt(ids, probs);
    const auto& pick = chosen == 0 ? ref : cands[chosen - 1];
    EXPECT_GE(box_miou(pick.to_sequence(), g), box_miou(ref.to_sequence(), g));
  }
}
