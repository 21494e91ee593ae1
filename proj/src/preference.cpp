#include "tenet/preference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "tenet/errors.hpp"
#include "tenet/random.hpp"
#include "tenet/record_json.hpp"

namespace tenet::preference {

void ModelConfig::validate() const {
  if (d_in < 1 || d_model < 1 || heads < 1 || frames < 1) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
}

Parameters Parameters::zeros(const ModelConfig& c) {
  const int d = c.d_model;
  const int f = 4 * d;
  Parameters p;
  p.class_token = Matrix(1, d);
  p.vis_w1 = Matrix(d, c.d_in);
  p.vis_b1 = Matrix(1, d);
  p.vis_w2 = Matrix(d, d);
  p.vis_b2 = Matrix(1, d);
  p.txt_w1 = Matrix(d, c.d_in);
  p.txt_b1 = Matrix(1, d);
  p.txt_w2 = Matrix(d, d);
  p.txt_b2 = Matrix(1, d);
  p.role_embeddings = Matrix(4, d);
  p.temporal_embeddings = Matrix(c.frames, d);
  for (Matrix* m : {&p.wq, &p.wk, &p.wv, &p.wo}) *m = Matrix(d, d);
  for (Matrix* m : {&p.bq, &p.bk, &p.bv, &p.bo}) *m = Matrix(1, d);
  p.ln1_gamma = Matrix(1, d);
  p.ln1_beta = Matrix(1, d);
  p.ffn_w1 = Matrix(f, d);
  p.ffn_b1 = Matrix(1, f);
  p.ffn_w2 = Matrix(d, f);
  p.ffn_b2 = Matrix(1, d);
  p.ln2_gamma = Matrix(1, d);
  p.ln2_beta = Matrix(1, d);
  p.head_w = Matrix(1, d);
  p.head_b = Matrix(1, 1);
  return p;
}

std::vector<Matrix*> Parameters::tensors() {
  std::vector<Matrix*> out;
  visit(*this, [&](const char*, Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<const Matrix*> Parameters::tensors() const {
  std::vector<const Matrix*> out;
  visit(*this, [&](const char*, const Matrix& m) { out.push_back(&m); });
  return out;
}

std::vector<std::string> Parameters::names() {
  std::vector<std::string> out;
  Parameters empty;
  visit(empty, [&](const char* name, Matrix&) { out.emplace_back(name); });
  return out;
}

PreferenceModel PreferenceModel::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  PreferenceModel model{config, Parameters::zeros(config)};
  auto rng = make_stream(seed, "preference.init");
  auto& p = model.params;

  auto uniform_linear = [&](Matrix& w, Matrix& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& x : w.data) x = dist(rng);
    for (auto& x : b.data) x = dist(rng);
  };
  std::normal_distribution<double> normal(0.0, 0.02);
  auto gaussian = [&](Matrix& m) {
    for (auto& x : m.data) x = normal(rng);
  };

  gaussian(p.class_token);
  uniform_linear(p.vis_w1, p.vis_b1);
  uniform_linear(p.vis_w2, p.vis_b2);
  uniform_linear(p.txt_w1, p.txt_b1);
  uniform_linear(p.txt_w2, p.txt_b2);
  gaussian(p.role_embeddings);
  gaussian(p.temporal_embeddings);
  uniform_linear(p.wq, p.bq);
  uniform_linear(p.wk, p.bk);
  uniform_linear(p.wv, p.bv);
  uniform_linear(p.wo, p.bo);
  p.ln1_gamma.fill(1.0);
  uniform_linear(p.ffn_w1, p.ffn_b1);
  uniform_linear(p.ffn_w2, p.ffn_b2);
  p.ln2_gamma.fill(1.0);
  uniform_linear(p.head_w, p.head_b);
  return model;
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// out = in * W^T + b for every row of `in`.
Matrix linear(const Matrix& in, const Matrix& w, const Matrix& b) {
  Matrix out(in.rows, w.rows);
  for (int r = 0; r < in.rows; ++r) {
    const double* x = in.row(r);
    double* y = out.row(r);
    for (int o = 0; o < w.rows; ++o) {
      const double* wr = w.row(o);
      double acc = b.data[o];
      for (int i = 0; i < w.cols; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

// Backward of `linear`. Accumulates into dw/db; returns d(in) if wanted.
void linear_backward(const Matrix& in, const Matrix& w, const Matrix& dout, Matrix& dw,
                     Matrix& db, Matrix* din) {
  if (din) *din = Matrix(in.rows, in.cols);
  for (int r = 0; r < in.rows; ++r) {
    const double* x = in.row(r);
    const double* g = dout.row(r);
    for (int o = 0; o < w.rows; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      db.data[o] += go;
      double* dwr = dw.row(o);
      for (int i = 0; i < w.cols; ++i) dwr[i] += go * x[i];
      if (din) {
        const double* wr = w.row(o);
        double* dx = din->row(r);
        for (int i = 0; i < w.cols; ++i) dx[i] += go * wr[i];
      }
    }
  }
}

Matrix apply_gelu(const Matrix& m) {
  Matrix out = m;
  for (auto& x : out.data) x = gelu(x);
  return out;
}

struct MlpCache {
  Matrix input, hidden, activated, output;
};

MlpCache mlp_forward(const Matrix& input, const Matrix& w1, const Matrix& b1, const Matrix& w2,
                     const Matrix& b2) {
  MlpCache c;
  c.input = input;
  c.hidden = linear(input, w1, b1);
  c.activated = apply_gelu(c.hidden);
  c.output = linear(c.activated, w2, b2);
  return c;
}

void mlp_backward(const MlpCache& c, const Matrix& w1, const Matrix& w2, const Matrix& dout,
                  Matrix& dw1, Matrix& db1, Matrix& dw2, Matrix& db2) {
  Matrix dact;
  linear_backward(c.activated, w2, dout, dw2, db2, &dact);
  for (std::size_t i = 0; i < dact.data.size(); ++i) dact.data[i] *= gelu_grad(c.hidden.data[i]);
  linear_backward(c.input, w1, dact, dw1, db1, nullptr);
}

struct NormCache {
  std::vector<double> normalized;
  double inv_std = 0.0;
};

std::vector<double> layer_norm(const std::vector<double>& x, const Matrix& gamma,
                               const Matrix& beta, double eps, NormCache& cache) {
  const std::size_t n = x.size();
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  cache.inv_std = 1.0 / std::sqrt(var + eps);
  cache.normalized.resize(n);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    cache.normalized[i] = (x[i] - mean) * cache.inv_std;
    y[i] = gamma.data[i] * cache.normalized[i] + beta.data[i];
  }
  return y;
}

std::vector<double> layer_norm_backward(const NormCache& c, const Matrix& gamma,
                                        const std::vector<double>& dy, Matrix& dgamma,
                                        Matrix& dbeta) {
  const std::size_t n = dy.size();
  std::vector<double> dxhat(n);
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dgamma.data[i] += dy[i] * c.normalized[i];
    dbeta.data[i] += dy[i];
    dxhat[i] = dy[i] * gamma.data[i];
    mean_dxhat += dxhat[i];
    mean_dxhat_xhat += dxhat[i] * c.normalized[i];
  }
  mean_dxhat /= static_cast<double>(n);
  mean_dxhat_xhat /= static_cast<double>(n);
  std::vector<double> dx(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] = c.inv_std * (dxhat[i] - mean_dxhat - c.normalized[i] * mean_dxhat_xhat);
  }
  return dx;
}

std::vector<double> linear_vec(const std::vector<double>& x, const Matrix& w, const Matrix& b) {
  std::vector<double> y(w.rows);
  for (int o = 0; o < w.rows; ++o) {
    const double* wr = w.row(o);
    double acc = b.data[o];
    for (int i = 0; i < w.cols; ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
  return y;
}

std::vector<double> linear_vec_backward(const std::vector<double>& x, const Matrix& w,
                                        const std::vector<double>& dy, Matrix& dw, Matrix& db) {
  std::vector<double> dx(w.cols, 0.0);
  for (int o = 0; o < w.rows; ++o) {
    const double g = dy[o];
    db.data[o] += g;
    double* dwr = dw.row(o);
    const double* wr = w.row(o);
    for (int i = 0; i < w.cols; ++i) {
      dwr[i] += g * x[i];
      dx[i] += g * wr[i];
    }
  }
  return dx;
}

// Only the classification-token output feeds the head, so the encoder is
// evaluated along that row: keys and values for every token, the query,
// residuals, norms and feed-forward for row 0 only.
struct EncoderCache {
  Matrix tokens;
  Matrix keys, values;
  std::vector<double> query;
  Matrix attention;  // heads x L
  std::vector<double> context, attended;
  NormCache norm1;
  std::vector<double> hidden1;
  std::vector<double> ffn_hidden, ffn_activated, ffn_out;
  NormCache norm2;
  std::vector<double> output;
};

double encoder_forward(const PreferenceModel& model, const Matrix& tokens, EncoderCache& c) {
  const auto& p = model.params;
  const auto& cfg = model.config;
  c.tokens = tokens;
  std::vector<double> z(tokens.row(0), tokens.row(0) + tokens.cols);
  if (!cfg.use_encoder) {
    c.output = z;
    return linear_vec(z, p.head_w, p.head_b)[0];
  }
  const int d = cfg.d_model;
  const int heads = cfg.heads;
  const int dh = d / heads;
  const int len = tokens.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  c.keys = linear(tokens, p.wk, p.bk);
  c.values = linear(tokens, p.wv, p.bv);
  c.query = linear_vec(z, p.wq, p.bq);
  c.attention = Matrix(heads, len);
  c.context.assign(d, 0.0);
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    double* a = c.attention.row(h);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < len; ++j) {
      double s = 0.0;
      for (int k = 0; k < dh; ++k) s += c.query[off + k] * c.keys(j, off + k);
      a[j] = s * scale;
      max_logit = std::max(max_logit, a[j]);
    }
    double total = 0.0;
    for (int j = 0; j < len; ++j) {
      a[j] = std::exp(a[j] - max_logit);
      total += a[j];
    }
    for (int j = 0; j < len; ++j) {
      a[j] /= total;
      for (int k = 0; k < dh; ++k) c.context[off + k] += a[j] * c.values(j, off + k);
    }
  }
  c.attended = linear_vec(c.context, p.wo, p.bo);

  std::vector<double> residual1(d);
  for (int i = 0; i < d; ++i) residual1[i] = z[i] + c.attended[i];
  c.hidden1 = layer_norm(residual1, p.ln1_gamma, p.ln1_beta, cfg.layer_norm_eps, c.norm1);

  c.ffn_hidden = linear_vec(c.hidden1, p.ffn_w1, p.ffn_b1);
  c.ffn_activated.resize(c.ffn_hidden.size());
  for (std::size_t i = 0; i < c.ffn_hidden.size(); ++i) c.ffn_activated[i] = gelu(c.ffn_hidden[i]);
  c.ffn_out = linear_vec(c.ffn_activated, p.ffn_w2, p.ffn_b2);

  std::vector<double> residual2(d);
  for (int i = 0; i < d; ++i) residual2[i] = c.hidden1[i] + c.ffn_out[i];
  c.output = layer_norm(residual2, p.ln2_gamma, p.ln2_beta, cfg.layer_norm_eps, c.norm2);
  return linear_vec(c.output, p.head_w, p.head_b)[0];
}

// Returns d(loss)/d(tokens).
Matrix encoder_backward(const PreferenceModel& model, const EncoderCache& c, double dscore,
                        Parameters& g) {
  const auto& p = model.params;
  const auto& cfg = model.config;
  Matrix dtokens(c.tokens.rows, c.tokens.cols);
  const std::vector<double> dout =
      linear_vec_backward(c.output, p.head_w, {dscore}, g.head_w, g.head_b);
  if (!cfg.use_encoder) {
    for (int i = 0; i < dtokens.cols; ++i) dtokens(0, i) = dout[i];
    return dtokens;
  }
  const int d = cfg.d_model;
  const int heads = cfg.heads;
  const int dh = d / heads;
  const int len = c.tokens.rows;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const std::vector<double> dres2 = layer_norm_backward(c.norm2, p.ln2_gamma, dout, g.ln2_gamma, g.ln2_beta);
  std::vector<double> dffn_act = linear_vec_backward(c.ffn_activated, p.ffn_w2, dres2, g.ffn_w2, g.ffn_b2);
  for (std::size_t i = 0; i < dffn_act.size(); ++i) dffn_act[i] *= gelu_grad(c.ffn_hidden[i]);
  std::vector<double> dhidden1 = linear_vec_backward(c.hidden1, p.ffn_w1, dffn_act, g.ffn_w1, g.ffn_b1);
  for (int i = 0; i < d; ++i) dhidden1[i] += dres2[i];

  const std::vector<double> dres1 = layer_norm_backward(c.norm1, p.ln1_gamma, dhidden1, g.ln1_gamma, g.ln1_beta);
  for (int i = 0; i < d; ++i) dtokens(0, i) += dres1[i];
  const std::vector<double> dcontext = linear_vec_backward(c.context, p.wo, dres1, g.wo, g.bo);

  Matrix dkeys(len, d), dvalues(len, d);
  std::vector<double> dquery(d, 0.0);
  std::vector<double> dattn(len);
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    const double* a = c.attention.row(h);
    double weighted = 0.0;
    for (int j = 0; j < len; ++j) {
      double s = 0.0;
      for (int k = 0; k < dh; ++k) {
        s += dcontext[off + k] * c.values(j, off + k);
        dvalues(j, off + k) += a[j] * dcontext[off + k];
      }
      dattn[j] = s;
      weighted += a[j] * s;
    }
    for (int j = 0; j < len; ++j) {
      const double dlogit = a[j] * (dattn[j] - weighted) * scale;
      for (int k = 0; k < dh; ++k) {
        dquery[off + k] += dlogit * c.keys(j, off + k);
        dkeys(j, off + k) += dlogit * c.query[off + k];
      }
    }
  }

  std::vector<double> z(c.tokens.row(0), c.tokens.row(0) + c.tokens.cols);
  const std::vector<double> dz = linear_vec_backward(z, p.wq, dquery, g.wq, g.bq);
  for (int i = 0; i < d; ++i) dtokens(0, i) += dz[i];
  Matrix dfrom_keys, dfrom_values;
  linear_backward(c.tokens, p.wk, dkeys, g.wk, g.bk, &dfrom_keys);
  linear_backward(c.tokens, p.wv, dvalues, g.wv, g.bv, &dfrom_values);
  for (std::size_t i = 0; i < dtokens.data.size(); ++i) {
    dtokens.data[i] += dfrom_keys.data[i] + dfrom_values.data[i];
  }
  return dtokens;
}

struct InputCache {
  MlpCache candidate, reference;
  std::optional<MlpCache> text;
};

void check_sample(const ModelConfig& cfg, const PreferenceSample& s) {
  auto fail = [](const std::string& what) { throw ConfigError("sample shape mismatch: " + what); };
  if (s.candidate.rows != cfg.frames || s.candidate.cols != cfg.d_in) {
    fail("candidate tokens are " + std::to_string(s.candidate.rows) + "x" +
         std::to_string(s.candidate.cols) + ", model expects " + std::to_string(cfg.frames) + "x" +
         std::to_string(cfg.d_in));
  }
  if (s.reference.rows != cfg.frames || s.reference.cols != cfg.d_in) {
    fail("reference tokens are " + std::to_string(s.reference.rows) + "x" +
         std::to_string(s.reference.cols));
  }
  if (s.text && static_cast<int>(s.text->size()) != cfg.d_in) fail("text token dimension");
}

Matrix assemble(const PreferenceModel& model, const PreferenceSample& s, InputCache& c) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  check_sample(cfg, s);
  const int n = cfg.frames;
  const int d = cfg.d_model;
  c.candidate = mlp_forward(s.candidate, p.vis_w1, p.vis_b1, p.vis_w2, p.vis_b2);
  c.reference = mlp_forward(s.reference, p.vis_w1, p.vis_b1, p.vis_w2, p.vis_b2);
  if (s.text) {
    Matrix t(1, cfg.d_in);
    std::copy(s.text->begin(), s.text->end(), t.data.begin());
    c.text = mlp_forward(t, p.txt_w1, p.txt_b1, p.txt_w2, p.txt_b2);
  } else {
    c.text.reset();
  }

  Matrix tokens(1 + 2 * n + (s.text ? 1 : 0), d);
  std::copy(p.class_token.data.begin(), p.class_token.data.end(), tokens.row(0));
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < d; ++i) {
      tokens(1 + k, i) = c.candidate.output(k, i) + p.role_embeddings(kRoleCandidate, i) +
                         p.temporal_embeddings(k, i);
      tokens(1 + n + k, i) = c.reference.output(k, i) + p.role_embeddings(kRoleReference, i) +
                             p.temporal_embeddings(k, i);
    }
  }
  if (c.text) {
    for (int i = 0; i < d; ++i) {
      tokens(1 + 2 * n, i) = c.text->output(0, i) + p.role_embeddings(kRoleText, i);
    }
  }
  return tokens;
}

void assemble_backward(const PreferenceModel& model, const InputCache& c, const Matrix& dtokens,
                       Parameters& g) {
  const auto& p = model.params;
  const int n = model.config.frames;
  const int d = model.config.d_model;
  for (int i = 0; i < d; ++i) g.class_token.data[i] += dtokens(0, i);
  Matrix dcand(n, d), dref(n, d);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < d; ++i) {
      const double gc = dtokens(1 + k, i);
      const double gr = dtokens(1 + n + k, i);
      dcand(k, i) = gc;
      dref(k, i) = gr;
      g.role_embeddings(kRoleCandidate, i) += gc;
      g.role_embeddings(kRoleReference, i) += gr;
      g.temporal_embeddings(k, i) += gc + gr;
    }
  }
  mlp_backward(c.candidate, p.vis_w1, p.vis_w2, dcand, g.vis_w1, g.vis_b1, g.vis_w2, g.vis_b2);
  mlp_backward(c.reference, p.vis_w1, p.vis_w2, dref, g.vis_w1, g.vis_b1, g.vis_w2, g.vis_b2);
  if (c.text) {
    Matrix dtext(1, d);
    for (int i = 0; i < d; ++i) {
      dtext(0, i) = dtokens(1 + 2 * n, i);
      g.role_embeddings(kRoleText, i) += dtext(0, i);
    }
    mlp_backward(*c.text, p.txt_w1, p.txt_w2, dtext, g.txt_w1, g.txt_b1, g.txt_w2, g.txt_b2);
  }
}

}  // namespace

Matrix assemble_tokens(const PreferenceModel& model, const PreferenceSample& sample) {
  InputCache cache;
  return assemble(model, sample, cache);
}

double score_tokens(const PreferenceModel& model, const Matrix& tokens) {
  if (tokens.rows < 1 || tokens.cols != model.config.d_model) {
    throw ConfigError("token matrix width does not match d_model");
  }
  EncoderCache cache;
  return encoder_forward(model, tokens, cache);
}

double score(const PreferenceModel& model, const PreferenceSample& sample) {
  return score_tokens(model, assemble_tokens(model, sample));
}

double score_backward(const PreferenceModel& model, const PreferenceSample& sample, double dscore,
                      Parameters& grads) {
  InputCache input;
  const Matrix tokens = assemble(model, sample, input);
  EncoderCache enc;
  const double s = encoder_forward(model, tokens, enc);
  const Matrix dtokens = encoder_backward(model, enc, dscore, grads);
  assemble_backward(model, input, dtokens, grads);
  return s;
}

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

namespace {

double bce_term(double s, int y) {
  return std::max(s, 0.0) - s * static_cast<double>(y) + std::log1p(std::exp(-std::abs(s)));
}

}  // namespace

double bce_loss(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw EmptyBatchError("bce_loss on an empty batch");
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) total += bce_term(scores[i], labels[i]);
  return total;
}

std::vector<int> make_labels(const std::vector<io::TrackRecord>& candidates,
                             const io::TrackRecord& reference, const BoxSequence& gt) {
  const double ref = box_miou(reference.to_sequence(), gt);
  std::vector<int> labels;
  labels.reserve(candidates.size());
  for (const auto& c : candidates) labels.push_back(box_miou(c.to_sequence(), gt) > ref ? 1 : 0);
  return labels;
}

std::vector<int> sample_frame_indices(int num_frames, int count) {
  if (num_frames < 1) throw EmptyVideoError("cannot sample frames from an empty video");
  if (count < 1) throw ConfigError("sample count must be positive");
  std::vector<int> out(count, 1);
  if (count == 1) return out;
  for (int k = 0; k < count; ++k) {
    const double pos = static_cast<double>(k) * (num_frames - 1) / (count - 1);
    out[k] = 1 + static_cast<int>(std::floor(pos + 0.5));
  }
  return out;
}

Matrix sample_track_tokens(const io::FeatureRecord& features, int count) {
  const int frames = static_cast<int>(features.vectors.size());
  const auto idx = sample_frame_indices(frames, count);
  Matrix out(count, static_cast<int>(features.dim()));
  for (int k = 0; k < count; ++k) {
    const auto& v = features.vectors[idx[k] - 1];
    std::copy(v.begin(), v.end(), out.row(k));
  }
  return out;
}

namespace {

// Loss and gradient of one video's summed BCE.
double video_loss_and_grad(const PreferenceModel& model, const std::vector<PreferenceSample>& samples,
                           Parameters& grads, std::vector<double>* scores = nullptr) {
  double loss = 0.0;
  for (const auto& s : samples) {
    InputCache input;
    const Matrix tokens = assemble(model, s, input);
    EncoderCache enc;
    const double raw = encoder_forward(model, tokens, enc);
    const Matrix dtokens = encoder_backward(model, enc, sigmoid(raw) - s.label, grads);
    assemble_backward(model, input, dtokens, grads);
    loss += bce_term(raw, s.label);
    if (scores) scores->push_back(raw);
  }
  return loss;
}

double total_loss(const PreferenceModel& model, const std::vector<PreferenceSample>& samples) {
  double loss = 0.0;
  for (const auto& s : samples) loss += bce_term(score(model, s), s.label);
  return loss;
}

}  // namespace

TrainResult train(PreferenceModel model, const std::vector<VideoBatch>& data,
                  const TrainingConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  model.config.validate();
  TrainResult result;
  auto rng = make_stream(config.seed, "preference.train");

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].samples.empty()) order.push_back(i);
  }

  Parameters m1 = Parameters::zeros(model.config);
  Parameters m2 = Parameters::zeros(model.config);
  auto params = model.params.tensors();
  auto first = m1.tensors();
  auto second = m2.tensors();
  long long step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t vi : order) {
      const auto& batch = data[vi];
      Parameters grads = Parameters::zeros(model.config);
      std::vector<double> scores;
      const double loss = video_loss_and_grad(model, batch.samples, grads, &scores);
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step + 1) + " (video '" + batch.video_id + "')");
      }
      loss_sum += loss;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        correct += ((sigmoid(scores[i]) > 0.5) == (batch.samples[i].label == 1)) ? 1 : 0;
      }
      seen += scores.size();

      ++step;
      const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      auto g = grads.tensors();
      for (std::size_t t = 0; t < params.size(); ++t) {
        auto& w = params[t]->data;
        auto& a = first[t]->data;
        auto& b = second[t]->data;
        const auto& gt = g[t]->data;
        for (std::size_t i = 0; i < w.size(); ++i) {
          a[i] = config.beta1 * a[i] + (1.0 - config.beta1) * gt[i];
          b[i] = config.beta2 * b[i] + (1.0 - config.beta2) * gt[i] * gt[i];
          w[i] -= config.learning_rate * (a[i] / bias1) / (std::sqrt(b[i] / bias2) + config.epsilon);
        }
      }
    }
    EpochLog entry{epoch, order.empty() ? 0.0 : loss_sum / static_cast<double>(order.size()),
                   seen == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(seen)};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.model = std::move(model);
  return result;
}

namespace {

std::size_t locate(const std::string& tensor) {
  const auto names = Parameters::names();
  auto it = std::find(names.begin(), names.end(), tensor);
  if (it == names.end()) throw ConfigError("unknown parameter tensor '" + tensor + "'");
  return static_cast<std::size_t>(it - names.begin());
}

double numeric_derivative(const PreferenceModel& model, const std::vector<PreferenceSample>& samples,
                          std::size_t tensor, std::size_t index, double step) {
  PreferenceModel probe = model;
  double& w = probe.params.tensors()[tensor]->data[index];
  const double original = w;
  w = original + step;
  const double plus = total_loss(probe, samples);
  w = original - step;
  const double minus = total_loss(probe, samples);
  return (plus - minus) / (2.0 * step);
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-2});
}

}  // namespace

std::pair<double, double> gradient_entry(const PreferenceModel& model,
                                         const std::vector<PreferenceSample>& samples,
                                         const std::string& tensor, std::size_t index, double step) {
  const std::size_t t = locate(tensor);
  Parameters grads = Parameters::zeros(model.config);
  video_loss_and_grad(model, samples, grads);
  const auto& g = *grads.tensors()[t];
  if (index >= g.size()) throw ConfigError("parameter index out of range");
  return {g.data[index], numeric_derivative(model, samples, t, index, step)};
}

GradCheckReport grad_check(const PreferenceModel& model, const std::vector<PreferenceSample>& samples,
                           double step, int max_entries) {
  if (samples.empty()) throw EmptyBatchError("grad_check needs at least one sample");
  Parameters grads = Parameters::zeros(model.config);
  video_loss_and_grad(model, samples, grads);
  const auto names = Parameters::names();
  const auto analytic = grads.tensors();

  GradCheckReport report;
  for (std::size_t t = 0; t < names.size(); ++t) {
    const std::size_t size = analytic[t]->size();
    const std::size_t count = std::min<std::size_t>(size, static_cast<std::size_t>(max_entries));
    double worst = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t index = k * size / count;
      const double numeric = numeric_derivative(model, samples, t, index, step);
      worst = std::max(worst, relative_error(analytic[t]->data[index], numeric));
    }
    report.per_tensor.emplace_back(names[t], worst);
    if (worst >= report.max_relative_error) {
      report.max_relative_error = worst;
      report.worst_tensor = names[t];
    }
  }
  return report;
}

int select_prompt(std::span<const int> prompt_ids, std::span<const double> probabilities) {
  if (prompt_ids.size() != probabilities.size()) {
    throw DimensionError("prompt ids and probabilities differ in length");
  }
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (!best || probabilities[i] > probabilities[*best] ||
        (probabilities[i] == probabilities[*best] && prompt_ids[i] < prompt_ids[*best])) {
      best = i;
    }
  }
  if (best && probabilities[*best] > 0.5) return prompt_ids[*best];
  return 0;
}

Selection select(const PreferenceModel& model, std::span<const int> prompt_ids,
                 const std::vector<PreferenceSample>& candidates) {
  if (prompt_ids.size() != candidates.size()) {
    throw DimensionError("prompt ids and candidates differ in length");
  }
  Selection out;
  for (const auto& c : candidates) out.probabilities.push_back(sigmoid(score(model, c)));
  out.prompt_id = select_prompt(prompt_ids, out.probabilities);
  return out;
}

void save_checkpoint(std::ostream& out, const PreferenceModel& model) {
  io::Json header;
  header["schema"] = io::kSchemaVersion;
  header["kind"] = "preference_model";
  header["config"] = {{"d_in", model.config.d_in},
                      {"d_model", model.config.d_model},
                      {"heads", model.config.heads},
                      {"frames", model.config.frames},
                      {"use_encoder", model.config.use_encoder},
                      {"layer_norm_eps", model.config.layer_norm_eps}};
  out << header.dump() << '\n';
  Parameters::visit(model.params, [&](const char* name, const Matrix& m) {
    io::Json j;
    j["schema"] = io::kSchemaVersion;
    j["name"] = name;
    j["shape"] = {m.rows, m.cols};
    j["data"] = m.data;
    out << j.dump() << '\n';
  });
}

void save_checkpoint(const std::string& path, const PreferenceModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write '" + path + "'");
  save_checkpoint(out, model);
}

PreferenceModel load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty checkpoint");
  PreferenceModel model;
  try {
    const auto header = io::Json::parse(line);
    if (header.at("schema").get<int>() != io::kSchemaVersion ||
        header.at("kind").get<std::string>() != "preference_model") {
      throw ParseError("not a preference model checkpoint");
    }
    const auto& c = header.at("config");
    model.config.d_in = c.at("d_in").get<int>();
    model.config.d_model = c.at("d_model").get<int>();
    model.config.heads = c.at("heads").get<int>();
    model.config.frames = c.at("frames").get<int>();
    model.config.use_encoder = c.at("use_encoder").get<bool>();
    model.config.layer_norm_eps = c.at("layer_norm_eps").get<double>();
    model.config.validate();
    model.params = Parameters::zeros(model.config);

    std::size_t loaded = 0;
    int line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto j = io::Json::parse(line);
      const auto name = j.at("name").get<std::string>();
      bool found = false;
      Parameters::visit(model.params, [&](const char* n, Matrix& m) {
        if (name != n) return;
        found = true;
        const auto shape = j.at("shape").get<std::vector<int>>();
        auto data = j.at("data").get<std::vector<double>>();
        if (shape.size() != 2 || shape[0] != m.rows || shape[1] != m.cols || data.size() != m.size()) {
          throw DimensionError("checkpoint tensor '" + name + "' has the wrong shape");
        }
        m.data = std::move(data);
      });
      if (!found) throw ParseError("line " + std::to_string(line_no) + ": unknown tensor '" + name + "'");
      ++loaded;
    }
    if (loaded != Parameters::names().size()) throw ParseError("checkpoint is missing tensors");
  } catch (const io::Json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
  return model;
}

PreferenceModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace tenet::preference
