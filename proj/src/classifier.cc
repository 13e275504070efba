#include "attenmia/classifier.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attenmia/error.h"
#include "attenmia/parallel.h"
#include "attenmia/rng.h"
#include "json.hpp"

namespace attenmia {

using ordered_json = nlohmann::ordered_json;

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Binary cross-entropy of a logit, numerically stable.
double bce_logit(double z, int y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

Gradients zero_gradients(const MlpModel& m) {
  Gradients g;
  for (const auto& l : m.layers) {
    g.dw.emplace_back(l.w.size(), 0.0);
    g.db.emplace_back(l.b.size(), 0.0);
  }
  return g;
}

// Accumulates the gradient of one standardized sample into `grad`; returns
// its loss.
double backprop(const MlpModel& m, std::span<const double> x, int y, Gradients& grad,
                std::vector<std::vector<double>>& acts) {
  const std::size_t L = m.layers.size();
  acts.resize(L + 1);
  acts[0].assign(x.begin(), x.end());
  for (std::size_t k = 0; k < L; ++k) {
    const DenseLayer& layer = m.layers[k];
    auto& out = acts[k + 1];
    out.assign(layer.out, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      double s = layer.b[o];
      const double* w = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) s += w[i] * acts[k][i];
      out[o] = (k + 1 < L) ? std::max(0.0, s) : s;
    }
  }
  const double z = acts[L][0];
  const double loss = bce_logit(z, y);

  std::vector<double> delta = {sigmoid(z) - y};
  for (std::size_t k = L; k-- > 0;) {
    const DenseLayer& layer = m.layers[k];
    auto& dw = grad.dw[k];
    auto& db = grad.db[k];
    std::vector<double> prev(layer.in, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      db[o] += d;
      const double* w = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      double* gw = dw.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) {
        gw[i] += d * acts[k][i];
        prev[i] += d * w[i];
      }
    }
    if (k > 0) {
      for (int i = 0; i < layer.in; ++i) {
        if (acts[k][i] <= 0.0) prev[i] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  return loss;
}

struct AdamState {
  std::vector<std::vector<double>> mw, vw, mb, vb;
  long step = 0;
};

void adam_update(MlpModel& m, const Gradients& g, double scale, const TrainConfig& c,
                 AdamState& st) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  auto apply = [&](std::vector<double>& p, const std::vector<double>& grad,
                   std::vector<double>& mom, std::vector<double>& vel) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = grad[i] * scale;
      mom[i] = c.beta1 * mom[i] + (1.0 - c.beta1) * gi;
      vel[i] = c.beta2 * vel[i] + (1.0 - c.beta2) * gi * gi;
      p[i] -= c.learning_rate * (mom[i] / bc1) / (std::sqrt(vel[i] / bc2) + c.adam_eps);
    }
  };
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    apply(m.layers[k].w, g.dw[k], st.mw[k], st.vw[k]);
    apply(m.layers[k].b, g.db[k], st.mb[k], st.vb[k]);
  }
}

double mean_loss(const MlpModel& m, const std::vector<std::vector<double>>& x,
                 std::span<const std::size_t> rows, std::span<const int> labels) {
  double s = 0.0;
  for (std::size_t r : rows) s += bce_logit(forward_logit(m, x[r]), labels[r]);
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

}  // namespace

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size() + l.b.size();
  return n;
}

MlpModel init_mlp(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2 || layer_sizes.back() != 1) {
    fail(ErrorCode::kInvalidArgument, "MLP needs an input size and a single output");
  }
  for (int s : layer_sizes) {
    if (s <= 0) fail(ErrorCode::kInvalidArgument, "MLP layer sizes must be positive");
  }
  MlpModel m;
  m.layer_sizes = layer_sizes;
  m.seed = seed;
  Rng rng(seed);
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    DenseLayer l;
    l.in = layer_sizes[k];
    l.out = layer_sizes[k + 1];
    const double bound = std::sqrt(6.0 / l.in);
    l.w.resize(static_cast<std::size_t>(l.in) * l.out);
    for (double& w : l.w) w = rng.uniform(-bound, bound);
    l.b.assign(l.out, 0.0);
    m.layers.push_back(std::move(l));
  }
  m.mean.assign(layer_sizes.front(), 0.0);
  m.stddev.assign(layer_sizes.front(), 1.0);
  return m;
}

void TrainConfig::validate() const {
  if (folds < 2) fail(ErrorCode::kInvalidArgument, "folds must be at least 2");
  if (max_epochs < 0 || batch_size <= 0 || !(learning_rate > 0) || patience <= 0 ||
      !(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1) || !(adam_eps > 0) ||
      !(validation_fraction >= 0 && validation_fraction < 1)) {
    fail(ErrorCode::kInvalidArgument, "training hyperparameters out of range");
  }
  for (int h : hidden) {
    if (h <= 0) fail(ErrorCode::kInvalidArgument, "hidden sizes must be positive");
  }
}

double forward_logit(const MlpModel& m, std::span<const double> x) {
  std::vector<double> cur(x.begin(), x.end()), next;
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const DenseLayer& layer = m.layers[k];
    next.assign(layer.out, 0.0);
    for (int o = 0; o < layer.out; ++o) {
      double s = layer.b[o];
      const double* w = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) s += w[i] * cur[i];
      next[o] = (k + 1 < m.layers.size()) ? std::max(0.0, s) : s;
    }
    std::swap(cur, next);
  }
  return cur[0];
}

std::vector<double> standardize(const MlpModel& m, std::span<const double> raw) {
  if (raw.size() != m.mean.size()) {
    fail(ErrorCode::kSchemaMismatch, "feature vector has " + std::to_string(raw.size()) +
                                         " values, model expects " +
                                         std::to_string(m.mean.size()));
  }
  std::vector<double> x(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) x[i] = (raw[i] - m.mean[i]) / m.stddev[i];
  return x;
}

double predict(const MlpModel& m, const FeatureVector& f) {
  if (f.schema_hash != m.schema_hash) {
    fail(ErrorCode::kSchemaMismatch, "feature schema " + hash_hex(f.schema_hash) +
                                         " does not match model schema " +
                                         hash_hex(m.schema_hash));
  }
  return sigmoid(forward_logit(m, standardize(m, f.values)));
}

std::vector<double> predict_batch(const MlpModel& m, const FeatureMatrix& matrix) {
  std::vector<double> out;
  out.reserve(matrix.rows());
  for (std::size_t i = 0; i < matrix.rows(); ++i) out.push_back(predict(m, matrix.vector(i)));
  return out;
}

double loss_and_gradient(const MlpModel& m, std::span<const std::vector<double>> rows,
                         std::span<const int> labels, Gradients& grad) {
  grad = zero_gradients(m);
  std::vector<std::vector<double>> acts;
  double loss = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    loss += backprop(m, standardize(m, rows[r]), labels[r], grad, acts);
  }
  return loss;
}

double gradient_check(const MlpModel& model, const FeatureVector& features, int label) {
  const std::vector<std::vector<double>> rows = {features.values};
  const std::vector<int> labels = {label};
  Gradients analytic;
  loss_and_gradient(model, rows, labels, analytic);

  constexpr double kStep = 1e-5;
  MlpModel probe = model;
  Gradients scratch;
  double worst = 0.0;
  auto check = [&](double& param, double a) {
    const double saved = param;
    param = saved + kStep;
    const double up = loss_and_gradient(probe, rows, labels, scratch);
    param = saved - kStep;
    const double down = loss_and_gradient(probe, rows, labels, scratch);
    param = saved;
    const double numeric = (up - down) / (2.0 * kStep);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  };
  for (std::size_t k = 0; k < probe.layers.size(); ++k) {
    for (std::size_t i = 0; i < probe.layers[k].w.size(); ++i) check(probe.layers[k].w[i], analytic.dw[k][i]);
    for (std::size_t i = 0; i < probe.layers[k].b.size(); ++i) check(probe.layers[k].b[i], analytic.db[k][i]);
  }
  return worst;
}

std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, int folds,
                                                       std::uint64_t seed) {
  if (folds < 2) fail(ErrorCode::kInvalidArgument, "folds must be at least 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  Rng rng(derive_seed(seed, 0xf01d));
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::vector<std::size_t>> out(folds);
  std::size_t k = 0;
  for (std::size_t i : pos) out[k++ % folds].push_back(i);
  for (std::size_t i : neg) out[k++ % folds].push_back(i);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

MlpModel train_model(const FeatureMatrix& matrix, std::span<const int> labels,
                     std::span<const std::size_t> rows, const TrainConfig& config,
                     std::uint64_t seed) {
  config.validate();
  const std::size_t d = matrix.cols();
  std::vector<int> sizes = {static_cast<int>(d)};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(1);
  MlpModel model = init_mlp(sizes, seed);
  model.schema = matrix.schema.names();
  model.schema_hash = matrix.schema.hash();

  for (std::size_t r : rows) {
    for (std::size_t c = 0; c < d; ++c) {
      if (!std::isfinite(matrix.row(r)[c])) {
        fail(ErrorCode::kNonFiniteLoss, "feature " + model.schema[c] + " of sample " +
                                            matrix.sample_ids[r] + " is not finite");
      }
    }
  }

  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r : rows) mean += matrix.row(r)[c];
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (std::size_t r : rows) var += (matrix.row(r)[c] - mean) * (matrix.row(r)[c] - mean);
    var /= static_cast<double>(rows.size());
    model.mean[c] = mean;
    model.stddev[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }

  std::vector<std::vector<double>> x(matrix.rows());
  for (std::size_t r : rows) x[r] = standardize(model, matrix.row(r));

  Rng rng(derive_seed(seed, 0x7a11));
  std::vector<std::size_t> pos, neg;
  for (std::size_t r : rows) (labels[r] == 1 ? pos : neg).push_back(r);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::size_t> fit, val;
  for (auto* cls : {&pos, &neg}) {
    std::size_t n_val = static_cast<std::size_t>(std::round(config.validation_fraction * cls->size()));
    if (config.validation_fraction > 0 && n_val == 0 && cls->size() >= 2) n_val = 1;
    for (std::size_t i = 0; i < cls->size(); ++i) (i < n_val ? val : fit).push_back((*cls)[i]);
  }
  std::sort(fit.begin(), fit.end());
  std::sort(val.begin(), val.end());

  AdamState st;
  for (const auto& l : model.layers) {
    st.mw.emplace_back(l.w.size(), 0.0);
    st.vw.emplace_back(l.w.size(), 0.0);
    st.mb.emplace_back(l.b.size(), 0.0);
    st.vb.emplace_back(l.b.size(), 0.0);
  }
  MlpModel best = model;
  double best_val = val.empty() ? 0.0 : mean_loss(model, x, val, labels);
  int wait = 0;
  std::vector<std::vector<double>> acts;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(fit);
    for (std::size_t start = 0; start < fit.size(); start += config.batch_size) {
      const std::size_t end = std::min(fit.size(), start + config.batch_size);
      Gradients g = zero_gradients(model);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        batch_loss += backprop(model, x[fit[i]], labels[fit[i]], g, acts);
      }
      if (!std::isfinite(batch_loss)) {
        fail(ErrorCode::kNonFiniteLoss, "training loss diverged at epoch " + std::to_string(epoch + 1));
      }
      adam_update(model, g, 1.0 / static_cast<double>(end - start), config, st);
    }
    if (val.empty()) {
      best = model;
      continue;
    }
    const double v = mean_loss(model, x, val, labels);
    if (!std::isfinite(v)) {
      fail(ErrorCode::kNonFiniteLoss, "validation loss diverged at epoch " + std::to_string(epoch + 1));
    }
    if (v < best_val) {
      best_val = v;
      best = model;
      wait = 0;
    } else if (++wait >= config.patience) {
      break;
    }
  }
  return best;
}

std::vector<FoldResult> train_cv(const FeatureMatrix& matrix, std::span<const int> labels,
                                 const TrainConfig& config, int jobs) {
  config.validate();
  if (labels.size() != matrix.rows()) {
    fail(ErrorCode::kLengthMismatch, "labels do not match feature rows");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) fail(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
  }
  const auto folds = stratified_folds(labels, config.folds, config.seed);
  for (int f = 0; f < config.folds; ++f) {
    if (folds[f].empty()) {
      fail(ErrorCode::kInvalidArgument, "fold " + std::to_string(f + 1) + " has no samples");
    }
    bool has[2] = {false, false};
    for (int g = 0; g < config.folds; ++g) {
      if (g == f) continue;
      for (std::size_t r : folds[g]) has[labels[r]] = true;
    }
    if (!has[0] || !has[1]) {
      fail(ErrorCode::kSingleClassFold,
           "training set of fold " + std::to_string(f + 1) + " lacks a class");
    }
  }

  std::vector<FoldResult> out(config.folds);
  parallel_for(static_cast<std::size_t>(config.folds), jobs, [&](std::size_t f) {
    std::vector<std::size_t> train;
    for (int g = 0; g < config.folds; ++g) {
      if (static_cast<std::size_t>(g) != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(train.begin(), train.end());
    FoldResult r;
    r.fold = static_cast<int>(f) + 1;
    r.model = train_model(matrix, labels, train, config, derive_seed(config.seed, f + 1));
    r.test_rows = folds[f];
    for (std::size_t row : folds[f]) {
      r.test_ids.push_back(matrix.sample_ids[row]);
      r.labels.push_back(labels[row]);
      r.scores.push_back(sigmoid(forward_logit(r.model, standardize(r.model, matrix.row(row)))));
    }
    out[f] = std::move(r);
  });
  return out;
}

Bytes encode_model(const MlpModel& m) {
  ordered_json header;
  header["layer_sizes"] = m.layer_sizes;
  header["schema"] = m.schema;
  header["schema_hash"] = hash_hex(m.schema_hash);
  header["normalization"] = {{"mean", m.mean}, {"std", m.stddev}};
  header["seed"] = m.seed;
  Bytes out = frame_header("MLPM", kModelFormatVersion, header.dump());
  for (const auto& l : m.layers) {
    for (double w : l.w) put_f32(out, static_cast<float>(w));
    for (double b : l.b) put_f32(out, static_cast<float>(b));
  }
  return out;
}

MlpModel decode_model(std::span<const std::uint8_t> file, const std::string& name) {
  const Container c = parse_container(file, "MLPM", name);
  MlpModel m;
  try {
    const auto header = ordered_json::parse(c.header);
    m.layer_sizes = header.at("layer_sizes").get<std::vector<int>>();
    m.schema = header.at("schema").get<std::vector<std::string>>();
    m.schema_hash = std::stoull(header.at("schema_hash").get<std::string>(), nullptr, 16);
    m.mean = header.at("normalization").at("mean").get<std::vector<double>>();
    m.stddev = header.at("normalization").at("std").get<std::vector<double>>();
    m.seed = header.at("seed").get<std::uint64_t>();
  } catch (const std::exception& e) {
    fail(ErrorCode::kBadMagic, name + ": malformed MLPM header: " + e.what());
  }
  MlpModel shape = init_mlp(m.layer_sizes, 0);
  if (m.mean.size() != static_cast<std::size_t>(m.layer_sizes.front()) ||
      m.stddev.size() != m.mean.size()) {
    fail(ErrorCode::kShapeMismatch, name + ": normalization size mismatch");
  }
  std::size_t pos = c.payload_start;
  for (auto& l : shape.layers) {
    for (double& w : l.w) { w = get_f32(file, pos); pos += 4; }
    for (double& b : l.b) { b = get_f32(file, pos); pos += 4; }
  }
  if (pos != file.size()) fail(ErrorCode::kTruncatedFile, name + ": weight payload size mismatch");
  m.layers = std::move(shape.layers);
  return m;
}

void save_model(const MlpModel& m, const std::filesystem::path& path) {
  write_file(path, encode_model(m));
}

MlpModel load_model(const std::filesystem::path& path) {
  const Bytes file = read_file(path);
  return decode_model(file, path.string());
}

}  // namespace attenmia
