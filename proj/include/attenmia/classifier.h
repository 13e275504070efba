#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attenmia/binary_io.h"
#include "attenmia/features.h"

namespace attenmia {

inline constexpr std::uint16_t kModelFormatVersion = 1;

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;  // out
};

// Rectifier hidden layers, logistic output. Inputs are standardized with the
// stored per-feature mean/stddev before the first layer.
struct MlpModel {
  std::vector<int> layer_sizes;  // input, hidden..., 1
  std::vector<DenseLayer> layers;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::string> schema;  // feature column names
  std::uint64_t schema_hash = 0;
  std::uint64_t seed = 0;

  std::size_t parameter_count() const;
};

// Weights uniform in +-sqrt(6 / fan_in), zero biases, identity normalization.
MlpModel init_mlp(const std::vector<int>& layer_sizes, std::uint64_t seed);

struct TrainConfig {
  int folds = 5;
  int max_epochs = 200;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int patience = 20;
  double validation_fraction = 0.1;
  std::vector<int> hidden = {64, 32};  // empty gives logistic regression
  std::uint64_t seed = 0;

  // Throws InvalidArgument.
  void validate() const;
};

struct FoldResult {
  int fold = 0;  // 1-based
  std::vector<std::size_t> test_rows;
  std::vector<std::string> test_ids;
  std::vector<double> scores;
  std::vector<int> labels;
  MlpModel model;
};

// Logit of already-standardized input.
double forward_logit(const MlpModel& model, std::span<const double> standardized);
std::vector<double> standardize(const MlpModel& model, std::span<const double> raw);

// Membership probability. Throws SchemaMismatch.
double predict(const MlpModel& model, const FeatureVector& features);
std::vector<double> predict_batch(const MlpModel& model, const FeatureMatrix& matrix);

struct Gradients {
  std::vector<std::vector<double>> dw;
  std::vector<std::vector<double>> db;
};

// Summed binary cross-entropy over raw (unstandardized) rows and its
// parameter gradient.
double loss_and_gradient(const MlpModel& model, std::span<const std::vector<double>> rows,
                         std::span<const int> labels, Gradients& grad);

// Max relative error between analytic gradients and central differences
// (step 1e-5). Relative error is |a - n| / max(|a|, |n|, 1e-6).
double gradient_check(const MlpModel& model, const FeatureVector& features, int label);

// Stratified, seeded fold assignment: returns per-fold row lists.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const int> labels, int folds,
                                                       std::uint64_t seed);

// Trains on `rows` of the matrix. Throws NonFiniteLoss.
MlpModel train_model(const FeatureMatrix& matrix, std::span<const int> labels,
                     std::span<const std::size_t> rows, const TrainConfig& config,
                     std::uint64_t seed);

// Throws SingleClassFold when a training fold lacks a class.
std::vector<FoldResult> train_cv(const FeatureMatrix& matrix, std::span<const int> labels,
                                 const TrainConfig& config, int jobs = 1);

Bytes encode_model(const MlpModel& model);
MlpModel decode_model(std::span<const std::uint8_t> file, const std::string& name);
void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

}  // namespace attenmia
