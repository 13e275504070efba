#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attenmia {

// Scores with binary labels (1 = member). Higher scores mean "more member-like".
class ScoreSet {
 public:
  ScoreSet() = default;
  ScoreSet(std::span<const double> scores, std::span<const int> labels);

  const std::vector<double>& scores() const { return scores_; }
  const std::vector<int>& labels() const { return labels_; }
  std::size_t n_pos() const { return n_pos_; }
  std::size_t n_neg() const { return n_neg_; }

  ScoreSet flipped() const;

 private:
  std::vector<double> scores_;
  std::vector<int> labels_;
  std::size_t n_pos_ = 0;
  std::size_t n_neg_ = 0;
};

// Mann-Whitney with mid-ranks. Throws DegenerateClasses.
double roc_auc(const ScoreSet& scores);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

// From (+inf, 0, 0) to (-inf, 1, 1); one point per distinct observed score,
// predicting positive when score >= threshold.
std::vector<RocPoint> roc_curve(const ScoreSet& scores);

// Best TPR among observed-score thresholds with FPR <= fpr_cap, no
// interpolation; 0 if none qualifies.
double tpr_at_fpr(const ScoreSet& scores, double fpr_cap = 0.01);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts_a;
  std::vector<std::size_t> counts_b;
};

// Equal-width bins over the pooled [min, max]; one bin when the range is 0.
Histogram shared_histogram(std::span<const double> a, std::span<const double> b, int bins = 32);

// sqrt(max(0, 1 - sum_b sqrt(p_b q_b))) over shared_histogram. Throws EmptyInput.
double hellinger(std::span<const double> a, std::span<const double> b, int bins = 32);

// Product-moment correlation; 0 when either side has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

struct RougeL {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
RougeL rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
// Lowercases and splits on whitespace before scoring.
RougeL rouge_l_text(std::string_view candidate, std::string_view reference);

struct Pca2 {
  std::vector<std::array<double, 2>> projected;
  std::array<std::vector<double>, 2> components;
  std::array<double, 2> explained_variance{};  // eigenvalues of the sample covariance
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues in descending order and the matching unit eigenvectors.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
};
SymmetricEigen jacobi_eigen(std::vector<double> matrix, int n, double tolerance = 1e-12);

// Throws TooFewVectors for fewer than 3 inputs.
Pca2 pca2(const std::vector<std::vector<double>>& vectors);

void write_roc_csv(const std::vector<RocPoint>& curve, const std::filesystem::path& path);
void write_histogram_csv(const Histogram& histogram, const std::filesystem::path& path);

double mean_of(std::span<const double> v);
double sample_stddev(std::span<const double> v);

}  // namespace attenmia
