#include "attenmia/metrics.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "attenmia/error.h"
#include "attenmia/text_util.h"

namespace attenmia {

namespace {

void require_both_classes(const ScoreSet& s) {
  if (s.n_pos() == 0 || s.n_neg() == 0) {
    fail(ErrorCode::kDegenerateClasses, "score set needs at least one member and one non-member");
  }
}

// Indices sorted by descending score.
std::vector<std::size_t> order_desc(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

ScoreSet::ScoreSet(std::span<const double> scores, std::span<const int> labels)
    : scores_(scores.begin(), scores.end()), labels_(labels.begin(), labels.end()) {
  if (scores.size() != labels.size()) {
    fail(ErrorCode::kLengthMismatch, "scores and labels differ in length");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == 1) {
      ++n_pos_;
    } else if (labels_[i] == 0) {
      ++n_neg_;
    } else {
      fail(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
    }
    if (std::isnan(scores_[i])) fail(ErrorCode::kInvalidArgument, "score is NaN");
  }
}

ScoreSet ScoreSet::flipped() const {
  std::vector<int> l(labels_.size());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = 1 - labels_[i];
  return ScoreSet(scores_, l);
}

double roc_auc(const ScoreSet& s) {
  require_both_classes(s);
  const auto& sc = s.scores();
  std::vector<std::size_t> idx(sc.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sc[a] < sc[b]; });
  // Sum of 1-based mid-ranks of the positives, kept doubled so it stays integral.
  long double rank_sum2 = 0.0L;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && sc[idx[j + 1]] == sc[idx[i]]) ++j;
    const long double mid2 = static_cast<long double>(i + 1) + static_cast<long double>(j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (s.labels()[idx[k]] == 1) rank_sum2 += mid2;
    }
    i = j + 1;
  }
  const long double p = static_cast<long double>(s.n_pos());
  const long double n = static_cast<long double>(s.n_neg());
  const long double u = (rank_sum2 - p * (p + 1.0L)) / 2.0L;
  return static_cast<double>(u / (p * n));
}

std::vector<RocPoint> roc_curve(const ScoreSet& s) {
  require_both_classes(s);
  const auto idx = order_desc(s.scores());
  std::vector<RocPoint> out;
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0, i = 0;
  const double P = static_cast<double>(s.n_pos()), N = static_cast<double>(s.n_neg());
  while (i < idx.size()) {
    const double t = s.scores()[idx[i]];
    while (i < idx.size() && s.scores()[idx[i]] == t) {
      (s.labels()[idx[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    out.push_back({t, fp / N, tp / P});
  }
  out.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  return out;
}

double tpr_at_fpr(const ScoreSet& s, double fpr_cap) {
  require_both_classes(s);
  double best = 0.0;
  for (const RocPoint& p : roc_curve(s)) {
    if (!std::isfinite(p.threshold)) continue;
    if (p.fpr <= fpr_cap) best = std::max(best, p.tpr);
  }
  return best;
}

Histogram shared_histogram(std::span<const double> a, std::span<const double> b, int bins) {
  if (a.empty() || b.empty()) fail(ErrorCode::kEmptyInput, "histogram inputs must be non-empty");
  if (bins < 1) fail(ErrorCode::kInvalidArgument, "bins must be positive");
  Histogram h;
  h.lo = std::min(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
  h.hi = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
  if (!std::isfinite(h.lo) || !std::isfinite(h.hi)) {
    fail(ErrorCode::kInvalidArgument, "histogram inputs must be finite");
  }
  const double width = h.hi - h.lo;
  if (width == 0.0) bins = 1;
  h.counts_a.assign(bins, 0);
  h.counts_b.assign(bins, 0);
  for (int k = 0; k <= bins; ++k) h.edges.push_back(h.lo + width * k / bins);
  auto bin_of = [&](double x) {
    if (width == 0.0) return 0;
    const int k = static_cast<int>(std::floor((x - h.lo) / width * bins));
    return std::clamp(k, 0, bins - 1);
  };
  for (double x : a) ++h.counts_a[bin_of(x)];
  for (double x : b) ++h.counts_b[bin_of(x)];
  return h;
}

double hellinger(std::span<const double> a, std::span<const double> b, int bins) {
  const Histogram h = shared_histogram(a, b, bins);
  // Bhattacharyya coefficient from integer counts keeps identical inputs at
  // exactly 1 and disjoint inputs at exactly 0.
  double bc = 0.0;
  for (std::size_t k = 0; k < h.counts_a.size(); ++k) {
    bc += std::sqrt(static_cast<double>(h.counts_a[k]) * static_cast<double>(h.counts_b[k]));
  }
  bc /= std::sqrt(static_cast<double>(a.size()) * static_cast<double>(b.size()));
  return std::sqrt(std::max(0.0, 1.0 - bc));
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::kLengthMismatch, "pearson inputs differ in length");
  if (x.empty()) return 0.0;
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeL rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  RougeL r;
  if (candidate.empty() || reference.empty()) return r;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  r.precision = lcs / static_cast<double>(candidate.size());
  r.recall = lcs / static_cast<double>(reference.size());
  if (r.precision + r.recall > 0.0) {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

RougeL rouge_l_text(std::string_view candidate, std::string_view reference) {
  const auto c = split_whitespace(to_lower_ascii(candidate));
  const auto r = split_whitespace(to_lower_ascii(reference));
  return rouge_l(c, r);
}

SymmetricEigen jacobi_eigen(std::vector<double> a, int n, double tolerance) {
  std::vector<double> v(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };

  double scale = 0.0;
  for (double x : a) scale = std::max(scale, std::abs(x));
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
    if (std::sqrt(off) <= tolerance * std::max(scale, 1e-300)) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return at(x, x) > at(y, y); });
  SymmetricEigen out;
  for (int k : order) {
    out.values.push_back(at(k, k));
    std::vector<double> vec(n);
    for (int r = 0; r < n; ++r) vec[r] = v[r * n + k];
    out.vectors.push_back(std::move(vec));
  }
  return out;
}

Pca2 pca2(const std::vector<std::vector<double>>& vectors) {
  if (vectors.size() < 3) {
    fail(ErrorCode::kTooFewVectors, "PCA needs at least 3 vectors, got " +
                                        std::to_string(vectors.size()));
  }
  const std::size_t n = vectors.size();
  const int d = static_cast<int>(vectors.front().size());
  if (d == 0) fail(ErrorCode::kInvalidArgument, "PCA vectors are empty");
  std::vector<double> mean(d, 0.0);
  for (const auto& v : vectors) {
    if (static_cast<int>(v.size()) != d) fail(ErrorCode::kShapeMismatch, "PCA vectors differ in length");
    for (int k = 0; k < d; ++k) mean[k] += v[k];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& v : vectors) {
    for (int r = 0; r < d; ++r)
      for (int c = r; c < d; ++c) cov[r * d + c] += (v[r] - mean[r]) * (v[c] - mean[c]);
  }
  for (int r = 0; r < d; ++r) {
    for (int c = r; c < d; ++c) {
      cov[r * d + c] /= static_cast<double>(n - 1);
      cov[c * d + r] = cov[r * d + c];
    }
  }
  const SymmetricEigen eig = jacobi_eigen(std::move(cov), d);

  Pca2 out;
  for (int k = 0; k < 2; ++k) {
    if (k < d) {
      std::vector<double> comp = eig.vectors[k];
      std::size_t arg = 0;
      for (std::size_t i = 1; i < comp.size(); ++i)
        if (std::abs(comp[i]) > std::abs(comp[arg])) arg = i;
      if (comp[arg] < 0) for (double& x : comp) x = -x;
      out.components[k] = std::move(comp);
      out.explained_variance[k] = std::max(0.0, eig.values[k]);
    } else {
      out.components[k].assign(d, 0.0);
    }
  }
  for (const auto& v : vectors) {
    std::array<double, 2> p{};
    for (int k = 0; k < 2; ++k)
      for (int c = 0; c < d; ++c) p[k] += (v[c] - mean[c]) * out.components[k][c];
    out.projected.push_back(p);
  }
  return out;
}

void write_roc_csv(const std::vector<RocPoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot create " + path.string());
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve) {
    out << format_double(p.threshold) << ',' << format_double(p.fpr) << ','
        << format_double(p.tpr) << '\n';
  }
}

void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot create " + path.string());
  out << "bin_left,bin_right,count_a,count_b\n";
  for (std::size_t k = 0; k < h.counts_a.size(); ++k) {
    out << format_double(h.edges[k]) << ',' << format_double(h.edges[k + 1]) << ','
        << h.counts_a[k] << ',' << h.counts_b[k] << '\n';
  }
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace attenmia
