#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attenmia/attn_data.h"
#include "attenmia/binary_io.h"

namespace attenmia {

inline constexpr double kProbabilityFloor = 1e-12;

// Column blocks appear in this order within a schema.
enum class FeatureFamily {
  kConcentration,
  kTransCorr,
  kTransFrob,
  kTransKl,
  kBaryMean,
  kBaryVar,
  kPertKlShift,
  kPertConcDelta,
};

std::string_view family_name(FeatureFamily family);
FeatureFamily parse_family(std::string_view name);

struct FeatureColumn {
  FeatureFamily family = FeatureFamily::kConcentration;
  int layer = 0;    // 1-based; the lower layer of a transition pair
  int head = 0;     // 1-based
  std::string tag;  // perturbation tag, empty otherwise

  std::string name() const;
  friend bool operator==(const FeatureColumn&, const FeatureColumn&) = default;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FeatureColumn> columns);

  const std::vector<FeatureColumn>& columns() const { return columns_; }
  std::size_t size() const { return columns_.size(); }
  std::vector<std::string> names() const;
  // FNV-1a over the newline-joined column names.
  std::uint64_t hash() const { return hash_; }

  friend bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
    return a.columns_ == b.columns_;
  }

 private:
  std::vector<FeatureColumn> columns_;
  std::uint64_t hash_ = 0;
};

struct FeatureVector {
  std::string sample_id;
  std::vector<double> values;
  std::uint64_t schema_hash = 0;
};

// Rows are samples, row-major.
struct FeatureMatrix {
  FeatureSchema schema;
  std::vector<std::string> sample_ids;
  std::vector<int> labels;  // -1 when unknown
  std::vector<double> values;

  std::size_t rows() const { return sample_ids.size(); }
  std::size_t cols() const { return schema.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * cols(), cols());
  }
  FeatureVector vector(std::size_t i) const;
  void append(const FeatureVector& v, int label);
};

// --- Scalar statistics. Layer and head numbers are 1-based. ---

// (1/T) sum_i KL(A_i || U_T), nats.
double kl_to_uniform(const AttentionStack& stack, int layer, int head);
double kl_to_uniform(const MapView& map);

// Pearson correlation of vec A^{l,h} and vec A^{l+1,h}; 0 on zero variance.
double consistency_corr(const AttentionStack& stack, int layer, int head);
// ||A^{l+1,h} - A^{l,h}||_F / T^2.
double consistency_frob(const AttentionStack& stack, int layer, int head);
// (1/T) sum_i KL(A^{l,h}_i || A^{l+1,h}_i), denominators floored.
double consistency_kl(const AttentionStack& stack, int layer, int head);

double pearson_flat(std::span<const float> a, std::span<const float> b);
double frobenius_scaled(const MapView& a, const MapView& b);
double mean_row_kl(const MapView& p, const MapView& q);

// KL(p || q) over entries with p > 0; q floored at kProbabilityFloor.
double row_kl(std::span<const double> p, std::span<const double> q);

// sum_j j * A_{i,j} with 1-based j and row i.
double barycenter_row(const MapView& map, int row);

struct Drift {
  double mean = 0.0;
  double variance = 0.0;  // population
};
Drift barycenter_drift(const AttentionStack& stack, int layer, int head);

struct TransitionalOptions {
  bool include_concentration = true;
  // 1-based layers to keep; empty keeps all. Transition columns are kept when
  // the lower layer of the pair is selected.
  std::vector<int> layers;
};

FeatureSchema transitional_schema(int layers, int heads, const TransitionalOptions& options = {});

// Throws TooFewLayers when L < 2.
FeatureVector extract_transitional(const AttentionStack& stack,
                                   const TransitionalOptions& options = {},
                                   const std::string& sample_id = {});

// Concatenates per-sample parts in order; throws SampleSetMismatch or
// SchemaCollision. Row order follows the first part.
FeatureMatrix aggregate_features(std::span<const FeatureMatrix> parts);

void write_feature_csv(const FeatureMatrix& matrix, const std::filesystem::path& path);
Bytes encode_feature_cache(const FeatureMatrix& matrix);
FeatureMatrix decode_feature_cache(std::span<const std::uint8_t> file, const std::string& name);
void write_feature_cache(const FeatureMatrix& matrix, const std::filesystem::path& path);
FeatureMatrix read_feature_cache(const std::filesystem::path& path);

// Column indices whose family matches.
std::vector<std::size_t> columns_of(const FeatureSchema& schema, FeatureFamily family);

}  // namespace attenmia
