#include "attenmia/features.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "attenmia/error.h"
#include "attenmia/text_util.h"
#include "json.hpp"

namespace attenmia {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint16_t kFeatureCacheVersion = 1;

constexpr FeatureFamily kTransitionFamilies[] = {
    FeatureFamily::kTransCorr, FeatureFamily::kTransFrob, FeatureFamily::kTransKl,
    FeatureFamily::kBaryMean, FeatureFamily::kBaryVar};

void check_head(const AttentionStack& stack, int layer, int head, int max_layer) {
  if (layer < 1 || layer > max_layer || head < 1 || head > stack.heads()) {
    fail(ErrorCode::kIndexOutOfRange, "layer " + std::to_string(layer) + " head " +
                                          std::to_string(head) + " outside stack of L=" +
                                          std::to_string(stack.layers()) + " H=" +
                                          std::to_string(stack.heads()));
  }
}

// Drift between two maps of equal size.
Drift drift_between(const MapView& a, const MapView& b) {
  const int n = a.n;
  std::vector<double> d(n);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    d[i] = std::abs(barycenter_row(b, i + 1) - barycenter_row(a, i + 1));
    mean += d[i];
  }
  mean /= n;
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  return Drift{mean, var / n};
}

bool layer_selected(const std::vector<int>& filter, int layer) {
  return filter.empty() || std::find(filter.begin(), filter.end(), layer) != filter.end();
}

}  // namespace

std::string_view family_name(FeatureFamily family) {
  switch (family) {
    case FeatureFamily::kConcentration: return "concentration";
    case FeatureFamily::kTransCorr: return "trans_corr";
    case FeatureFamily::kTransFrob: return "trans_frob";
    case FeatureFamily::kTransKl: return "trans_kl";
    case FeatureFamily::kBaryMean: return "bary_mean";
    case FeatureFamily::kBaryVar: return "bary_var";
    case FeatureFamily::kPertKlShift: return "pert_kl_shift";
    case FeatureFamily::kPertConcDelta: return "pert_conc_delta";
  }
  return "unknown";
}

FeatureFamily parse_family(std::string_view name) {
  for (auto f : {FeatureFamily::kConcentration, FeatureFamily::kTransCorr,
                 FeatureFamily::kTransFrob, FeatureFamily::kTransKl, FeatureFamily::kBaryMean,
                 FeatureFamily::kBaryVar, FeatureFamily::kPertKlShift,
                 FeatureFamily::kPertConcDelta}) {
    if (family_name(f) == name) return f;
  }
  fail(ErrorCode::kInvalidArgument, "unknown feature family '" + std::string(name) + "'");
}

std::string FeatureColumn::name() const {
  std::string out(family_name(family));
  if (!tag.empty()) out += "_" + tag;
  out += "_l" + std::to_string(layer) + "_h" + std::to_string(head);
  return out;
}

FeatureSchema::FeatureSchema(std::vector<FeatureColumn> columns) : columns_(std::move(columns)) {
  std::unordered_set<std::string> seen;
  std::string joined;
  for (const auto& c : columns_) {
    std::string n = c.name();
    if (!seen.insert(n).second) {
      fail(ErrorCode::kSchemaCollision, "duplicate feature column '" + n + "'");
    }
    joined += n;
    joined += '\n';
  }
  hash_ = fnv1a64(joined);
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  out.reserve(columns_.size());
  for (const auto& c : columns_) out.push_back(c.name());
  return out;
}

FeatureVector FeatureMatrix::vector(std::size_t i) const {
  auto r = row(i);
  return FeatureVector{sample_ids[i], std::vector<double>(r.begin(), r.end()), schema.hash()};
}

void FeatureMatrix::append(const FeatureVector& v, int label) {
  if (v.schema_hash != schema.hash() || v.values.size() != schema.size()) {
    fail(ErrorCode::kSchemaMismatch, "feature vector for '" + v.sample_id +
                                         "' does not match the matrix schema");
  }
  sample_ids.push_back(v.sample_id);
  labels.push_back(label);
  values.insert(values.end(), v.values.begin(), v.values.end());
}

double row_kl(std::span<const double> p, std::span<const double> q) {
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    kl += p[j] * std::log(p[j] / std::max(q[j], kProbabilityFloor));
  }
  return kl;
}

double kl_to_uniform(const MapView& map) {
  const int n = map.n;
  const double log_n = std::log(static_cast<double>(n));
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double kl = 0.0;
    for (int j = 0; j < n; ++j) {
      const double p = map(i, j);
      if (p > 0.0) kl += p * (std::log(p) + log_n);
    }
    total += kl;
  }
  return std::max(0.0, total / n);
}

double kl_to_uniform(const AttentionStack& stack, int layer, int head) {
  check_head(stack, layer, head, stack.layers());
  return kl_to_uniform(stack.map(layer - 1, head - 1));
}

double pearson_flat(std::span<const float> a, std::span<const float> b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double da = a[k] - ma, db = b[k] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double frobenius_scaled(const MapView& a, const MapView& b) {
  double ss = 0.0;
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    const double d = static_cast<double>(b.data[k]) - a.data[k];
    ss += d * d;
  }
  return std::sqrt(ss) / (static_cast<double>(a.n) * a.n);
}

double mean_row_kl(const MapView& p, const MapView& q) {
  const int n = p.n;
  std::vector<double> pr(n), qr(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      pr[j] = p(i, j);
      qr[j] = q(i, j);
    }
    total += row_kl(pr, qr);
  }
  return std::max(0.0, total / n);
}

double consistency_corr(const AttentionStack& stack, int layer, int head) {
  check_head(stack, layer, head, stack.layers() - 1);
  return pearson_flat(stack.map(layer - 1, head - 1).data, stack.map(layer, head - 1).data);
}

double consistency_frob(const AttentionStack& stack, int layer, int head) {
  check_head(stack, layer, head, stack.layers() - 1);
  return frobenius_scaled(stack.map(layer - 1, head - 1), stack.map(layer, head - 1));
}

double consistency_kl(const AttentionStack& stack, int layer, int head) {
  check_head(stack, layer, head, stack.layers() - 1);
  return mean_row_kl(stack.map(layer - 1, head - 1), stack.map(layer, head - 1));
}

double barycenter_row(const MapView& map, int row) {
  if (row < 1 || row > map.n) {
    fail(ErrorCode::kIndexOutOfRange, "row " + std::to_string(row) + " outside map of size " +
                                          std::to_string(map.n));
  }
  double c = 0.0;
  for (int j = 0; j < map.n; ++j) c += (j + 1) * static_cast<double>(map(row - 1, j));
  return c;
}

Drift barycenter_drift(const AttentionStack& stack, int layer, int head) {
  check_head(stack, layer, head, stack.layers() - 1);
  return drift_between(stack.map(layer - 1, head - 1), stack.map(layer, head - 1));
}

FeatureSchema transitional_schema(int layers, int heads, const TransitionalOptions& options) {
  for (int l : options.layers) {
    if (l < 1 || l > layers) {
      fail(ErrorCode::kIndexOutOfRange, "layer filter entry " + std::to_string(l) +
                                            " outside model depth " + std::to_string(layers));
    }
  }
  std::vector<FeatureColumn> cols;
  if (options.include_concentration) {
    for (int l = 1; l <= layers; ++l) {
      if (!layer_selected(options.layers, l)) continue;
      for (int h = 1; h <= heads; ++h) cols.push_back({FeatureFamily::kConcentration, l, h, {}});
    }
  }
  for (FeatureFamily f : kTransitionFamilies) {
    for (int l = 1; l < layers; ++l) {
      if (!layer_selected(options.layers, l)) continue;
      for (int h = 1; h <= heads; ++h) cols.push_back({f, l, h, {}});
    }
  }
  return FeatureSchema(std::move(cols));
}

FeatureVector extract_transitional(const AttentionStack& stack,
                                   const TransitionalOptions& options,
                                   const std::string& sample_id) {
  if (stack.layers() < 2) {
    fail(ErrorCode::kTooFewLayers, "transitional features need at least 2 layers, got " +
                                       std::to_string(stack.layers()));
  }
  const FeatureSchema schema = transitional_schema(stack.layers(), stack.heads(), options);
  FeatureVector out{sample_id, {}, schema.hash()};
  out.values.reserve(schema.size());

  // Drift is computed once per pair and shared by the mean/variance blocks.
  std::unordered_map<long, Drift> drift_cache;
  auto drift = [&](int l, int h) {
    const long key = static_cast<long>(l) * 4096 + h;
    auto it = drift_cache.find(key);
    if (it == drift_cache.end()) it = drift_cache.emplace(key, barycenter_drift(stack, l, h)).first;
    return it->second;
  };

  for (const auto& c : schema.columns()) {
    double v = 0.0;
    switch (c.family) {
      case FeatureFamily::kConcentration: v = kl_to_uniform(stack, c.layer, c.head); break;
      case FeatureFamily::kTransCorr: v = consistency_corr(stack, c.layer, c.head); break;
      case FeatureFamily::kTransFrob: v = consistency_frob(stack, c.layer, c.head); break;
      case FeatureFamily::kTransKl: v = consistency_kl(stack, c.layer, c.head); break;
      case FeatureFamily::kBaryMean: v = drift(c.layer, c.head).mean; break;
      case FeatureFamily::kBaryVar: v = drift(c.layer, c.head).variance; break;
      default: fail(ErrorCode::kInternal, "unexpected family in transitional schema");
    }
    out.values.push_back(v);
  }
  return out;
}

FeatureMatrix aggregate_features(std::span<const FeatureMatrix> parts) {
  if (parts.empty()) fail(ErrorCode::kInvalidArgument, "no feature parts to aggregate");
  const FeatureMatrix& first = parts.front();
  std::vector<FeatureColumn> cols;
  std::unordered_set<std::string> names;
  for (const auto& p : parts) {
    for (const auto& c : p.schema.columns()) {
      if (!names.insert(c.name()).second) {
        fail(ErrorCode::kSchemaCollision, "column '" + c.name() + "' appears in two parts");
      }
      cols.push_back(c);
    }
  }

  std::vector<std::unordered_map<std::string, std::size_t>> index(parts.size());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (std::size_t i = 0; i < parts[p].rows(); ++i) index[p].emplace(parts[p].sample_ids[i], i);
  }
  for (std::size_t p = 1; p < parts.size(); ++p) {
    for (const auto& id : first.sample_ids) {
      if (!index[p].count(id)) {
        fail(ErrorCode::kSampleSetMismatch,
             "sample '" + id + "' missing from feature part " + std::to_string(p + 1));
      }
    }
    for (const auto& id : parts[p].sample_ids) {
      if (!index[0].count(id)) {
        fail(ErrorCode::kSampleSetMismatch, "sample '" + id + "' missing from feature part 1");
      }
    }
  }

  FeatureMatrix out;
  out.schema = FeatureSchema(std::move(cols));
  out.sample_ids = first.sample_ids;
  out.labels = first.labels;
  out.values.reserve(first.rows() * out.schema.size());
  for (std::size_t i = 0; i < first.rows(); ++i) {
    const std::string& id = first.sample_ids[i];
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto r = parts[p].row(index[p].at(id));
      out.values.insert(out.values.end(), r.begin(), r.end());
    }
  }
  return out;
}

void write_feature_csv(const FeatureMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot create " + path.string());
  out << "sample_id,label";
  for (const auto& n : m.schema.names()) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << csv_field(m.sample_ids[i]) << ',' << m.labels[i];
    for (double v : m.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

Bytes encode_feature_cache(const FeatureMatrix& m) {
  ordered_json header;
  ordered_json cols = ordered_json::array();
  for (const auto& c : m.schema.columns()) {
    cols.push_back({{"name", c.name()},
                    {"family", family_name(c.family)},
                    {"layer", c.layer},
                    {"head", c.head},
                    {"tag", c.tag}});
  }
  header["schema"] = {{"columns", cols}, {"hash", hash_hex(m.schema.hash())}};
  header["samples"] = ordered_json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    header["samples"].push_back({{"id", m.sample_ids[i]}, {"label", m.labels[i]}});
  }
  Bytes out = frame_header("FEAT", kFeatureCacheVersion, header.dump());
  for (double v : m.values) put_f64(out, v);
  return out;
}

FeatureMatrix decode_feature_cache(std::span<const std::uint8_t> file, const std::string& name) {
  const Container c = parse_container(file, "FEAT", name);
  FeatureMatrix m;
  try {
    const auto header = ordered_json::parse(c.header);
    std::vector<FeatureColumn> cols;
    for (const auto& col : header.at("schema").at("columns")) {
      cols.push_back({parse_family(col.at("family").get<std::string>()), col.at("layer").get<int>(),
                      col.at("head").get<int>(), col.at("tag").get<std::string>()});
    }
    m.schema = FeatureSchema(std::move(cols));
    if (header["schema"].at("hash").get<std::string>() != hash_hex(m.schema.hash())) {
      fail(ErrorCode::kSchemaMismatch, name + ": schema hash does not match its columns");
    }
    for (const auto& s : header.at("samples")) {
      m.sample_ids.push_back(s.at("id").get<std::string>());
      m.labels.push_back(s.at("label").get<int>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kBadMagic, name + ": malformed feature cache header: " + e.what());
  }
  const std::size_t count = m.rows() * m.cols();
  if (c.payload_start + count * sizeof(double) != file.size()) {
    fail(ErrorCode::kTruncatedFile, name + ": feature payload size mismatch");
  }
  m.values.resize(count);
  for (std::size_t k = 0; k < count; ++k) m.values[k] = get_f64(file, c.payload_start + 8 * k);
  return m;
}

void write_feature_cache(const FeatureMatrix& m, const std::filesystem::path& path) {
  write_file(path, encode_feature_cache(m));
}

FeatureMatrix read_feature_cache(const std::filesystem::path& path) {
  const Bytes file = read_file(path);
  return decode_feature_cache(file, path.string());
}

std::vector<std::size_t> columns_of(const FeatureSchema& schema, FeatureFamily family) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < schema.size(); ++k) {
    if (schema.columns()[k].family == family) out.push_back(k);
  }
  return out;
}

}  // namespace attenmia
