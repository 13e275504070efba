#include "attenmia/baselines.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <zlib.h>

#include "attenmia/error.h"
#include "attenmia/text_util.h"

namespace attenmia {

namespace {

double mean_loss(const LogProbRecord& rec) {
  if (rec.token_logprobs.empty()) {
    fail(ErrorCode::kEmptyRecord, "sample '" + rec.sample_id + "' has no token log-probs");
  }
  double s = 0.0;
  for (float v : rec.token_logprobs) s += v;
  return -s / static_cast<double>(rec.token_logprobs.size());
}

}  // namespace

BaselineScore loss_score(const LogProbRecord& rec) {
  const double raw = mean_loss(rec);
  return {rec.sample_id, "loss", raw, -raw};
}

BaselineScore ppl_score(const LogProbRecord& rec) {
  const double raw = std::exp(mean_loss(rec));
  return {rec.sample_id, "ppl", raw, -raw};
}

std::size_t zlib_entropy(std::string_view text) {
  uLongf size = compressBound(static_cast<uLong>(text.size()));
  std::vector<Bytef> buf(size);
  const int rc = compress2(buf.data(), &size, reinterpret_cast<const Bytef*>(text.data()),
                           static_cast<uLong>(text.size()), kZlibLevel);
  if (rc != Z_OK) fail(ErrorCode::kInternal, "zlib compression failed");
  return static_cast<std::size_t>(size);
}

BaselineScore zlib_score(const LogProbRecord& rec, std::string_view text) {
  if (text.empty()) fail(ErrorCode::kEmptyText, "zlib score of '" + rec.sample_id + "' needs text");
  double sum = 0.0;
  for (float v : rec.token_logprobs) sum += v;
  const double raw = -sum / static_cast<double>(zlib_entropy(text));
  return {rec.sample_id, "zlib", raw, -raw};
}

BaselineScore min_k_score(const LogProbRecord& rec, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    fail(ErrorCode::kInvalidArgument, "k_percent must lie in (0, 100]");
  }
  if (rec.token_logprobs.empty()) {
    fail(ErrorCode::kEmptyRecord, "sample '" + rec.sample_id + "' has no token log-probs");
  }
  std::vector<double> v(rec.token_logprobs.begin(), rec.token_logprobs.end());
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(k_percent / 100.0 * n)));
  if (m == v.size()) {
    // Same summation order as the loss, so k = 100 is its exact negation.
    const double raw = -loss_score(rec).raw;
    return {rec.sample_id, "min_k", raw, raw};
  }
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += v[i];
  const double raw = s / static_cast<double>(m);
  return {rec.sample_id, "min_k", raw, raw};
}

BaselineScore ref_score(const LogProbRecord& target, const LogProbRecord& reference) {
  if (target.token_logprobs.size() != reference.token_logprobs.size() ||
      target.sample_id != reference.sample_id) {
    fail(ErrorCode::kLengthMismatch, "target and reference records for '" + target.sample_id +
                                         "' do not line up");
  }
  const double raw = mean_loss(target) - mean_loss(reference);
  return {target.sample_id, "ref", raw, -raw};
}

std::map<std::string, double> extraction_baselines(const LogProbRecord* xl,
                                                   const LogProbRecord* small,
                                                   const LogProbRecord* lower,
                                                   std::string_view text) {
  if (xl == nullptr) fail(ErrorCode::kMissingRequiredRecord, "the XL log-prob record is required");
  std::map<std::string, double> out;
  const double log_ppl_xl = mean_loss(*xl);
  out["ppl_xl"] = std::exp(log_ppl_xl);
  auto ratio = [&](double numer, const char* what) {
    if (log_ppl_xl == 0.0) {
      fail(ErrorCode::kZeroDenominator, std::string(what) + " for '" + xl->sample_id +
                                            "': XL log-perplexity is zero");
    }
    return numer / log_ppl_xl;
  };
  if (small != nullptr) out["ratio_s_xl"] = ratio(mean_loss(*small), "ratio_s_xl");
  if (lower != nullptr) out["ratio_lower_xl"] = ratio(mean_loss(*lower), "ratio_lower_xl");
  if (text.empty()) fail(ErrorCode::kEmptyText, "generation text for '" + xl->sample_id + "' is empty");
  const double z = static_cast<double>(zlib_entropy(text));
  out["zlib_entropy"] = z;
  out["ratio_zlib_xl"] = log_ppl_xl / z;
  return out;
}

void write_baseline_csv(std::span<const BaselineScore> scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoFailure, "cannot create " + path.string());
  out << "sample_id,method,raw,oriented\n";
  for (const auto& s : scores) {
    out << csv_field(s.sample_id) << ',' << s.method << ',' << format_double(s.raw) << ','
        << format_double(s.oriented) << '\n';
  }
  if (!out) fail(ErrorCode::kIoFailure, "write failed for " + path.string());
}

}  // namespace attenmia
