#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "attenmia/attn_data.h"

namespace attenmia {

inline constexpr int kZlibLevel = 6;
inline constexpr double kDefaultMinKPercent = 20.0;

// `oriented` is the membership score: higher means more member-like.
struct BaselineScore {
  std::string sample_id;
  std::string method;
  double raw = 0.0;
  double oriented = 0.0;
};

// raw = -mean(logprobs); oriented = -raw. Throws EmptyRecord.
BaselineScore loss_score(const LogProbRecord& rec);
// raw = exp(loss); oriented = -raw.
BaselineScore ppl_score(const LogProbRecord& rec);
// Byte length of the zlib (RFC 1950, level 6) stream of the UTF-8 text.
std::size_t zlib_entropy(std::string_view text);
// raw = (-sum logprobs) / zlib_entropy(text); oriented = -raw. Throws EmptyText.
BaselineScore zlib_score(const LogProbRecord& rec, std::string_view text);
// raw = mean of the m = max(1, floor(k/100 * (T-1))) smallest logprobs; oriented = raw.
BaselineScore min_k_score(const LogProbRecord& rec, double k_percent = kDefaultMinKPercent);
// raw = loss(target) - loss(reference); oriented = -raw. Throws LengthMismatch.
BaselineScore ref_score(const LogProbRecord& target, const LogProbRecord& reference);

// Training-data-extraction scores keyed by method tag: ppl_xl, ratio_s_xl,
// ratio_lower_xl, zlib_entropy, ratio_zlib_xl. Ratios of absent records are
// omitted. Throws MissingRequiredRecord, ZeroDenominator.
std::map<std::string, double> extraction_baselines(const LogProbRecord* xl,
                                                   const LogProbRecord* small,
                                                   const LogProbRecord* lower,
                                                   std::string_view text);

void write_baseline_csv(std::span<const BaselineScore> scores, const std::filesystem::path& path);

}  // namespace attenmia
