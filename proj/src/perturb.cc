#include "attenmia/perturb.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attenmia/error.h"
#include "attenmia/rng.h"
#include "json.hpp"

namespace attenmia {

using ordered_json = nlohmann::ordered_json;

namespace {

void check_pair_head(const PerturbedPair& pair, int layer, int head) {
  const auto& s = pair.original;
  if (layer < 1 || layer > s.layers() || head < 1 || head > s.heads() ||
      pair.perturbed.layers() != s.layers() || pair.perturbed.heads() != s.heads()) {
    fail(ErrorCode::kIndexOutOfRange, "layer " + std::to_string(layer) + " head " +
                                          std::to_string(head) + " outside perturbed pair");
  }
}

bool layer_kept(std::span<const int> filter, int layer) {
  return filter.empty() || std::find(filter.begin(), filter.end(), layer) != filter.end();
}

}  // namespace

std::string_view kind_name(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::kDrop: return "drop";
    case PerturbationKind::kReplace: return "replace";
    case PerturbationKind::kPrefix: return "prefix";
  }
  return "unknown";
}

PerturbationKind parse_kind(std::string_view name) {
  if (name == "drop") return PerturbationKind::kDrop;
  if (name == "replace") return PerturbationKind::kReplace;
  if (name == "prefix") return PerturbationKind::kPrefix;
  fail(ErrorCode::kInvalidArgument, "unknown perturbation kind '" + std::string(name) + "'");
}

std::string spec_tag(const PerturbationSpec& spec, std::size_t index) {
  return std::string(kind_name(spec.kind)) + std::to_string(index);
}

std::vector<int> evenly_spaced_positions(int count, int seq_len) {
  std::vector<int> out;
  if (count <= 0 || seq_len <= 0) return out;
  count = std::min(count, seq_len);
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    out.push_back(1 + static_cast<int>((static_cast<long long>(k) * seq_len) / count));
  }
  return out;
}

std::vector<int> resolve_positions(const PerturbationSpec& spec, int seq_len) {
  if (spec.kind == PerturbationKind::kPrefix) return {};
  if (!spec.positions.empty()) return spec.positions;
  const int cap = spec.kind == PerturbationKind::kDrop ? seq_len - 1 : seq_len;
  return evenly_spaced_positions(std::min(spec.count, cap), seq_len);
}

std::int32_t replacement_token(std::uint64_t seed, int position, std::int32_t original,
                               int vocab_size) {
  if (vocab_size < 2) {
    fail(ErrorCode::kInvalidPositions, "token replacement needs a vocabulary of at least 2");
  }
  std::uint64_t state = seed ^ static_cast<std::uint64_t>(position);
  for (;;) {
    const auto id = static_cast<std::int32_t>(splitmix64_next(state) %
                                              static_cast<std::uint64_t>(vocab_size));
    if (id != original) return id;
  }
}

std::size_t Alignment::aligned_count() const {
  return static_cast<std::size_t>(
      std::count_if(image.begin(), image.end(), [](int v) { return v > 0; }));
}

PerturbedTokens apply_perturbation(const TokenSequence& tokens, const PerturbationSpec& spec,
                                   int vocab_size) {
  validate_tokens(tokens, std::nullopt);
  const int T = static_cast<int>(tokens.size());
  const std::vector<int> positions = resolve_positions(spec, T);
  for (std::size_t k = 0; k < positions.size(); ++k) {
    if (positions[k] < 1 || positions[k] > T || (k > 0 && positions[k] <= positions[k - 1])) {
      fail(ErrorCode::kInvalidPositions,
           "perturbation positions must be strictly increasing within [1, " +
               std::to_string(T) + "]");
    }
  }

  PerturbedTokens out;
  out.alignment.image.assign(T, 0);
  switch (spec.kind) {
    case PerturbationKind::kDrop: {
      if (positions.size() >= static_cast<std::size_t>(T)) {
        fail(ErrorCode::kEmptyResult, "dropping every token leaves an empty sequence");
      }
      std::size_t next = 0;
      for (int i = 1; i <= T; ++i) {
        if (next < positions.size() && positions[next] == i) {
          ++next;
          continue;
        }
        out.tokens.tokens.push_back(tokens.tokens[i - 1]);
        out.alignment.image[i - 1] = static_cast<int>(out.tokens.tokens.size());
      }
      break;
    }
    case PerturbationKind::kReplace: {
      if (!spec.replacement_ids.empty() && spec.replacement_ids.size() != positions.size()) {
        fail(ErrorCode::kInvalidPositions, "replacement_ids must match positions one-to-one");
      }
      out.tokens.tokens = tokens.tokens;
      for (std::size_t k = 0; k < positions.size(); ++k) {
        const int p = positions[k];
        out.tokens.tokens[p - 1] =
            spec.replacement_ids.empty()
                ? replacement_token(spec.seed, p, tokens.tokens[p - 1], vocab_size)
                : spec.replacement_ids[k];
      }
      for (int i = 1; i <= T; ++i) out.alignment.image[i - 1] = i;
      break;
    }
    case PerturbationKind::kPrefix: {
      if (spec.prefix_tokens.tokens.empty()) {
        fail(ErrorCode::kInvalidArgument, "prefix perturbation needs non-empty prefix tokens");
      }
      out.tokens.tokens = spec.prefix_tokens.tokens;
      out.tokens.tokens.insert(out.tokens.tokens.end(), tokens.tokens.begin(), tokens.tokens.end());
      const int shift = static_cast<int>(spec.prefix_tokens.size());
      for (int i = 1; i <= T; ++i) out.alignment.image[i - 1] = i + shift;
      break;
    }
  }
  return out;
}

Alignment alignment_for(const PerturbationSpec& spec, int original_len, int perturbed_len) {
  Alignment a;
  a.image.assign(original_len, 0);
  switch (spec.kind) {
    case PerturbationKind::kDrop: {
      const auto positions = resolve_positions(spec, original_len);
      if (perturbed_len != original_len - static_cast<int>(positions.size())) {
        fail(ErrorCode::kShapeMismatch,
             "perturbed length " + std::to_string(perturbed_len) + " does not match a drop of " +
                 std::to_string(positions.size()) + " from " + std::to_string(original_len));
      }
      TokenSequence dummy;
      dummy.tokens.resize(original_len, 0);
      return apply_perturbation(dummy, spec, 2).alignment;
    }
    case PerturbationKind::kReplace:
      if (perturbed_len != original_len) {
        fail(ErrorCode::kShapeMismatch, "replacement must preserve length");
      }
      for (int i = 1; i <= original_len; ++i) a.image[i - 1] = i;
      return a;
    case PerturbationKind::kPrefix: {
      const int shift = perturbed_len - original_len;
      if (shift <= 0) fail(ErrorCode::kShapeMismatch, "prefix perturbation must lengthen input");
      if (!spec.prefix_tokens.tokens.empty() &&
          shift != static_cast<int>(spec.prefix_tokens.size())) {
        fail(ErrorCode::kShapeMismatch, "perturbed length disagrees with prefix length");
      }
      for (int i = 1; i <= original_len; ++i) a.image[i - 1] = i + shift;
      return a;
    }
  }
  return a;
}

PerturbedPair truncate_pair(const PerturbedPair& pair, int new_len) {
  if (new_len >= pair.original.seq_len()) return pair;
  PerturbedPair out;
  out.original = truncate_stack(pair.original, new_len);
  out.alignment.image.assign(pair.alignment.image.begin(), pair.alignment.image.begin() + new_len);
  const int last = *std::max_element(out.alignment.image.begin(), out.alignment.image.end());
  if (last <= 0) fail(ErrorCode::kEmptyAlignment, "truncation leaves no aligned tokens");
  out.perturbed = truncate_stack(pair.perturbed, last);
  return out;
}

double kl_shift(const PerturbedPair& pair, int layer, int head) {
  check_pair_head(pair, layer, head);
  const auto& image = pair.alignment.image;
  std::vector<int> cols;
  for (std::size_t j = 0; j < image.size(); ++j) {
    if (image[j] > 0) cols.push_back(static_cast<int>(j));
  }
  if (cols.empty()) fail(ErrorCode::kEmptyAlignment, "perturbed pair has no aligned tokens");

  const MapView a = pair.original.map(layer - 1, head - 1);
  const MapView b = pair.perturbed.map(layer - 1, head - 1);
  std::vector<double> p(cols.size()), q(cols.size());
  double total = 0.0;
  for (int i : cols) {
    const int ip = image[i] - 1;
    double sp = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      p[c] = a(i, cols[c]);
      q[c] = b(ip, image[cols[c]] - 1);
      sp += p[c];
      sq += q[c];
    }
    if (sp <= 0.0) continue;
    for (auto& v : p) v /= sp;
    if (sq > 0.0) {
      for (auto& v : q) v /= sq;
    }
    total += row_kl(p, q);
  }
  return std::max(0.0, total / static_cast<double>(cols.size()));
}

double concentration_delta(const PerturbedPair& pair, int layer, int head) {
  check_pair_head(pair, layer, head);
  const double k0 = kl_to_uniform(pair.original.map(layer - 1, head - 1));
  const double k1 = kl_to_uniform(pair.perturbed.map(layer - 1, head - 1));
  return (k1 - k0) / std::max(k0, kProbabilityFloor);
}

FeatureSchema perturbation_schema(std::span<const PerturbationSpec> specs, int layers, int heads,
                                  std::span<const int> layer_filter) {
  for (int l : layer_filter) {
    if (l < 1 || l > layers) {
      fail(ErrorCode::kIndexOutOfRange, "layer filter entry " + std::to_string(l) +
                                            " outside model depth " + std::to_string(layers));
    }
  }
  std::vector<FeatureColumn> cols;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const std::string tag = spec_tag(specs[s], s);
    for (FeatureFamily f : {FeatureFamily::kPertKlShift, FeatureFamily::kPertConcDelta}) {
      for (int l = 1; l <= layers; ++l) {
        if (!layer_kept(layer_filter, l)) continue;
        for (int h = 1; h <= heads; ++h) cols.push_back({f, l, h, tag});
      }
    }
  }
  return FeatureSchema(std::move(cols));
}

FeatureVector perturbation_features(std::span<const PerturbedPair> pairs,
                                    std::span<const PerturbationSpec> specs,
                                    std::span<const int> layer_filter,
                                    const std::string& sample_id) {
  if (specs.empty()) fail(ErrorCode::kInvalidArgument, "perturbation plan has no specs");
  if (pairs.size() != specs.size()) {
    fail(ErrorCode::kInvalidArgument, "need one perturbed pair per spec");
  }
  const int L = pairs.front().original.layers();
  const int H = pairs.front().original.heads();
  const FeatureSchema schema = perturbation_schema(specs, L, H, layer_filter);
  FeatureVector out{sample_id, {}, schema.hash()};
  out.values.reserve(schema.size());
  for (const auto& pair : pairs) {
    for (int l = 1; l <= L; ++l) {
      if (!layer_kept(layer_filter, l)) continue;
      for (int h = 1; h <= H; ++h) out.values.push_back(kl_shift(pair, l, h));
    }
    for (int l = 1; l <= L; ++l) {
      if (!layer_kept(layer_filter, l)) continue;
      for (int h = 1; h <= H; ++h) out.values.push_back(concentration_delta(pair, l, h));
    }
  }
  return out;
}

FeatureVector extract_perturbation_features(const TokenSequence& tokens,
                                            const AttentionModel& model,
                                            std::span<const PerturbationSpec> specs,
                                            std::span<const int> layer_filter,
                                            const std::string& sample_id) {
  if (specs.empty()) fail(ErrorCode::kInvalidArgument, "perturbation plan has no specs");
  const AttentionStack original = model.attention(tokens);
  std::vector<PerturbedPair> pairs;
  pairs.reserve(specs.size());
  for (const auto& spec : specs) {
    PerturbedTokens p = apply_perturbation(tokens, spec, model.vocab_size());
    pairs.push_back({original, model.attention(p.tokens), std::move(p.alignment)});
  }
  return perturbation_features(pairs, specs, layer_filter, sample_id);
}

std::vector<std::vector<double>> masking_sweep(const TokenSequence& tokens,
                                               const AttentionModel& model, MaskingMode mode,
                                               int k_max) {
  const int T = static_cast<int>(tokens.size());
  if (k_max < 1) fail(ErrorCode::kInvalidArgument, "k_max must be at least 1");
  if (k_max > T - 1) {
    fail(ErrorCode::kKMaxTooLarge, "k_max " + std::to_string(k_max) + " exceeds T - 1 = " +
                                       std::to_string(T - 1));
  }
  const AttentionStack original = model.attention(tokens);
  std::vector<std::vector<double>> out;
  out.reserve(k_max);
  for (int step = 1; step <= k_max; ++step) {
    PerturbationSpec spec;
    spec.kind = PerturbationKind::kDrop;
    if (mode == MaskingMode::kIndependent) {
      spec.positions = {step};
    } else {
      for (int p = 1; p <= step; ++p) spec.positions.push_back(p);
    }
    PerturbedTokens p = apply_perturbation(tokens, spec, model.vocab_size());
    const PerturbedPair pair{original, model.attention(p.tokens), std::move(p.alignment)};
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(original.layers()) * original.heads());
    for (int l = 1; l <= original.layers(); ++l)
      for (int h = 1; h <= original.heads(); ++h) v.push_back(concentration_delta(pair, l, h));
    out.push_back(std::move(v));
  }
  return out;
}

std::string plan_to_json(std::span<const PerturbationSpec> specs) {
  ordered_json j;
  j["specs"] = ordered_json::array();
  for (const auto& s : specs) {
    ordered_json e;
    e["kind"] = kind_name(s.kind);
    e["positions"] = s.positions;
    e["seed"] = s.seed;
    e["prefix_id"] = s.prefix_id.empty() ? ordered_json(nullptr) : ordered_json(s.prefix_id);
    if (s.count != kDefaultPerturbedTokens) e["count"] = s.count;
    if (!s.replacement_ids.empty()) e["replacement_ids"] = s.replacement_ids;
    if (!s.prefix_tokens.tokens.empty()) e["prefix_tokens"] = s.prefix_tokens.tokens;
    j["specs"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::vector<PerturbationSpec> plan_from_json(const std::string& text, const std::string& name) {
  std::vector<PerturbationSpec> out;
  try {
    const auto j = ordered_json::parse(text);
    for (const auto& e : j.at("specs")) {
      PerturbationSpec s;
      s.kind = parse_kind(e.at("kind").get<std::string>());
      if (e.contains("positions")) s.positions = e["positions"].get<std::vector<int>>();
      if (e.contains("seed")) s.seed = e["seed"].get<std::uint64_t>();
      if (e.contains("prefix_id") && !e["prefix_id"].is_null()) {
        s.prefix_id = e["prefix_id"].get<std::string>();
      }
      if (e.contains("count")) s.count = e["count"].get<int>();
      if (e.contains("replacement_ids")) {
        s.replacement_ids = e["replacement_ids"].get<std::vector<std::int32_t>>();
      }
      if (e.contains("prefix_tokens")) {
        s.prefix_tokens.tokens = e["prefix_tokens"].get<std::vector<std::int32_t>>();
      }
      for (std::size_t k = 1; k < s.positions.size(); ++k) {
        if (s.positions[k] <= s.positions[k - 1] || s.positions[0] < 1) {
          fail(ErrorCode::kInvalidPositions, name + ": positions must be strictly increasing");
        }
      }
      out.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kInvalidArgument, name + ": malformed perturbation plan: " + e.what());
  }
  return out;
}

void write_plan(std::span<const PerturbationSpec> specs, const std::filesystem::path& path) {
  const std::string text = plan_to_json(specs);
  write_file(path, std::span<const std::uint8_t>(
                       reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<PerturbationSpec> read_plan(const std::filesystem::path& path) {
  const Bytes data = read_file(path);
  return plan_from_json(std::string(data.begin(), data.end()), path.string());
}

std::vector<PerturbationSpec> default_plan(std::uint64_t seed, const TokenSequence& prefix,
                                           const std::string& prefix_id) {
  PerturbationSpec drop;
  drop.kind = PerturbationKind::kDrop;
  drop.seed = seed;
  PerturbationSpec replace;
  replace.kind = PerturbationKind::kReplace;
  replace.seed = seed;
  PerturbationSpec pre;
  pre.kind = PerturbationKind::kPrefix;
  pre.seed = seed;
  pre.prefix_id = prefix_id;
  pre.prefix_tokens = prefix;
  return {drop, replace, pre};
}

}  // namespace attenmia
