#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attenmia/attention_model.h"
#include "attenmia/attn_data.h"
#include "attenmia/features.h"

namespace attenmia {

enum class PerturbationKind { kDrop, kReplace, kPrefix };

std::string_view kind_name(PerturbationKind kind);
PerturbationKind parse_kind(std::string_view name);

inline constexpr int kDefaultPerturbedTokens = 7;

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kDrop;
  // 1-based, strictly increasing. Empty means `count` evenly spaced positions
  // chosen per sample length.
  std::vector<int> positions;
  int count = kDefaultPerturbedTokens;
  std::uint64_t seed = 0;
  // Replace only: explicit ids aligned with `positions`. Empty draws ids with
  // the seeded splitmix64 rule.
  std::vector<std::int32_t> replacement_ids;
  // Prefix only.
  std::string prefix_id;
  TokenSequence prefix_tokens;

  friend bool operator==(const PerturbationSpec& a, const PerturbationSpec& b) {
    return a.kind == b.kind && a.positions == b.positions && a.count == b.count &&
           a.seed == b.seed && a.replacement_ids == b.replacement_ids &&
           a.prefix_id == b.prefix_id && a.prefix_tokens.tokens == b.prefix_tokens.tokens;
  }
};

// Column tag of spec number `index` in a plan, e.g. "drop0".
std::string spec_tag(const PerturbationSpec& spec, std::size_t index);

// `count` positions spread over [1, seq_len]: 1 + floor(k * seq_len / count).
std::vector<int> evenly_spaced_positions(int count, int seq_len);

// Explicit positions, or the evenly spaced default (at most seq_len - 1 for
// drop so one token survives).
std::vector<int> resolve_positions(const PerturbationSpec& spec, int seq_len);

// Replacement id for the token at 1-based `position`: splitmix64 seeded with
// seed ^ position, reduced modulo vocab_size, redrawn while equal to the
// original id.
std::int32_t replacement_token(std::uint64_t seed, int position, std::int32_t original,
                               int vocab_size);

// image[i] is the 1-based perturbed position of original token i + 1, or 0
// when the token was dropped.
struct Alignment {
  std::vector<int> image;

  std::size_t aligned_count() const;
  friend bool operator==(const Alignment&, const Alignment&) = default;
};

struct PerturbedTokens {
  TokenSequence tokens;
  Alignment alignment;
};

// Throws InvalidPositions, EmptyResult.
PerturbedTokens apply_perturbation(const TokenSequence& tokens, const PerturbationSpec& spec,
                                   int vocab_size);

// Alignment implied by a spec for given original/perturbed lengths, used when
// perturbed attention arrives from a dump rather than from a model run.
Alignment alignment_for(const PerturbationSpec& spec, int original_len, int perturbed_len);

struct PerturbedPair {
  AttentionStack original;
  AttentionStack perturbed;
  Alignment alignment;
};

// Restricts a pair to the first `new_len` original tokens (causal stacks).
PerturbedPair truncate_pair(const PerturbedPair& pair, int new_len);

// Mean over aligned rows of KL(original' || perturbed') where both rows are
// restricted to aligned columns and renormalized. Throws EmptyAlignment.
double kl_shift(const PerturbedPair& pair, int layer, int head);

// (kappa' - kappa) / max(kappa, 1e-12), each over its own length.
double concentration_delta(const PerturbedPair& pair, int layer, int head);

FeatureSchema perturbation_schema(std::span<const PerturbationSpec> specs, int layers, int heads,
                                  std::span<const int> layer_filter = {});

// One pair per spec, in spec order.
FeatureVector perturbation_features(std::span<const PerturbedPair> pairs,
                                    std::span<const PerturbationSpec> specs,
                                    std::span<const int> layer_filter = {},
                                    const std::string& sample_id = {});

FeatureVector extract_perturbation_features(const TokenSequence& tokens,
                                            const AttentionModel& model,
                                            std::span<const PerturbationSpec> specs,
                                            std::span<const int> layer_filter = {},
                                            const std::string& sample_id = {});

enum class MaskingMode { kIndependent, kCumulative };

// One flattened (layer-major, head-minor) concentration_delta vector per step.
// Throws KMaxTooLarge when k_max > T - 1.
std::vector<std::vector<double>> masking_sweep(const TokenSequence& tokens,
                                               const AttentionModel& model, MaskingMode mode,
                                               int k_max);

// Perturbation plan file: {"specs": [{kind, positions, seed, prefix_id, ...}]}.
std::string plan_to_json(std::span<const PerturbationSpec> specs);
std::vector<PerturbationSpec> plan_from_json(const std::string& text, const std::string& name);
void write_plan(std::span<const PerturbationSpec> specs, const std::filesystem::path& path);
std::vector<PerturbationSpec> read_plan(const std::filesystem::path& path);

// Drop 7 evenly spaced, replace 7 evenly spaced, one non-member prefix.
std::vector<PerturbationSpec> default_plan(std::uint64_t seed, const TokenSequence& prefix,
                                           const std::string& prefix_id);

}  // namespace attenmia
