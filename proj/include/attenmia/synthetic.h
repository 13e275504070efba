#pragma once

#include <cstdint>
#include <vector>

#include "attenmia/attn_data.h"
#include "attenmia/perturb.h"

namespace attenmia {

// Labeled attention stacks with known membership structure, for exercising
// the pipeline without a trained model. Members get sharp rows that persist
// across layers and survive perturbation; non-members get flat rows redrawn
// independently per layer and under perturbation.
struct SyntheticConfig {
  int n_members = 100;
  int n_nonmembers = 100;
  int layers = 4;
  int heads = 4;
  int seq_len = 16;
  int vocab_size = 256;
  std::uint64_t seed = 0;
  double member_temperature = 0.25;
  double nonmember_temperature = 1.5;
  double member_layer_noise = 0.15;
  double member_perturb_noise = 0.1;
  double nonmember_perturb_noise = 1.0;
  // Mean per-token loss is drawn per sample from N(mean, spread).
  double member_loss_mean = 2.0;
  double nonmember_loss_mean = 2.3;
  double loss_spread = 0.5;
  double token_loss_noise = 0.3;

  // Throws InvalidShape.
  void validate() const;
};

struct SyntheticCorpus {
  std::vector<AttentionRecord> originals;
  std::vector<PerturbationSpec> plan;
  // perturbed[k] holds the spec-k stacks, same ids and order as `originals`.
  std::vector<std::vector<AttentionRecord>> perturbed;
  std::vector<LogProbRecord> logprobs;
  std::vector<TokenSequence> tokens;
};

inline constexpr const char* kSyntheticModelTag = "synthetic";

// Plan used by the generator: drop 7, replace 7, and a 4-token prefix.
std::vector<PerturbationSpec> synthetic_plan(std::uint64_t seed, int vocab_size);

// Members first, then non-members; ids are "s0000", "s0001", ...
SyntheticCorpus generate_synthetic(const SyntheticConfig& config);

}  // namespace attenmia
