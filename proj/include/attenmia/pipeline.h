#pragma once

#include <span>
#include <string>
#include <vector>

#include "attenmia/attn_data.h"
#include "attenmia/features.h"
#include "attenmia/perturb.h"

namespace attenmia {

// Which feature families feed the classifier, and the layer/length knobs of
// the layer and sequence-length studies.
struct FeatureOptions {
  bool concentration = true;
  bool transitional = true;
  bool perturbation = true;
  std::vector<int> layers;  // 1-based, empty keeps all
  int max_len = 0;          // 0 keeps the full sequence
};

// Concatenated schema: concentration, transitional families, then the
// perturbation block. Throws InvalidArgument when every family is off.
FeatureSchema feature_schema(int layers, int heads, std::span<const PerturbationSpec> specs,
                             const FeatureOptions& options);

// `perturbed` holds one stack per spec; it may be empty when the
// perturbation family is off.
FeatureVector sample_features(const AttentionStack& original,
                              std::span<const AttentionStack> perturbed,
                              std::span<const PerturbationSpec> specs,
                              const FeatureOptions& options, const std::string& sample_id);

// Feature matrix over every sample of `original`, with perturbed stacks looked
// up by id in `perturbed` (one reader per spec).
FeatureMatrix dump_features(const AttentionDumpReader& original,
                            std::span<const AttentionDumpReader> perturbed,
                            std::span<const PerturbationSpec> specs,
                            const FeatureOptions& options, int jobs = 1);

}  // namespace attenmia
