#include "attenmia/pipeline.h"

#include <algorithm>

#include "attenmia/error.h"
#include "attenmia/parallel.h"

namespace attenmia {

namespace {

std::vector<FeatureColumn> concat(const FeatureSchema& a, const FeatureSchema& b) {
  std::vector<FeatureColumn> cols = a.columns();
  cols.insert(cols.end(), b.columns().begin(), b.columns().end());
  return cols;
}

FeatureSchema attention_schema(int layers, int heads, const FeatureOptions& o) {
  if (!o.transitional) {
    if (!o.concentration) return FeatureSchema();
    // Concentration alone works for single-layer stacks too.
    TransitionalOptions t{true, o.layers};
    std::vector<FeatureColumn> cols;
    for (const auto& c : transitional_schema(layers, heads, t).columns()) {
      if (c.family == FeatureFamily::kConcentration) cols.push_back(c);
    }
    return FeatureSchema(std::move(cols));
  }
  return transitional_schema(layers, heads, TransitionalOptions{o.concentration, o.layers});
}

}  // namespace

FeatureSchema feature_schema(int layers, int heads, std::span<const PerturbationSpec> specs,
                             const FeatureOptions& options) {
  if (!options.concentration && !options.transitional && !options.perturbation) {
    fail(ErrorCode::kInvalidArgument, "every feature family is disabled");
  }
  const FeatureSchema base = attention_schema(layers, heads, options);
  if (!options.perturbation) return base;
  if (specs.empty()) fail(ErrorCode::kInvalidArgument, "perturbation family needs a plan");
  return FeatureSchema(concat(base, perturbation_schema(specs, layers, heads, options.layers)));
}

FeatureVector sample_features(const AttentionStack& original,
                              std::span<const AttentionStack> perturbed,
                              std::span<const PerturbationSpec> specs,
                              const FeatureOptions& options, const std::string& sample_id) {
  const FeatureSchema schema =
      feature_schema(original.layers(), original.heads(), specs, options);
  const bool truncate = options.max_len > 0 && options.max_len < original.seq_len();
  const AttentionStack stack = truncate ? truncate_stack(original, options.max_len) : original;

  FeatureVector out{sample_id, {}, schema.hash()};
  out.values.reserve(schema.size());
  if (options.transitional) {
    out.values = extract_transitional(stack, {options.concentration, options.layers}).values;
  } else if (options.concentration) {
    for (int l = 1; l <= stack.layers(); ++l) {
      if (!options.layers.empty() &&
          std::find(options.layers.begin(), options.layers.end(), l) == options.layers.end()) {
        continue;
      }
      for (int h = 1; h <= stack.heads(); ++h) out.values.push_back(kl_to_uniform(stack, l, h));
    }
  }
  if (options.perturbation) {
    if (perturbed.size() != specs.size()) {
      fail(ErrorCode::kMissingDump, "sample '" + sample_id + "' needs " +
                                        std::to_string(specs.size()) + " perturbed stacks, got " +
                                        std::to_string(perturbed.size()));
    }
    std::vector<PerturbedPair> pairs;
    pairs.reserve(specs.size());
    for (std::size_t k = 0; k < specs.size(); ++k) {
      if (perturbed[k].layers() != original.layers() || perturbed[k].heads() != original.heads()) {
        fail(ErrorCode::kHeterogeneousShape,
             "perturbed stack " + std::to_string(k) + " of '" + sample_id + "' has another shape");
      }
      PerturbedPair pair{original, perturbed[k],
                         alignment_for(specs[k], original.seq_len(), perturbed[k].seq_len())};
      pairs.push_back(truncate ? truncate_pair(pair, options.max_len) : std::move(pair));
    }
    const FeatureVector p = perturbation_features(pairs, specs, options.layers, sample_id);
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
  }
  if (out.values.size() != schema.size()) {
    fail(ErrorCode::kInternal, "feature vector does not match its schema");
  }
  return out;
}

FeatureMatrix dump_features(const AttentionDumpReader& original,
                            std::span<const AttentionDumpReader> perturbed,
                            std::span<const PerturbationSpec> specs,
                            const FeatureOptions& options, int jobs) {
  const DumpManifest& m = original.manifest();
  if (options.perturbation && perturbed.size() != specs.size()) {
    fail(ErrorCode::kMissingDump, "expected " + std::to_string(specs.size()) +
                                      " perturbed dumps, got " + std::to_string(perturbed.size()));
  }
  for (const auto& p : perturbed) {
    for (const auto& e : m.samples) {
      if (!p.contains(e.id)) {
        fail(ErrorCode::kMissingDump, p.name() + " has no sample '" + e.id + "'");
      }
    }
  }
  FeatureMatrix out;
  out.schema = feature_schema(m.layers, m.heads, specs, options);
  const std::size_t n = m.samples.size();
  std::vector<FeatureVector> rows(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const std::string& id = m.samples[i].id;
    const AttentionRecord rec = original.read(id);
    std::vector<AttentionStack> pert;
    if (options.perturbation) {
      for (const auto& p : perturbed) pert.push_back(p.read(id).stack);
    }
    rows[i] = sample_features(rec.stack, pert, specs, options, id);
  });
  for (std::size_t i = 0; i < n; ++i) out.append(rows[i], m.samples[i].label);
  return out;
}

}  // namespace attenmia
