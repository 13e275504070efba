#pragma once

// Small on-disk inputs shared by the extraction, CLI, and acceptance tests.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "attenmia/classifier.h"
#include "attenmia/perturb.h"
#include "attenmia/tiny_transformer.h"

struct ExtractionFixture {
  std::filesystem::path corpus;  // JSON lines
  std::filesystem::path plan;
  std::filesystem::path model;   // MLPM
  std::vector<attenmia::PerturbationSpec> specs;
  attenmia::MlpModel mlp;
};

// Two-layer byte-level model used wherever a weights file is needed.
attenmia::ModelConfig fixture_model_config();

// Every head attends almost entirely to the first position: queries are
// constant across tokens and only position 1 has a large key.
attenmia::WeightBundle anchored_weights(const attenmia::ModelConfig& config, std::uint64_t seed);

// `n` candidates; even-numbered ones copy the reference verbatim. Dumps come
// from two random tiny transformers (xl and small).
ExtractionFixture make_extraction_fixture(const std::filesystem::path& dir, int n,
                                          std::uint64_t seed);
