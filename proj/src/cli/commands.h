#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attenmia/classifier.h"
#include "attenmia/perturb.h"
#include "attenmia/pipeline.h"

namespace attenmia::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

struct Common {
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct SynthOptions {
  int members = 100;
  int nonmembers = 100;
  int layers = 4;
  int heads = 4;
  int seq_len = 16;
  int vocab = 256;
  std::filesystem::path out;
};

struct InferOptions {
  std::filesystem::path weights;
  std::filesystem::path samples;
  std::filesystem::path out;
  std::optional<std::filesystem::path> plan;
  std::string model_tag = "tiny-transformer";
};

// Attention inputs shared by features, audit, and rank.
struct FeatureInputs {
  std::filesystem::path attn;
  std::optional<std::filesystem::path> plan;
  std::vector<std::filesystem::path> perturbed;  // default: <stem>.p{k}.atnd
  FeatureOptions families;
};

struct FeaturesOptions {
  FeatureInputs inputs;
  std::filesystem::path out_csv;
  std::optional<std::filesystem::path> out_cache;
};

struct AuditOptions {
  FeatureInputs inputs;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> logprobs;
  std::optional<std::filesystem::path> model_out;
  TrainConfig train;
  bool permute_labels = false;
  int hellinger_bins = 32;
};

struct MaskingOptions {
  std::filesystem::path weights;
  std::string tokens;  // comma-separated ids
  std::string text;    // byte-tokenized when tokens is empty
  std::string mode = "independent";
  int k_max = 1;
  std::filesystem::path out;
};

struct RankOptions {
  std::filesystem::path corpus;
  std::filesystem::path model;
  std::optional<std::filesystem::path> plan;
  FeatureOptions families;
  std::size_t top_n = 0;
  std::size_t bottom_n = 0;
  bool full = false;
  std::filesystem::path out_csv;
  std::filesystem::path out_json;
};

struct BaselinesOptions {
  std::filesystem::path logprobs;
  std::optional<std::filesystem::path> texts;      // JSON lines {id, text}
  std::optional<std::filesystem::path> reference;  // LGPD of a reference model
  double k_percent = 20.0;
  std::filesystem::path out;
};

// "2", "1,3", or an inclusive range "1..2".
std::vector<int> parse_layer_list(const std::string& text);
// "64,32", or "none" for no hidden layer.
std::vector<int> parse_hidden(const std::string& text);

// Perturbed dumps written next to an original dump, one per plan spec.
std::filesystem::path perturbed_dump_path(const std::filesystem::path& original, std::size_t k);
std::filesystem::path plan_path_for(const std::filesystem::path& original);

void cmd_synth(const SynthOptions& o, const Common& c);
void cmd_infer(const InferOptions& o, const Common& c);
void cmd_features(const FeaturesOptions& o, const Common& c);
void cmd_audit(const AuditOptions& o, const Common& c);
void cmd_masking(const MaskingOptions& o, const Common& c);
void cmd_rank(const RankOptions& o, const Common& c);
void cmd_baselines(const BaselinesOptions& o, const Common& c);

}  // namespace attenmia::cli
