#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "attenmia/binary_io.h"

namespace attenmia {

inline constexpr std::uint16_t kDumpFormatVersion = 1;
inline constexpr double kRowSumTolerance = 1e-5;

struct TokenSequence {
  std::vector<std::int32_t> tokens;
  std::optional<std::string> text;

  std::size_t size() const { return tokens.size(); }
};

// Throws InvalidArgument for an empty sequence, TokenOutOfVocab for an id
// outside [0, vocab_size).
void validate_tokens(const TokenSequence& seq, std::optional<int> vocab_size);

// Byte-level fallback tokenizer: one token per UTF-8 byte.
TokenSequence tokenize_bytes(std::string_view text);

// Read-only view of one T x T attention map, row-major.
struct MapView {
  std::span<const float> data;
  int n = 0;

  float operator()(int row, int col) const {
    return data[static_cast<std::size_t>(row) * n + col];
  }
  std::span<const float> row(int r) const {
    return data.subspan(static_cast<std::size_t>(r) * n, n);
  }
};

// L x H row-stochastic T x T maps stored contiguously as
// [layer][head][row][col]. Accessors here are 0-based; the feature API
// takes 1-based layer/head numbers.
class AttentionStack {
 public:
  AttentionStack() = default;
  AttentionStack(int layers, int heads, int seq_len, bool causal);
  AttentionStack(int layers, int heads, int seq_len, bool causal,
                 std::vector<float> data);

  int layers() const { return layers_; }
  int heads() const { return heads_; }
  int seq_len() const { return seq_len_; }
  bool causal() const { return causal_; }

  std::size_t map_size() const {
    return static_cast<std::size_t>(seq_len_) * seq_len_;
  }

  MapView map(int layer, int head) const;
  std::span<float> mutable_map(int layer, int head);

  float at(int layer, int head, int row, int col) const {
    return data_[offset(layer, head) + static_cast<std::size_t>(row) * seq_len_ + col];
  }
  float& at(int layer, int head, int row, int col) {
    return data_[offset(layer, head) + static_cast<std::size_t>(row) * seq_len_ + col];
  }

  const std::vector<float>& data() const { return data_; }

  friend bool operator==(const AttentionStack&, const AttentionStack&) = default;

 private:
  std::size_t offset(int layer, int head) const {
    return (static_cast<std::size_t>(layer) * heads_ + head) * map_size();
  }

  int layers_ = 0;
  int heads_ = 0;
  int seq_len_ = 0;
  bool causal_ = false;
  std::vector<float> data_;
};

// 1-based location of the first invariant violation.
struct StackViolation {
  int layer = 0;
  int head = 0;
  int row = 0;
  std::string what;
};

std::optional<StackViolation> find_violation(const AttentionStack& stack,
                                             double tolerance = kRowSumTolerance);

// Throws CorruptTensor naming layer/head/row.
void check_stack(const AttentionStack& stack, const std::string& context);

// Keeps the first `new_len` positions. Exact for causal stacks; rows of
// non-causal stacks are renormalized over the kept columns.
AttentionStack truncate_stack(const AttentionStack& stack, int new_len);

// Restricts to the given 0-based layers, in order.
AttentionStack select_layers(const AttentionStack& stack, std::span<const int> layers);

struct LabeledSample {
  std::string sample_id;
  TokenSequence sequence;
  int label = 0;
  std::optional<std::string> group;
};

struct LogProbRecord {
  std::string sample_id;
  std::vector<float> token_logprobs;  // T - 1 values, natural log
  std::string model_tag;

  friend bool operator==(const LogProbRecord&, const LogProbRecord&) = default;
};

struct ManifestEntry {
  std::string id;
  int seq_len = 0;
  std::uint64_t offset = 0;  // relative to the start of the payload region
  std::uint64_t length = 0;
  int label = 0;
  std::optional<std::string> group;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DumpManifest {
  int format_version = kDumpFormatVersion;
  std::string model_tag;
  int layers = 0;
  int heads = 0;
  std::vector<ManifestEntry> samples;
  std::uint64_t schema_hash = 0;  // FNV-1a of the serialized JSON header
};

struct AttentionRecord {
  std::string sample_id;
  AttentionStack stack;
  int label = 0;
  std::optional<std::string> group;

  friend bool operator==(const AttentionRecord&, const AttentionRecord&) = default;
};

Bytes encode_attention_dump(std::span<const AttentionRecord> records,
                            const std::string& model_tag);
void write_attention_dump(std::span<const AttentionRecord> records,
                          const std::string& model_tag,
                          const std::filesystem::path& path);

class AttentionDumpReader {
 public:
  explicit AttentionDumpReader(const std::filesystem::path& path);
  AttentionDumpReader(Bytes file, std::string name);

  const DumpManifest& manifest() const { return manifest_; }
  const std::string& name() const { return name_; }
  bool contains(const std::string& sample_id) const;
  const ManifestEntry& entry(const std::string& sample_id) const;

  // Materializes and validates one stack. Throws UnknownSample, CorruptTensor.
  AttentionRecord read(const std::string& sample_id) const;
  std::vector<AttentionRecord> read_all() const;

 private:
  void parse();

  Bytes file_;
  std::string name_;
  std::size_t payload_start_ = 0;
  DumpManifest manifest_;
  std::unordered_map<std::string, std::size_t> index_;
};

AttentionStack read_attention_dump(const std::filesystem::path& path,
                                   const std::string& sample_id);

Bytes encode_logprob_dump(std::span<const LogProbRecord> records);
void write_logprob_dump(std::span<const LogProbRecord> records,
                        const std::filesystem::path& path);
std::vector<LogProbRecord> read_logprob_dump(const std::filesystem::path& path);
std::vector<LogProbRecord> decode_logprob_dump(std::span<const std::uint8_t> file,
                                               const std::string& name);

}  // namespace attenmia
