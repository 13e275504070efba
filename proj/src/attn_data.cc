#include "attenmia/attn_data.h"

#include <cmath>
#include <unordered_set>

#include "attenmia/error.h"
#include "json.hpp"

namespace attenmia {

using ordered_json = nlohmann::ordered_json;

void validate_tokens(const TokenSequence& seq, std::optional<int> vocab_size) {
  if (seq.tokens.empty()) fail(ErrorCode::kInvalidArgument, "token sequence is empty");
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const auto id = seq.tokens[i];
    if (id < 0 || (vocab_size && id >= *vocab_size)) {
      fail(ErrorCode::kTokenOutOfVocab,
           "token " + std::to_string(id) + " at position " + std::to_string(i + 1) +
               " is outside the vocabulary");
    }
  }
}

TokenSequence tokenize_bytes(std::string_view text) {
  TokenSequence seq;
  seq.text = std::string(text);
  seq.tokens.reserve(text.size());
  for (unsigned char c : text) seq.tokens.push_back(c);
  return seq;
}

AttentionStack::AttentionStack(int layers, int heads, int seq_len, bool causal)
    : layers_(layers), heads_(heads), seq_len_(seq_len), causal_(causal) {
  if (layers <= 0 || heads <= 0 || seq_len <= 0) {
    fail(ErrorCode::kInvalidShape, "attention stack dimensions must be positive");
  }
  data_.assign(static_cast<std::size_t>(layers) * heads * map_size(), 0.0f);
}

AttentionStack::AttentionStack(int layers, int heads, int seq_len, bool causal,
                               std::vector<float> data)
    : AttentionStack(layers, heads, seq_len, causal) {
  if (data.size() != data_.size()) {
    fail(ErrorCode::kShapeMismatch, "attention payload has " + std::to_string(data.size()) +
                                        " values, expected " + std::to_string(data_.size()));
  }
  data_ = std::move(data);
}

MapView AttentionStack::map(int layer, int head) const {
  return MapView{std::span<const float>(data_).subspan(offset(layer, head), map_size()),
                 seq_len_};
}

std::span<float> AttentionStack::mutable_map(int layer, int head) {
  return std::span<float>(data_).subspan(offset(layer, head), map_size());
}

std::optional<StackViolation> find_violation(const AttentionStack& stack, double tolerance) {
  const int n = stack.seq_len();
  for (int l = 0; l < stack.layers(); ++l) {
    for (int h = 0; h < stack.heads(); ++h) {
      const MapView m = stack.map(l, h);
      for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
          const float v = m(i, j);
          if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            return StackViolation{l + 1, h + 1, i + 1,
                                  "entry " + std::to_string(j + 1) + " outside [0, 1]"};
          }
          if (stack.causal() && j > i && v != 0.0f) {
            return StackViolation{l + 1, h + 1, i + 1,
                                  "non-zero causal entry at column " + std::to_string(j + 1)};
          }
          sum += v;
        }
        if (std::abs(sum - 1.0) > tolerance) {
          return StackViolation{l + 1, h + 1, i + 1, "row sums to " + std::to_string(sum)};
        }
      }
    }
  }
  return std::nullopt;
}

void check_stack(const AttentionStack& stack, const std::string& context) {
  if (auto v = find_violation(stack)) {
    fail(ErrorCode::kCorruptTensor, context + ": layer " + std::to_string(v->layer) +
                                        " head " + std::to_string(v->head) + " row " +
                                        std::to_string(v->row) + ": " + v->what);
  }
}

AttentionStack truncate_stack(const AttentionStack& stack, int new_len) {
  if (new_len <= 0) fail(ErrorCode::kInvalidArgument, "truncation length must be positive");
  if (new_len >= stack.seq_len()) return stack;
  AttentionStack out(stack.layers(), stack.heads(), new_len, stack.causal());
  for (int l = 0; l < stack.layers(); ++l) {
    for (int h = 0; h < stack.heads(); ++h) {
      for (int i = 0; i < new_len; ++i) {
        double kept = 0.0;
        for (int j = 0; j < new_len; ++j) kept += stack.at(l, h, i, j);
        for (int j = 0; j < new_len; ++j) {
          float v = stack.at(l, h, i, j);
          if (!stack.causal() && kept > 0.0) v = static_cast<float>(v / kept);
          out.at(l, h, i, j) = v;
        }
      }
    }
  }
  return out;
}

AttentionStack select_layers(const AttentionStack& stack, std::span<const int> layers) {
  AttentionStack out(static_cast<int>(layers.size()), stack.heads(), stack.seq_len(),
                     stack.causal());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const int l = layers[k];
    if (l < 0 || l >= stack.layers()) {
      fail(ErrorCode::kIndexOutOfRange, "layer " + std::to_string(l + 1) + " not in stack");
    }
    for (int h = 0; h < stack.heads(); ++h) {
      const MapView src = stack.map(l, h);
      auto dst = out.mutable_map(static_cast<int>(k), h);
      std::copy(src.data.begin(), src.data.end(), dst.begin());
    }
  }
  return out;
}

namespace {

bool infer_causal(const AttentionStack& stack) {
  const int n = stack.seq_len();
  for (int l = 0; l < stack.layers(); ++l)
    for (int h = 0; h < stack.heads(); ++h)
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (stack.at(l, h, i, j) != 0.0f) return false;
  return true;
}

ordered_json group_json(const std::optional<std::string>& group) {
  return group ? ordered_json(*group) : ordered_json(nullptr);
}

std::optional<std::string> parse_group(const ordered_json& j) {
  if (!j.contains("group") || j["group"].is_null()) return std::nullopt;
  return j["group"].get<std::string>();
}

ordered_json parse_header(const std::string& header, const std::string& name) {
  try {
    return ordered_json::parse(header);
  } catch (const std::exception& e) {
    fail(ErrorCode::kBadMagic, name + ": malformed JSON header: " + e.what());
  }
}

void check_offsets(const std::vector<ManifestEntry>& samples, std::size_t payload_size,
                   const std::string& name) {
  std::uint64_t cursor = 0;
  std::unordered_set<std::string> seen;
  for (const auto& e : samples) {
    if (!seen.insert(e.id).second) {
      fail(ErrorCode::kDuplicateSampleId, name + ": duplicate sample id '" + e.id + "'");
    }
    if (e.offset < cursor) {
      fail(ErrorCode::kCorruptTensor, name + ": overlapping payload for sample '" + e.id + "'");
    }
    if (e.offset + e.length > payload_size) {
      fail(ErrorCode::kTruncatedFile, name + ": payload of sample '" + e.id + "' truncated");
    }
    cursor = e.offset + e.length;
  }
}

}  // namespace

Bytes encode_attention_dump(std::span<const AttentionRecord> records,
                            const std::string& model_tag) {
  int layers = 0, heads = 0;
  std::unordered_set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.sample_id).second) {
      fail(ErrorCode::kDuplicateSampleId, "duplicate sample id '" + r.sample_id + "'");
    }
    if (layers == 0) {
      layers = r.stack.layers();
      heads = r.stack.heads();
    } else if (r.stack.layers() != layers || r.stack.heads() != heads) {
      fail(ErrorCode::kHeterogeneousShape,
           "sample '" + r.sample_id + "' has shape L=" + std::to_string(r.stack.layers()) +
               " H=" + std::to_string(r.stack.heads()) + ", expected L=" +
               std::to_string(layers) + " H=" + std::to_string(heads));
    }
    if (r.label != 0 && r.label != 1) {
      fail(ErrorCode::kInvalidArgument, "sample '" + r.sample_id + "' label must be 0 or 1");
    }
    check_stack(r.stack, "sample '" + r.sample_id + "'");
  }

  ordered_json header;
  header["format_version"] = kDumpFormatVersion;
  header["model_tag"] = model_tag;
  header["layers"] = layers;
  header["heads"] = heads;
  header["samples"] = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& r : records) {
    const std::uint64_t length = r.stack.data().size() * sizeof(float);
    ordered_json e;
    e["id"] = r.sample_id;
    e["seq_len"] = r.stack.seq_len();
    e["offset"] = offset;
    e["length"] = length;
    e["label"] = r.label;
    e["group"] = group_json(r.group);
    header["samples"].push_back(std::move(e));
    offset += length;
  }

  Bytes out = frame_header("ATND", kDumpFormatVersion, header.dump());
  out.reserve(out.size() + offset);
  for (const auto& r : records) {
    for (float v : r.stack.data()) put_f32(out, v);
  }
  return out;
}

void write_attention_dump(std::span<const AttentionRecord> records,
                          const std::string& model_tag, const std::filesystem::path& path) {
  write_file(path, encode_attention_dump(records, model_tag));
}

AttentionDumpReader::AttentionDumpReader(const std::filesystem::path& path)
    : file_(read_file(path)), name_(path.string()) {
  parse();
}

AttentionDumpReader::AttentionDumpReader(Bytes file, std::string name)
    : file_(std::move(file)), name_(std::move(name)) {
  parse();
}

void AttentionDumpReader::parse() {
  const Container c = parse_container(file_, "ATND", name_);
  if (c.version != kDumpFormatVersion) {
    fail(ErrorCode::kBadMagic, name_ + ": unsupported ATND version " + std::to_string(c.version));
  }
  payload_start_ = c.payload_start;
  const ordered_json header = parse_header(c.header, name_);
  try {
    manifest_.format_version = header.at("format_version").get<int>();
    manifest_.model_tag = header.at("model_tag").get<std::string>();
    manifest_.layers = header.at("layers").get<int>();
    manifest_.heads = header.at("heads").get<int>();
    for (const auto& s : header.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.seq_len = s.at("seq_len").get<int>();
      e.offset = s.at("offset").get<std::uint64_t>();
      e.length = s.at("length").get<std::uint64_t>();
      e.label = s.at("label").get<int>();
      e.group = parse_group(s);
      manifest_.samples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kBadMagic, name_ + ": manifest missing or mistyped key: " + e.what());
  }
  manifest_.schema_hash = fnv1a64(c.header);

  for (const auto& e : manifest_.samples) {
    const std::uint64_t expected = static_cast<std::uint64_t>(manifest_.layers) *
                                   manifest_.heads * e.seq_len * e.seq_len * sizeof(float);
    if (e.seq_len <= 0 || e.length != expected) {
      fail(ErrorCode::kCorruptTensor, name_ + ": sample '" + e.id + "' declares length " +
                                          std::to_string(e.length) + ", expected " +
                                          std::to_string(expected));
    }
    if (e.label != 0 && e.label != 1) {
      fail(ErrorCode::kCorruptTensor, name_ + ": sample '" + e.id + "' has label outside {0,1}");
    }
  }
  check_offsets(manifest_.samples, file_.size() - payload_start_, name_);
  for (std::size_t i = 0; i < manifest_.samples.size(); ++i) {
    index_.emplace(manifest_.samples[i].id, i);
  }
}

bool AttentionDumpReader::contains(const std::string& sample_id) const {
  return index_.count(sample_id) > 0;
}

const ManifestEntry& AttentionDumpReader::entry(const std::string& sample_id) const {
  auto it = index_.find(sample_id);
  if (it == index_.end()) {
    fail(ErrorCode::kUnknownSample, name_ + ": no sample '" + sample_id + "'");
  }
  return manifest_.samples[it->second];
}

AttentionRecord AttentionDumpReader::read(const std::string& sample_id) const {
  const ManifestEntry& e = entry(sample_id);
  const std::size_t count = e.length / sizeof(float);
  std::vector<float> values(count);
  const std::size_t base = payload_start_ + e.offset;
  for (std::size_t k = 0; k < count; ++k) values[k] = get_f32(file_, base + k * sizeof(float));

  AttentionStack probe(manifest_.layers, manifest_.heads, e.seq_len, false, values);
  const bool causal = infer_causal(probe);
  AttentionRecord rec{e.id,
                      AttentionStack(manifest_.layers, manifest_.heads, e.seq_len, causal,
                                     std::move(values)),
                      e.label, e.group};
  check_stack(rec.stack, name_ + " sample '" + e.id + "'");
  return rec;
}

std::vector<AttentionRecord> AttentionDumpReader::read_all() const {
  std::vector<AttentionRecord> out;
  out.reserve(manifest_.samples.size());
  for (const auto& e : manifest_.samples) out.push_back(read(e.id));
  return out;
}

AttentionStack read_attention_dump(const std::filesystem::path& path,
                                   const std::string& sample_id) {
  return AttentionDumpReader(path).read(sample_id).stack;
}

Bytes encode_logprob_dump(std::span<const LogProbRecord> records) {
  std::unordered_set<std::string> ids;
  std::string model_tag = records.empty() ? std::string() : records.front().model_tag;
  for (const auto& r : records) {
    if (!ids.insert(r.sample_id).second) {
      fail(ErrorCode::kDuplicateSampleId, "duplicate sample id '" + r.sample_id + "'");
    }
    if (r.model_tag != model_tag) {
      fail(ErrorCode::kHeterogeneousShape, "records carry different model tags ('" + model_tag +
                                               "' vs '" + r.model_tag + "')");
    }
    for (float v : r.token_logprobs) {
      if (!std::isfinite(v) || v > 0.0f) {
        fail(ErrorCode::kInvalidLogProb,
             "sample '" + r.sample_id + "' has log-prob " + std::to_string(v) + " (must be <= 0)");
      }
    }
  }

  ordered_json header;
  header["format_version"] = kDumpFormatVersion;
  header["model_tag"] = model_tag;
  header["samples"] = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& r : records) {
    const std::uint64_t length = r.token_logprobs.size() * sizeof(float);
    ordered_json e;
    e["id"] = r.sample_id;
    e["seq_len"] = r.token_logprobs.size() + 1;
    e["offset"] = offset;
    e["length"] = length;
    header["samples"].push_back(std::move(e));
    offset += length;
  }
  Bytes out = frame_header("LGPD", kDumpFormatVersion, header.dump());
  for (const auto& r : records) {
    for (float v : r.token_logprobs) put_f32(out, v);
  }
  return out;
}

void write_logprob_dump(std::span<const LogProbRecord> records,
                        const std::filesystem::path& path) {
  write_file(path, encode_logprob_dump(records));
}

std::vector<LogProbRecord> decode_logprob_dump(std::span<const std::uint8_t> file,
                                               const std::string& name) {
  const Container c = parse_container(file, "LGPD", name);
  if (c.version != kDumpFormatVersion) {
    fail(ErrorCode::kBadMagic, name + ": unsupported LGPD version " + std::to_string(c.version));
  }
  const ordered_json header = parse_header(c.header, name);
  std::string model_tag;
  std::vector<ManifestEntry> entries;
  try {
    model_tag = header.at("model_tag").get<std::string>();
    for (const auto& s : header.at("samples")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.seq_len = s.at("seq_len").get<int>();
      e.offset = s.at("offset").get<std::uint64_t>();
      e.length = s.at("length").get<std::uint64_t>();
      entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kBadMagic, name + ": manifest missing or mistyped key: " + e.what());
  }
  check_offsets(entries, file.size() - c.payload_start, name);

  std::vector<LogProbRecord> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    if (e.seq_len < 1 || e.length != static_cast<std::uint64_t>(e.seq_len - 1) * sizeof(float)) {
      fail(ErrorCode::kCorruptTensor, name + ": sample '" + e.id + "' length mismatch");
    }
    LogProbRecord r{e.id, {}, model_tag};
    r.token_logprobs.resize(e.seq_len - 1);
    for (int k = 0; k + 1 < e.seq_len; ++k) {
      const float v = get_f32(file, c.payload_start + e.offset + k * sizeof(float));
      if (!std::isfinite(v) || v > 0.0f) {
        fail(ErrorCode::kInvalidLogProb, name + ": sample '" + e.id + "' has log-prob " +
                                             std::to_string(v) + " at token " +
                                             std::to_string(k + 2));
      }
      r.token_logprobs[k] = v;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<LogProbRecord> read_logprob_dump(const std::filesystem::path& path) {
  const Bytes file = read_file(path);
  return decode_logprob_dump(file, path.string());
}

}  // namespace attenmia
