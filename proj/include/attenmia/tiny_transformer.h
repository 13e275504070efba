#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attenmia/attention_model.h"
#include "attenmia/attn_data.h"
#include "attenmia/binary_io.h"

namespace attenmia {

inline constexpr std::uint16_t kWeightsFormatVersion = 1;

struct ModelConfig {
  int n_layers = 0;
  int n_heads = 0;
  int d_model = 0;
  int d_ff = 0;
  int vocab_size = 0;
  int max_positions = 0;
  double layernorm_eps = 1e-5;

  int head_dim() const { return d_model / n_heads; }
  // Throws InvalidShape.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Matrices are row-major [in][out]; activations are row vectors (y = x W).
struct LayerWeights {
  std::vector<float> ln1_scale, ln1_bias;
  std::vector<float> w_q, w_k, w_v, w_o;  // d x d
  std::vector<float> ln2_scale, ln2_bias;
  std::vector<float> mlp_w_in;   // d x d_ff
  std::vector<float> mlp_b_in;   // d_ff
  std::vector<float> mlp_w_out;  // d_ff x d
  std::vector<float> mlp_b_out;  // d

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct WeightBundle {
  std::vector<float> tok_emb;  // V x d
  std::vector<float> pos_emb;  // max_positions x d
  std::vector<LayerWeights> layers;
  std::vector<float> lnf_scale, lnf_bias;
  std::optional<std::vector<float>> unembed;  // d x V; tied to tok_emb when absent

  friend bool operator==(const WeightBundle&, const WeightBundle&) = default;
};

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
};

// Every tensor a bundle for `config` must carry, in file order. Layer names
// are 0-based ("layer.0.w_q").
std::vector<NamedTensor> tensor_layout(const ModelConfig& config, bool tied_unembedding);

std::size_t parameter_count(const ModelConfig& config, bool tied_unembedding);

struct LoadedWeights {
  ModelConfig config;
  WeightBundle weights;
};

// Throws MissingTensor, ShapeMismatch, NonFiniteWeight, BadMagic, TruncatedFile.
LoadedWeights load_weights(const std::filesystem::path& path);
LoadedWeights decode_weights(std::span<const std::uint8_t> file, const std::string& name);
Bytes encode_weights(const ModelConfig& config, const WeightBundle& weights);
void save_weights(const ModelConfig& config, const WeightBundle& weights,
                  const std::filesystem::path& path);

// Seeded Gaussian initialization; layernorm scales 1, biases 0.
WeightBundle random_weights(const ModelConfig& config, std::uint64_t seed,
                            double stddev = 0.5, bool tied_unembedding = true);

struct ForwardOutput {
  AttentionStack attention;            // causal
  std::vector<double> token_logprobs;  // T - 1
  std::vector<double> hidden_final;    // T x d, after the final layernorm
};

// Pre-layernorm GPT-style decoder with learned absolute positions.
// Throws TokenOutOfVocab, SequenceTooLong.
ForwardOutput forward(const ModelConfig& config, const WeightBundle& weights,
                      const TokenSequence& tokens);

class TinyTransformer : public AttentionModel {
 public:
  TinyTransformer(ModelConfig config, WeightBundle weights);

  const ModelConfig& config() const { return config_; }
  const WeightBundle& weights() const { return weights_; }

  ForwardOutput run(const TokenSequence& tokens) const {
    return forward(config_, weights_, tokens);
  }
  AttentionStack attention(const TokenSequence& tokens) const override {
    return run(tokens).attention;
  }
  int vocab_size() const override { return config_.vocab_size; }

 private:
  ModelConfig config_;
  WeightBundle weights_;
};

// Runs forward on every sample and writes the ATND dump to `out_path` and
// the LGPD dump next to it (extension .lgpd).
void dump_attention(const ModelConfig& config, const WeightBundle& weights,
                    std::span<const LabeledSample> samples,
                    const std::filesystem::path& out_path,
                    const std::string& model_tag = "tiny-transformer", int jobs = 1);

}  // namespace attenmia
