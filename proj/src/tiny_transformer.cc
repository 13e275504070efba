#include "attenmia/tiny_transformer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "attenmia/error.h"
#include "attenmia/parallel.h"
#include "attenmia/rng.h"
#include "json.hpp"

namespace attenmia {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kMaskedLogit = -1e30;

std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

std::string layer_name(int layer, const char* leaf) {
  return "layer." + std::to_string(layer) + "." + leaf;
}

// Pointers into a bundle in tensor_layout() order.
std::vector<std::vector<float>*> bundle_slots(WeightBundle& w) {
  std::vector<std::vector<float>*> slots = {&w.tok_emb, &w.pos_emb};
  for (auto& l : w.layers) {
    for (auto* p : {&l.ln1_scale, &l.ln1_bias, &l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln2_scale,
                    &l.ln2_bias, &l.mlp_w_in, &l.mlp_b_in, &l.mlp_w_out, &l.mlp_b_out}) {
      slots.push_back(p);
    }
  }
  slots.push_back(&w.lnf_scale);
  slots.push_back(&w.lnf_bias);
  if (w.unembed) slots.push_back(&*w.unembed);
  return slots;
}

void layer_norm(std::span<const double> x, std::span<const float> scale,
                std::span<const float> bias, double eps, std::span<double> out) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t k = 0; k < d; ++k) out[k] = (x[k] - mean) * inv * scale[k] + bias[k];
}

// out[T x n] = in[T x m] * w[m x n]
void matmul(std::span<const double> in, int rows, int m, std::span<const float> w, int n,
            std::span<double> out) {
  for (int r = 0; r < rows; ++r) {
    double* o = out.data() + static_cast<std::size_t>(r) * n;
    std::fill(o, o + n, 0.0);
    const double* x = in.data() + static_cast<std::size_t>(r) * m;
    for (int k = 0; k < m; ++k) {
      const double xv = x[k];
      const float* wr = w.data() + static_cast<std::size_t>(k) * n;
      for (int c = 0; c < n; ++c) o[c] += xv * wr[c];
    }
  }
}

double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_ff <= 0 || vocab_size <= 0 ||
      max_positions <= 0) {
    fail(ErrorCode::kInvalidShape, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    fail(ErrorCode::kInvalidShape, "d_model " + std::to_string(d_model) +
                                       " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (!(layernorm_eps > 0.0)) fail(ErrorCode::kInvalidShape, "layernorm_eps must be positive");
}

std::vector<NamedTensor> tensor_layout(const ModelConfig& c, bool tied_unembedding) {
  const int d = c.d_model;
  std::vector<NamedTensor> out = {{"tok_emb", {c.vocab_size, d}},
                                  {"pos_emb", {c.max_positions, d}}};
  for (int l = 0; l < c.n_layers; ++l) {
    out.push_back({layer_name(l, "ln1.scale"), {d}});
    out.push_back({layer_name(l, "ln1.bias"), {d}});
    out.push_back({layer_name(l, "w_q"), {d, d}});
    out.push_back({layer_name(l, "w_k"), {d, d}});
    out.push_back({layer_name(l, "w_v"), {d, d}});
    out.push_back({layer_name(l, "w_o"), {d, d}});
    out.push_back({layer_name(l, "ln2.scale"), {d}});
    out.push_back({layer_name(l, "ln2.bias"), {d}});
    out.push_back({layer_name(l, "mlp.w_in"), {d, c.d_ff}});
    out.push_back({layer_name(l, "mlp.b_in"), {c.d_ff}});
    out.push_back({layer_name(l, "mlp.w_out"), {c.d_ff, d}});
    out.push_back({layer_name(l, "mlp.b_out"), {d}});
  }
  out.push_back({"ln_f.scale", {d}});
  out.push_back({"ln_f.bias", {d}});
  if (!tied_unembedding) out.push_back({"unembed", {d, c.vocab_size}});
  return out;
}

std::size_t parameter_count(const ModelConfig& config, bool tied_unembedding) {
  std::size_t n = 0;
  for (const auto& t : tensor_layout(config, tied_unembedding)) n += numel(t.shape);
  return n;
}

Bytes encode_weights(const ModelConfig& config, const WeightBundle& weights) {
  config.validate();
  WeightBundle copy = weights;
  const auto layout = tensor_layout(config, !weights.unembed.has_value());
  if (copy.layers.size() != static_cast<std::size_t>(config.n_layers)) {
    fail(ErrorCode::kShapeMismatch, "bundle has " + std::to_string(copy.layers.size()) +
                                        " layers, config declares " +
                                        std::to_string(config.n_layers));
  }
  const auto slots = bundle_slots(copy);

  ordered_json header;
  header["n_layers"] = config.n_layers;
  header["n_heads"] = config.n_heads;
  header["d_model"] = config.d_model;
  header["d_ff"] = config.d_ff;
  header["vocab_size"] = config.vocab_size;
  header["max_positions"] = config.max_positions;
  header["layernorm_eps"] = config.layernorm_eps;
  header["tensor_index"] = ordered_json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (slots[i]->size() != numel(layout[i].shape)) {
      fail(ErrorCode::kShapeMismatch, "tensor " + layout[i].name + " has " +
                                          std::to_string(slots[i]->size()) + " values");
    }
    header["tensor_index"].push_back(
        {{"name", layout[i].name}, {"shape", layout[i].shape}, {"offset", offset}});
    offset += slots[i]->size() * sizeof(float);
  }
  Bytes out = frame_header("WTSB", kWeightsFormatVersion, header.dump());
  for (const auto* s : slots)
    for (float v : *s) put_f32(out, v);
  return out;
}

void save_weights(const ModelConfig& config, const WeightBundle& weights,
                  const std::filesystem::path& path) {
  write_file(path, encode_weights(config, weights));
}

LoadedWeights decode_weights(std::span<const std::uint8_t> file, const std::string& name) {
  const Container c = parse_container(file, "WTSB", name);
  if (c.version != kWeightsFormatVersion) {
    fail(ErrorCode::kBadMagic, name + ": unsupported WTSB version " + std::to_string(c.version));
  }
  LoadedWeights out;
  struct IndexEntry {
    std::vector<int> shape;
    std::uint64_t offset;
  };
  std::map<std::string, IndexEntry> index;
  try {
    const auto header = ordered_json::parse(c.header);
    out.config.n_layers = header.at("n_layers").get<int>();
    out.config.n_heads = header.at("n_heads").get<int>();
    out.config.d_model = header.at("d_model").get<int>();
    out.config.d_ff = header.at("d_ff").get<int>();
    out.config.vocab_size = header.at("vocab_size").get<int>();
    out.config.max_positions = header.at("max_positions").get<int>();
    if (header.contains("layernorm_eps")) {
      out.config.layernorm_eps = header["layernorm_eps"].get<double>();
    }
    for (const auto& t : header.at("tensor_index")) {
      index[t.at("name").get<std::string>()] =
          IndexEntry{t.at("shape").get<std::vector<int>>(), t.at("offset").get<std::uint64_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kBadMagic, name + ": malformed WTSB header: " + e.what());
  }
  out.config.validate();

  const bool tied = index.count("unembed") == 0;
  out.weights.layers.resize(out.config.n_layers);
  if (!tied) out.weights.unembed.emplace();
  const auto layout = tensor_layout(out.config, tied);
  const auto slots = bundle_slots(out.weights);
  const std::size_t payload = file.size() - c.payload_start;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    auto it = index.find(layout[i].name);
    if (it == index.end()) fail(ErrorCode::kMissingTensor, name + ": missing tensor " + layout[i].name);
    if (it->second.shape != layout[i].shape) {
      fail(ErrorCode::kShapeMismatch, name + ": tensor " + layout[i].name + " has wrong shape");
    }
    const std::size_t n = numel(layout[i].shape);
    if (it->second.offset + n * sizeof(float) > payload) {
      fail(ErrorCode::kTruncatedFile, name + ": tensor " + layout[i].name + " truncated");
    }
    slots[i]->resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const float v = get_f32(file, c.payload_start + it->second.offset + k * sizeof(float));
      if (!std::isfinite(v)) {
        fail(ErrorCode::kNonFiniteWeight, name + ": tensor " + layout[i].name + " element " +
                                              std::to_string(k) + " is not finite");
      }
      (*slots[i])[k] = v;
    }
  }
  return out;
}

LoadedWeights load_weights(const std::filesystem::path& path) {
  const Bytes file = read_file(path);
  return decode_weights(file, path.string());
}

WeightBundle random_weights(const ModelConfig& config, std::uint64_t seed, double stddev,
                            bool tied_unembedding) {
  config.validate();
  WeightBundle w;
  w.layers.resize(config.n_layers);
  if (!tied_unembedding) w.unembed.emplace();
  const auto layout = tensor_layout(config, tied_unembedding);
  const auto slots = bundle_slots(w);
  Rng rng(seed);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const std::string& n = layout[i].name;
    const std::size_t count = numel(layout[i].shape);
    const bool is_scale = n.ends_with(".scale");
    const bool is_bias = n.ends_with(".bias") || n.ends_with("b_in") || n.ends_with("b_out");
    slots[i]->resize(count);
    for (auto& v : *slots[i]) {
      v = is_scale ? 1.0f : is_bias ? 0.0f : static_cast<float>(stddev * rng.normal());
    }
  }
  return w;
}

ForwardOutput forward(const ModelConfig& config, const WeightBundle& weights,
                      const TokenSequence& tokens) {
  validate_tokens(tokens, config.vocab_size);
  const int T = static_cast<int>(tokens.size());
  if (T > config.max_positions) {
    fail(ErrorCode::kSequenceTooLong, "sequence of " + std::to_string(T) +
                                          " tokens exceeds max_positions " +
                                          std::to_string(config.max_positions));
  }
  const int d = config.d_model;
  const int H = config.n_heads;
  const int dh = config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t Td = static_cast<std::size_t>(T) * d;

  std::vector<double> x(Td);
  for (int t = 0; t < T; ++t) {
    const std::size_t tok = static_cast<std::size_t>(tokens.tokens[t]);
    for (int k = 0; k < d; ++k) {
      x[t * d + k] = static_cast<double>(weights.tok_emb[tok * d + k]) +
                     static_cast<double>(weights.pos_emb[static_cast<std::size_t>(t) * d + k]);
    }
  }

  ForwardOutput out;
  out.attention = AttentionStack(config.n_layers, H, T, /*causal=*/true);
  std::vector<double> a(Td), q(Td), k(Td), v(Td), ctx(Td), proj(Td);
  std::vector<double> ff(static_cast<std::size_t>(T) * config.d_ff);
  std::vector<double> row(T);

  for (int l = 0; l < config.n_layers; ++l) {
    const LayerWeights& lw = weights.layers[l];
    for (int t = 0; t < T; ++t) {
      layer_norm(std::span<const double>(x).subspan(t * d, d), lw.ln1_scale, lw.ln1_bias,
                 config.layernorm_eps, std::span<double>(a).subspan(t * d, d));
    }
    matmul(a, T, d, lw.w_q, d, q);
    matmul(a, T, d, lw.w_k, d, k);
    matmul(a, T, d, lw.w_v, d, v);

    std::fill(ctx.begin(), ctx.end(), 0.0);
    for (int h = 0; h < H; ++h) {
      auto map = out.attention.mutable_map(l, h);
      const int off = h * dh;
      for (int i = 0; i < T; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < T; ++j) {
          double s = 0.0;
          for (int c = 0; c < dh; ++c) s += q[i * d + off + c] * k[j * d + off + c];
          s *= scale;
          if (j > i) s += kMaskedLogit;
          row[j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (int j = 0; j < T; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (int j = 0; j < T; ++j) {
          const double p = row[j] / z;
          map[static_cast<std::size_t>(i) * T + j] = static_cast<float>(p);
          if (p == 0.0) continue;
          for (int c = 0; c < dh; ++c) ctx[i * d + off + c] += p * v[j * d + off + c];
        }
      }
    }
    matmul(ctx, T, d, lw.w_o, d, proj);
    for (std::size_t n = 0; n < Td; ++n) x[n] += proj[n];

    for (int t = 0; t < T; ++t) {
      layer_norm(std::span<const double>(x).subspan(t * d, d), lw.ln2_scale, lw.ln2_bias,
                 config.layernorm_eps, std::span<double>(a).subspan(t * d, d));
    }
    matmul(a, T, d, lw.mlp_w_in, config.d_ff, ff);
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < config.d_ff; ++c) {
        double& f = ff[static_cast<std::size_t>(t) * config.d_ff + c];
        f = gelu(f + lw.mlp_b_in[c]);
      }
    matmul(ff, T, config.d_ff, lw.mlp_w_out, d, proj);
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < d; ++c) x[t * d + c] += proj[t * d + c] + lw.mlp_b_out[c];
  }

  out.hidden_final.resize(Td);
  for (int t = 0; t < T; ++t) {
    layer_norm(std::span<const double>(x).subspan(t * d, d), weights.lnf_scale, weights.lnf_bias,
               config.layernorm_eps, std::span<double>(out.hidden_final).subspan(t * d, d));
  }

  const int V = config.vocab_size;
  std::vector<double> logits(V);
  out.token_logprobs.resize(T - 1);
  for (int t = 0; t + 1 < T; ++t) {
    const double* hrow = out.hidden_final.data() + static_cast<std::size_t>(t) * d;
    for (int c = 0; c < V; ++c) {
      double s = 0.0;
      if (weights.unembed) {
        for (int e = 0; e < d; ++e) s += hrow[e] * (*weights.unembed)[static_cast<std::size_t>(e) * V + c];
      } else {
        for (int e = 0; e < d; ++e) s += hrow[e] * weights.tok_emb[static_cast<std::size_t>(c) * d + e];
      }
      logits[c] = s;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double s : logits) z += std::exp(s - mx);
    const double lse = mx + std::log(z);
    out.token_logprobs[t] = std::min(0.0, logits[tokens.tokens[t + 1]] - lse);
  }
  return out;
}

TinyTransformer::TinyTransformer(ModelConfig config, WeightBundle weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
}

void dump_attention(const ModelConfig& config, const WeightBundle& weights,
                    std::span<const LabeledSample> samples, const std::filesystem::path& out_path,
                    const std::string& model_tag, int jobs) {
  std::vector<AttentionRecord> attn(samples.size());
  std::vector<LogProbRecord> logprobs(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const LabeledSample& s = samples[i];
    ForwardOutput f = forward(config, weights, s.sequence);
    attn[i] = AttentionRecord{s.sample_id, std::move(f.attention), s.label, s.group};
    LogProbRecord r{s.sample_id, {}, model_tag};
    r.token_logprobs.reserve(f.token_logprobs.size());
    for (double v : f.token_logprobs) r.token_logprobs.push_back(static_cast<float>(v));
    logprobs[i] = std::move(r);
  });
  write_attention_dump(attn, model_tag, out_path);
  write_logprob_dump(logprobs, companion_path(out_path, ".lgpd"));
}

}  // namespace attenmia
