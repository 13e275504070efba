#include "fixtures.h"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "attenmia/pipeline.h"
#include "attenmia/rng.h"
#include "json.hpp"

using namespace attenmia;

ModelConfig fixture_model_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab_size = 256;
  c.max_positions = 64;
  return c;
}

WeightBundle anchored_weights(const ModelConfig& c, std::uint64_t seed) {
  WeightBundle w = random_weights(c, seed, 0.3);
  const int d = c.d_model;
  // Coordinate 1 of the residual stream marks position 1; coordinate 0 feeds
  // a token-independent query through the layernorm bias.
  for (int v = 0; v < c.vocab_size; ++v) w.tok_emb[v * d + 1] = 0.0f;
  for (int t = 0; t < c.max_positions; ++t) w.pos_emb[t * d + 1] = t == 0 ? 10.0f : 0.0f;
  for (auto& l : w.layers) {
    l.ln1_scale[0] = 0.0f;
    l.ln1_bias[0] = 1.0f;
    std::fill(l.w_q.begin(), l.w_q.end(), 0.0f);
    std::fill(l.w_k.begin(), l.w_k.end(), 0.0f);
    for (int o = 0; o < d; ++o) {
      l.w_q[0 * d + o] = 4.0f;
      l.w_k[1 * d + o] = 4.0f;
      l.w_o[o * d + 1] = 0.0f;
    }
    for (int f = 0; f < c.d_ff; ++f) l.mlp_w_out[f * d + 1] = 0.0f;
    l.mlp_b_out[1] = 0.0f;
  }
  return w;
}

namespace {

const char* const kWords[] = {"river", "stone", "Apple", "cloud", "Seven", "lamp",
                              "north", "Quiet", "bread", "glass", "Tiger", "plum"};

std::string random_text(Rng& rng) {
  std::string s;
  for (std::uint64_t i = 0, n = 3 + rng.below(3); i < n; ++i) {
    if (!s.empty()) s += ' ';
    s += kWords[rng.below(std::size(kWords))];
  }
  return s;
}

LogProbRecord logprobs_of(const TinyTransformer& m, const std::string& id, const std::string& text) {
  const auto out = m.run(tokenize_bytes(text));
  return {id, std::vector<float>(out.token_logprobs.begin(), out.token_logprobs.end()), "fixture"};
}

}  // namespace

ExtractionFixture make_extraction_fixture(const std::filesystem::path& dir, int n,
                                          std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const ModelConfig c = fixture_model_config();
  const TinyTransformer xl(c, random_weights(c, seed));
  const TinyTransformer small(c, random_weights(c, seed + 1));

  ExtractionFixture fx;
  PerturbationSpec drop, replace, prefix;
  drop.positions = {2, 4};
  replace.kind = PerturbationKind::kReplace;
  replace.positions = {3};
  replace.seed = seed;
  prefix.kind = PerturbationKind::kPrefix;
  prefix.prefix_tokens = tokenize_bytes("The");
  prefix.prefix_id = "the";
  fx.specs = {drop, replace, prefix};

  Rng rng(seed);
  std::vector<AttentionRecord> attn;
  std::vector<std::vector<AttentionRecord>> perturbed(fx.specs.size());
  std::vector<LogProbRecord> lp_xl, lp_small, lp_lower;
  std::ofstream corpus(dir / "corpus.jsonl");
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "c%03d", i);
    const std::string reference = random_text(rng);
    const std::string generation = i % 2 == 0 ? reference : random_text(rng);
    std::string lower = generation;
    for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));

    const TokenSequence tokens = tokenize_bytes(generation);
    attn.push_back({id, xl.attention(tokens), i % 2 == 0 ? 1 : 0, std::nullopt});
    for (std::size_t k = 0; k < fx.specs.size(); ++k) {
      const auto p = apply_perturbation(tokens, fx.specs[k], c.vocab_size);
      perturbed[k].push_back({id, xl.attention(p.tokens), attn.back().label, std::nullopt});
    }
    lp_xl.push_back(logprobs_of(xl, id, generation));
    lp_small.push_back(logprobs_of(small, id, generation));
    lp_lower.push_back(logprobs_of(xl, id, lower));

    nlohmann::ordered_json j;
    j["id"] = id;
    j["prefix"] = "Once";
    j["generation"] = generation;
    j["reference"] = reference;
    j["dumps"] = {{"xl", "xl.lgpd"},
                  {"small", "small.lgpd"},
                  {"lower", "lower.lgpd"},
                  {"attn", "attn.atnd"},
                  {"attn_perturbed", {"attn.p0.atnd", "attn.p1.atnd", "attn.p2.atnd"}}};
    corpus << j.dump() << '\n';
  }
  write_attention_dump(attn, "fixture", dir / "attn.atnd");
  for (std::size_t k = 0; k < perturbed.size(); ++k) {
    write_attention_dump(perturbed[k], "fixture", dir / ("attn.p" + std::to_string(k) + ".atnd"));
  }
  write_logprob_dump(lp_xl, dir / "xl.lgpd");
  write_logprob_dump(lp_small, dir / "small.lgpd");
  write_logprob_dump(lp_lower, dir / "lower.lgpd");
  write_plan(fx.specs, dir / "plan.json");

  const FeatureSchema schema = feature_schema(c.n_layers, c.n_heads, fx.specs, FeatureOptions{});
  fx.mlp = init_mlp({static_cast<int>(schema.size()), 4, 1}, seed);
  fx.mlp.schema = schema.names();
  fx.mlp.schema_hash = schema.hash();
  save_model(fx.mlp, dir / "model.mlpm");

  fx.corpus = dir / "corpus.jsonl";
  fx.plan = dir / "plan.json";
  fx.model = dir / "model.mlpm";
  return fx;
}
