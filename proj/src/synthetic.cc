#include "attenmia/synthetic.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "attenmia/error.h"
#include "attenmia/rng.h"

namespace attenmia {

namespace {

// Pre-softmax scores for every (layer, head), T x T row-major, no temperature.
using Logits = std::vector<std::vector<double>>;

int map_index(int layer, int head, int heads) { return layer * heads + head; }

std::vector<double> normal_matrix(Rng& rng, int n) {
  std::vector<double> m(static_cast<std::size_t>(n) * n);
  for (double& v : m) v = rng.normal();
  return m;
}

// Causal softmax of logits / temperature into a map.
void fill_map(std::span<float> out, const std::vector<double>& logits, int n,
              double temperature) {
  for (int i = 0; i < n; ++i) {
    double hi = -1e300;
    for (int j = 0; j <= i; ++j) hi = std::max(hi, logits[i * n + j] / temperature);
    double sum = 0.0;
    std::vector<double> row(i + 1);
    for (int j = 0; j <= i; ++j) {
      row[j] = std::exp(logits[i * n + j] / temperature - hi);
      sum += row[j];
    }
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(i) * n + j] = j <= i ? static_cast<float>(row[j] / sum) : 0.0f;
    }
  }
}

AttentionStack stack_from_logits(const Logits& logits, int layers, int heads, int n,
                                 double temperature) {
  AttentionStack stack(layers, heads, n, true);
  for (int l = 0; l < layers; ++l) {
    for (int h = 0; h < heads; ++h) {
      fill_map(stack.mutable_map(l, h), logits[map_index(l, h, heads)], n, temperature);
    }
  }
  return stack;
}

std::string sample_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s%04d", index);
  return buf;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (n_members < 0 || n_nonmembers < 0) {
    fail(ErrorCode::kInvalidShape, "sample counts must be non-negative");
  }
  if (layers < 1 || heads < 1 || seq_len < 2 || vocab_size < 2) {
    fail(ErrorCode::kInvalidShape, "synthetic shape needs L >= 1, H >= 1, T >= 2, V >= 2");
  }
  if (!(member_temperature > 0) || !(nonmember_temperature > 0)) {
    fail(ErrorCode::kInvalidShape, "temperatures must be positive");
  }
}

std::vector<PerturbationSpec> synthetic_plan(std::uint64_t seed, int vocab_size) {
  Rng rng(derive_seed(seed, 0x9e7));
  TokenSequence prefix;
  for (int i = 0; i < 4; ++i) {
    prefix.tokens.push_back(static_cast<std::int32_t>(rng.below(vocab_size)));
  }
  auto plan = default_plan(derive_seed(seed, 0x9e8), prefix, "synthetic-prefix");
  return plan;
}

SyntheticCorpus generate_synthetic(const SyntheticConfig& c) {
  c.validate();
  SyntheticCorpus out;
  out.plan = synthetic_plan(c.seed, c.vocab_size);
  out.perturbed.resize(out.plan.size());
  const int total = c.n_members + c.n_nonmembers;
  const int L = c.layers, H = c.heads, T = c.seq_len;

  for (int s = 0; s < total; ++s) {
    const bool member = s < c.n_members;
    const std::string id = sample_name(s);
    Rng rng(derive_seed(c.seed, static_cast<std::uint64_t>(s) + 1));
    const double temperature = member ? c.member_temperature : c.nonmember_temperature;

    TokenSequence tokens;
    for (int i = 0; i < T; ++i) tokens.tokens.push_back(static_cast<std::int32_t>(rng.below(c.vocab_size)));

    Logits logits(static_cast<std::size_t>(L) * H);
    for (int h = 0; h < H; ++h) {
      const std::vector<double> base = normal_matrix(rng, T);
      for (int l = 0; l < L; ++l) {
        std::vector<double> m = normal_matrix(rng, T);
        if (member) {
          for (std::size_t k = 0; k < m.size(); ++k) m[k] = base[k] + c.member_layer_noise * m[k];
        }
        logits[map_index(l, h, H)] = std::move(m);
      }
    }
    out.originals.push_back({id, stack_from_logits(logits, L, H, T, temperature), member ? 1 : 0,
                             std::nullopt});

    for (std::size_t k = 0; k < out.plan.size(); ++k) {
      const PerturbedTokens pt = apply_perturbation(tokens, out.plan[k], c.vocab_size);
      const int P = static_cast<int>(pt.tokens.size());
      // Original position (0-based) behind each perturbed position, or -1.
      std::vector<int> source(P, -1);
      for (int i = 0; i < T; ++i) {
        if (pt.alignment.image[i] > 0) source[pt.alignment.image[i] - 1] = i;
      }
      const double noise = member ? c.member_perturb_noise : c.nonmember_perturb_noise;
      Logits plog(static_cast<std::size_t>(L) * H);
      for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
          const auto& orig = logits[map_index(l, h, H)];
          std::vector<double> m = normal_matrix(rng, P);
          for (int a = 0; a < P; ++a) {
            for (int b = 0; b < P; ++b) {
              const int i = source[a], j = source[b];
              if (i >= 0 && j >= 0) m[a * P + b] = orig[i * T + j] + noise * m[a * P + b];
            }
          }
          plog[map_index(l, h, H)] = std::move(m);
        }
      }
      out.perturbed[k].push_back(
          {id, stack_from_logits(plog, L, H, P, temperature), member ? 1 : 0, std::nullopt});
    }

    LogProbRecord lp;
    lp.sample_id = id;
    lp.model_tag = kSyntheticModelTag;
    const double mean_loss =
        (member ? c.member_loss_mean : c.nonmember_loss_mean) + c.loss_spread * rng.normal();
    for (int i = 0; i + 1 < T; ++i) {
      const double v = -(mean_loss + c.token_loss_noise * rng.normal());
      lp.token_logprobs.push_back(static_cast<float>(std::min(0.0, v)));
    }
    out.logprobs.push_back(std::move(lp));
    out.tokens.push_back(std::move(tokens));
  }
  return out;
}

}  // namespace attenmia
