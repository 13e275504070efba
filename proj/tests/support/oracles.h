#pragma once

// Straight-line reference implementations used as test oracles. They share
// no code with the library beyond plain data types.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attenmia/attn_data.h"
#include "attenmia/tiny_transformer.h"

namespace oracle {

// Dense copy of one map, 0-based layer/head.
std::vector<std::vector<double>> dense(const attenmia::AttentionStack& s, int l, int h);

double kl_to_uniform(const std::vector<std::vector<double>>& a);
double corr(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);
double frob(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);
double mean_kl(const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& q);
double barycenter(const std::vector<std::vector<double>>& a, int row_1based);
std::pair<double, double> drift(const std::vector<std::vector<double>>& a,
                                const std::vector<std::vector<double>>& b);
// image: 1-based perturbed index per original token, 0 for dropped.
double kl_shift(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                const std::vector<int>& image);
double conc_delta(const std::vector<std::vector<double>>& a,
                  const std::vector<std::vector<double>>& b);

// Random row-stochastic stack (causal or dense), some exact zeros mixed in.
attenmia::AttentionStack random_stack(std::uint64_t seed, int L, int H, int T, bool causal);

struct RefOutput {
  // [layer][head][i][j]
  std::vector<std::vector<std::vector<std::vector<double>>>> attention;
  std::vector<double> logprobs;
};
RefOutput reference_forward(const attenmia::ModelConfig& c, const attenmia::WeightBundle& w,
                            const std::vector<std::int32_t>& tokens);

// Pairwise Mann-Whitney statistic, ties count one half.
double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y);
// Max TPR over every cut (including "predict nothing") with FPR <= cap.
double exhaustive_tpr(const std::vector<double>& s, const std::vector<int>& y, double cap);
double covariance_pearson(const std::vector<double>& x, const std::vector<double>& y);
std::size_t recursive_lcs(const std::vector<std::string>& a, const std::vector<std::string>& b);

}  // namespace oracle
