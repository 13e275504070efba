#include <cmath>
#include <fstream>
#include <sstream>

#include "attenmia/baselines.h"
#include "attenmia/rng.h"
#include "doctest.h"
#include "expect_error.h"
#include "temp_dir.h"

using namespace attenmia;

namespace {

LogProbRecord rec(std::vector<float> lp, std::string id = "s") {
  return {std::move(id), std::move(lp), "m"};
}

const float kLn2 = static_cast<float>(std::log(2.0));

}  // namespace

TEST_CASE("loss and perplexity") {
  const auto r = rec({-kLn2, -kLn2});
  CHECK(loss_score(r).raw == doctest::Approx(std::log(2.0)).epsilon(1e-7));
  CHECK(loss_score(r).oriented == -loss_score(r).raw);
  CHECK(ppl_score(r).raw == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(loss_score(rec({0.0f, 0.0f})).raw == 0.0);
  CHECK(ppl_score(rec({0.0f})).raw == 1.0);
  CHECK(code_of([] { loss_score(rec({})); }) == ErrorCode::kEmptyRecord);

  Rng rng(1);
  std::vector<LogProbRecord> recs;
  for (int i = 0; i < 30; ++i) {
    std::vector<float> lp;
    for (int t = 0; t < 10; ++t) lp.push_back(static_cast<float>(-3.0 * rng.uniform()));
    recs.push_back(rec(lp));
  }
  for (const auto& a : recs)
    for (const auto& b : recs) {
      CHECK((loss_score(a).raw < loss_score(b).raw) == (ppl_score(a).raw < ppl_score(b).raw));
      CHECK((loss_score(a).raw < loss_score(b).raw) == (loss_score(a).oriented > loss_score(b).oriented));
    }
}

TEST_CASE("zlib") {
  std::string rep, noise;
  for (int i = 0; i < 200; ++i) rep += "ab";
  Rng rng(2);
  for (int i = 0; i < 400; ++i) noise += static_cast<char>(' ' + rng.below(90));
  CHECK(zlib_entropy(rep) < zlib_entropy(noise));
  const auto r1 = rec({-1.0f, -2.0f}), r2 = rec({-2.0f, -4.0f});
  CHECK(zlib_score(r2, noise).raw == doctest::Approx(2 * zlib_score(r1, noise).raw).epsilon(1e-15));
  CHECK(zlib_score(r1, noise).raw == doctest::Approx(3.0 / zlib_entropy(noise)).epsilon(1e-15));
  CHECK(code_of([&] { zlib_score(r1, ""); }) == ErrorCode::kEmptyText);
}

TEST_CASE("min_k") {
  const auto r = rec({-1, -2, -3, -4});
  CHECK(min_k_score(r, 50).raw == -3.5);
  CHECK(min_k_score(r, 1).raw == -4.0);
  CHECK(min_k_score(r, 50).oriented == -3.5);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> lp;
    for (int t = 0, n = 1 + static_cast<int>(rng.below(60)); t < n; ++t)
      lp.push_back(static_cast<float>(-5.0 * rng.uniform()));
    CHECK(min_k_score(rec(lp), 100).raw == -loss_score(rec(lp)).raw);
  }
  CHECK(code_of([&] { min_k_score(r, 0); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { min_k_score(r, 101); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("ref") {
  const auto a = rec({-1.0f, -1.0f}), b = rec({-1.5f, -1.5f});
  CHECK(ref_score(a, a).raw == 0.0);
  CHECK(ref_score(a, b).raw == -0.5);
  CHECK(ref_score(a, b).oriented == 0.5);
  CHECK(ref_score(b, a).raw == -ref_score(a, b).raw);
  CHECK(code_of([&] { ref_score(a, rec({-1.0f})); }) == ErrorCode::kLengthMismatch);
}

TEST_CASE("extraction baselines") {
  const auto xl = rec({-kLn2, -kLn2}), small = rec({-1.0f, -2.0f});
  std::string text;
  Rng rng(4);
  for (int i = 0; i < 80; ++i) text += static_cast<char>('a' + rng.below(26));
  const auto m = extraction_baselines(&xl, &xl, nullptr, text);
  CHECK(m.at("ratio_s_xl") == 1.0);
  CHECK(m.count("ratio_lower_xl") == 0);
  CHECK(m.at("ppl_xl") == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(m.at("zlib_entropy") == static_cast<double>(zlib_entropy(text)));
  CHECK(m.at("ratio_zlib_xl") == doctest::Approx(loss_score(xl).raw / zlib_entropy(text)).epsilon(1e-15));
  const auto full = extraction_baselines(&xl, &small, &small, text);
  CHECK(full.at("ratio_lower_xl") == doctest::Approx(1.5 / std::log(2.0)).epsilon(1e-6));
  CHECK(code_of([&] { extraction_baselines(nullptr, &small, nullptr, text); }) ==
        ErrorCode::kMissingRequiredRecord);
  const auto perfect = rec({0.0f});
  CHECK(code_of([&] { extraction_baselines(&perfect, &small, nullptr, text); }) ==
        ErrorCode::kZeroDenominator);
}

TEST_CASE("oriented scores rank members above non-members") {
  Rng rng(5);
  std::string text = "the quick brown fox jumps over the lazy dog";
  double sums[5][2] = {};
  for (int label = 0; label < 2; ++label)
    for (int i = 0; i < 40; ++i) {
      std::vector<float> lp, ref;
      for (int t = 0; t < 12; ++t) {
        const double u = rng.uniform();
        lp.push_back(static_cast<float>(-(label == 1 ? 0.5 : 2.5) - u));
        ref.push_back(static_cast<float>(-1.5 - u));
      }
      const auto r = rec(lp);
      sums[0][label] += loss_score(r).oriented;
      sums[1][label] += ppl_score(r).oriented;
      sums[2][label] += zlib_score(r, text).oriented;
      sums[3][label] += min_k_score(r).oriented;
      sums[4][label] += ref_score(r, rec(ref)).oriented;
    }
  for (auto& s : sums) CHECK(s[1] > s[0]);
}

TEST_CASE("baseline csv") {
  TempDir dir("base");
  const std::vector<BaselineScore> scores = {loss_score(rec({-1.0f}, "a")), min_k_score(rec({-2.0f}, "b"))};
  write_baseline_csv(scores, dir / "b.csv");
  std::ifstream in(dir / "b.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "sample_id,method,raw,oriented");
  CHECK(row.rfind("a,loss,", 0) == 0);
}
