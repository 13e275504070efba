#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attenmia/extraction.h"
#include "attenmia/metrics.h"
#include "doctest.h"
#include "expect_error.h"
#include "fixtures.h"
#include "json.hpp"
#include "temp_dir.h"

using namespace attenmia;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ScoreTable table_of(const std::vector<std::pair<std::string, std::map<std::string, double>>>& rows) {
  ScoreTable t;
  for (const auto& [id, scores] : rows) t.rows.push_back({id, scores});
  return t;
}

double r_of(const RankingReport& rep, const std::string& method) {
  for (const auto& c : rep.correlations)
    if (c.method == method) return c.r;
  FAIL("no correlation for " << method);
  return 0.0;
}

}  // namespace

TEST_CASE("corpus parsing") {
  TempDir dir("corpus");
  const auto fx = make_extraction_fixture(dir.path(), 4, 1);
  const auto recs = read_corpus(fx.corpus);
  REQUIRE(recs.size() == 4);
  CHECK(recs[0].id == "c000");
  CHECK(recs[0].generation == recs[0].reference);
  CHECK(*recs[0].dumps.xl == dir / "xl.lgpd");
  CHECK(recs[0].dumps.attn_perturbed.size() == 3);

  std::ofstream(dir / "dup.jsonl") << R"({"id":"a","generation":"x","reference":"y"})" << '\n'
                                   << R"({"id":"a","generation":"x","reference":"y"})" << '\n';
  CHECK(code_of([&] { read_corpus(dir / "dup.jsonl"); }) == ErrorCode::kDuplicateSampleId);
  std::ofstream(dir / "empty.jsonl") << R"({"id":"a","generation":"","reference":"y"})" << '\n';
  CHECK(code_of([&] { read_corpus(dir / "empty.jsonl"); }) == ErrorCode::kEmptyText);
  std::ofstream(dir / "bad.jsonl") << "{not json" << '\n';
  CHECK(code_of([&] { read_corpus(dir / "bad.jsonl"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("score_corpus column contract") {
  TempDir dir("score");
  const auto fx = make_extraction_fixture(dir.path(), 1, 2);
  const auto recs = read_corpus(fx.corpus);
  const ScoreTable t = score_corpus(recs, fx.mlp, fx.specs, FeatureOptions{});
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].scores.size() == kExtractionColumns.size());
  for (const auto& col : kExtractionColumns) CHECK(t.rows[0].scores.count(col) == 1);
  const double p = t.rows[0].scores.at("attenmia");
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(t.rows[0].scores.at("rouge_l_f1") == 1.0);
}

TEST_CASE("score_corpus values and determinism") {
  TempDir dir("score2");
  const auto fx = make_extraction_fixture(dir.path(), 12, 3);
  const auto recs = read_corpus(fx.corpus);
  const ScoreTable a = score_corpus(recs, fx.mlp, fx.specs, FeatureOptions{}, 1);
  const ScoreTable b = score_corpus(recs, fx.mlp, fx.specs, FeatureOptions{}, 4);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].candidate_id == recs[i].id);
    CHECK(a.rows[i].scores == b.rows[i].scores);
    CHECK(a.rows[i].scores.at("rouge_l_f1") ==
          rouge_l_text(recs[i].generation, recs[i].reference).f1);
    const double p = a.rows[i].scores.at("attenmia");
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  const RankingReport rep = evaluate_ranking(a, 4, 4);
  write_score_table_csv(a, rep, dir / "a.csv");
  write_score_table_csv(b, evaluate_ranking(b, 4, 4), dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  std::istringstream lines(slurp(dir / "a.csv"));
  std::string header;
  std::getline(lines, header);
  CHECK(header ==
        "candidate_id,ppl_xl,ratio_s_xl,ratio_lower_xl,zlib_entropy,ratio_zlib_xl,rouge_l_f1,attenmia,rank,selected");
}

TEST_CASE("score_corpus errors") {
  TempDir dir("score3");
  const auto fx = make_extraction_fixture(dir.path(), 3, 4);
  auto recs = read_corpus(fx.corpus);
  MlpModel wrong = fx.mlp;
  wrong.schema_hash ^= 1;
  CHECK(code_of([&] { score_corpus(recs, wrong, fx.specs, FeatureOptions{}); }) == ErrorCode::kSchemaMismatch);
  auto no_attn = recs;
  no_attn[1].dumps.attn.reset();
  CHECK(code_of([&] { score_corpus(no_attn, fx.mlp, fx.specs, FeatureOptions{}); }) == ErrorCode::kMissingDump);
  auto no_xl = recs;
  no_xl[0].dumps.xl.reset();
  CHECK(code_of([&] { score_corpus(no_xl, fx.mlp, fx.specs, FeatureOptions{}); }) ==
        ErrorCode::kMissingRequiredRecord);
  auto no_lower = recs;
  no_lower[2].dumps.lower.reset();
  const auto t = score_corpus(no_lower, fx.mlp, fx.specs, FeatureOptions{});
  CHECK(t.rows[2].scores.count("ratio_lower_xl") == 0);
  CHECK(t.rows[1].scores.count("ratio_lower_xl") == 1);
}

TEST_CASE("evaluate_ranking") {
  std::vector<std::pair<std::string, std::map<std::string, double>>> rows;
  for (int i = 0; i < 10; ++i) {
    const double rouge = (i * 37 % 10) / 10.0;
    rows.push_back({"id" + std::to_string(i), {{"rouge_l_f1", rouge}, {"attenmia", rouge}, {"ppl_xl", 3.0},
                                               {"zlib_entropy", 5.0 - rouge * rouge}}});
  }
  const ScoreTable t = table_of(rows);
  const RankingReport rep = evaluate_ranking(t, 3, 2);
  CHECK(rep.selected.size() == 5);
  CHECK(r_of(rep, "attenmia") == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r_of(rep, "ppl_xl") == 0.0);
  CHECK(r_of(rep, "zlib_entropy") < 0.0);
  CHECK(rep.rank.size() == 10);

  ScoreTable reversed = t;
  std::reverse(reversed.rows.begin(), reversed.rows.end());
  const RankingReport rev = evaluate_ranking(reversed, 3, 2);
  CHECK(rev.selected == rep.selected);
  for (const auto& c : rep.correlations) CHECK(r_of(rev, c.method) == c.r);

  CHECK(code_of([&] { evaluate_ranking(t, 6, 5); }) == ErrorCode::kSelectionTooLarge);
  CHECK(evaluate_ranking(t, 0, 0, true).selected.size() == 10);

  // Ties on ROUGE-L break by id ascending.
  const ScoreTable ties = table_of({{"b", {{"rouge_l_f1", 0.5}}}, {"a", {{"rouge_l_f1", 0.5}}},
                                    {"c", {{"rouge_l_f1", 0.9}}}});
  CHECK(evaluate_ranking(ties, 2, 0).selected == std::vector<std::string>{"c", "a"});

  const auto j = nlohmann::json::parse(ranking_report_json(rep));
  CHECK(j.at("pearson_r").at("attenmia").get<double>() == doctest::Approx(1.0));
  CHECK(j.at("n").at("attenmia") == 5);
  CHECK(j.at("zlib_level") == 6);
}
