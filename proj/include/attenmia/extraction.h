#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attenmia/classifier.h"
#include "attenmia/perturb.h"
#include "attenmia/pipeline.h"

namespace attenmia {

// Dump files for one candidate generation. Records inside each file are
// looked up by candidate id.
struct CandidateDumps {
  std::optional<std::filesystem::path> xl;     // LGPD, required for scoring
  std::optional<std::filesystem::path> small;  // LGPD
  std::optional<std::filesystem::path> lower;  // LGPD of the lowercased generation
  std::optional<std::filesystem::path> attn;   // ATND
  std::vector<std::filesystem::path> attn_perturbed;  // ATND, one per plan spec
};

struct CandidateRecord {
  std::string id;
  std::string prefix;
  std::string generation;
  std::string reference;
  CandidateDumps dumps;
};

// JSON lines with keys {id, prefix, generation, reference, dumps}. Relative
// dump paths resolve against the corpus file's directory. Throws
// DuplicateSampleId, EmptyText, InvalidArgument.
std::vector<CandidateRecord> read_corpus(const std::filesystem::path& path);

// Score columns in output order.
inline const std::vector<std::string> kExtractionColumns = {
    "ppl_xl", "ratio_s_xl", "ratio_lower_xl", "zlib_entropy", "ratio_zlib_xl", "rouge_l_f1",
    "attenmia"};

struct ScoreRow {
  std::string candidate_id;
  // Keyed by kExtractionColumns entries; absent optional scores are missing.
  std::map<std::string, double> scores;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;  // corpus order
};

// Extraction baselines, ROUGE-L F1 of generation vs reference, and the
// classifier probability from perturbation-based attention features. The
// model's schema must match the features built under `options`. Throws
// MissingDump, SchemaMismatch.
ScoreTable score_corpus(std::span<const CandidateRecord> records, const MlpModel& model,
                        std::span<const PerturbationSpec> plan, const FeatureOptions& options,
                        int jobs = 1);

struct MethodCorrelation {
  std::string method;
  double r = 0.0;
  std::size_t n = 0;  // candidates with a value for this method
};

struct RankingReport {
  std::size_t top_n = 0;
  std::size_t bottom_n = 0;
  bool full = false;
  std::vector<std::string> selected;  // ids, by descending ROUGE-L
  std::vector<MethodCorrelation> correlations;
  // 1-based position of each candidate in the ROUGE-L ordering.
  std::map<std::string, std::size_t> rank;
};

// Orders candidates by ROUGE-L F1 descending, ties by id ascending, keeps the
// first top_n and last bottom_n (or all of them when `full`), and correlates
// every score column with ROUGE-L on that selection. Throws SelectionTooLarge.
RankingReport evaluate_ranking(const ScoreTable& table, std::size_t top_n, std::size_t bottom_n,
                               bool full = false);

void write_score_table_csv(const ScoreTable& table, const RankingReport& report,
                           const std::filesystem::path& path);
std::string ranking_report_json(const RankingReport& report);

}  // namespace attenmia
