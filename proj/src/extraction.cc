#include "attenmia/extraction.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <unordered_set>

#include "attenmia/baselines.h"
#include "attenmia/error.h"
#include "attenmia/metrics.h"
#include "attenmia/parallel.h"
#include "attenmia/text_util.h"
#include "json.hpp"

namespace attenmia {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kRouge = "rouge_l_f1";

std::optional<std::filesystem::path> optional_path(const nlohmann::json& dumps, const char* key,
                                                   const std::filesystem::path& base) {
  if (!dumps.contains(key) || dumps.at(key).is_null()) return std::nullopt;
  return base / dumps.at(key).get<std::string>();
}

// Files are read once and shared across candidates.
class DumpCache {
 public:
  const std::vector<LogProbRecord>& logprobs(const std::filesystem::path& p) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& slot = lgpd_[p.string()];
    if (!slot) slot = std::make_unique<std::vector<LogProbRecord>>(read_logprob_dump(p));
    return *slot;
  }
  const AttentionDumpReader& attention(const std::filesystem::path& p) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& slot = atnd_[p.string()];
    if (!slot) slot = std::make_unique<AttentionDumpReader>(p);
    return *slot;
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<std::vector<LogProbRecord>>> lgpd_;
  std::map<std::string, std::unique_ptr<AttentionDumpReader>> atnd_;
};

const LogProbRecord* find_record(const std::vector<LogProbRecord>& records, const std::string& id,
                                 const std::filesystem::path& path) {
  for (const auto& r : records) {
    if (r.sample_id == id) return &r;
  }
  fail(ErrorCode::kMissingDump, path.string() + " has no record for candidate '" + id + "'");
}

AttentionStack find_stack(const AttentionDumpReader& reader, const std::string& id) {
  if (!reader.contains(id)) {
    fail(ErrorCode::kMissingDump, reader.name() + " has no attention for candidate '" + id + "'");
  }
  return reader.read(id).stack;
}

}  // namespace

std::vector<CandidateRecord> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open corpus " + path.string());
  const std::filesystem::path base = path.parent_path();
  std::vector<CandidateRecord> out;
  std::unordered_set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    CandidateRecord rec;
    try {
      const auto j = nlohmann::json::parse(line);
      rec.id = j.at("id").get<std::string>();
      rec.prefix = j.value("prefix", "");
      rec.generation = j.at("generation").get<std::string>();
      rec.reference = j.at("reference").get<std::string>();
      if (j.contains("dumps")) {
        const auto& d = j.at("dumps");
        rec.dumps.xl = optional_path(d, "xl", base);
        rec.dumps.small = optional_path(d, "small", base);
        rec.dumps.lower = optional_path(d, "lower", base);
        rec.dumps.attn = optional_path(d, "attn", base);
        if (d.contains("attn_perturbed") && !d.at("attn_perturbed").is_null()) {
          const auto& p = d.at("attn_perturbed");
          if (p.is_string()) {
            rec.dumps.attn_perturbed.push_back(base / p.get<std::string>());
          } else {
            for (const auto& e : p) rec.dumps.attn_perturbed.push_back(base / e.get<std::string>());
          }
        }
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kInvalidArgument, where + ": malformed candidate record: " + e.what());
    }
    if (rec.generation.empty() || rec.reference.empty()) {
      fail(ErrorCode::kEmptyText, where + ": candidate '" + rec.id +
                                      "' needs non-empty generation and reference");
    }
    if (!ids.insert(rec.id).second) {
      fail(ErrorCode::kDuplicateSampleId, where + ": duplicate candidate id '" + rec.id + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

ScoreTable score_corpus(std::span<const CandidateRecord> records, const MlpModel& model,
                        std::span<const PerturbationSpec> plan, const FeatureOptions& options,
                        int jobs) {
  DumpCache cache;
  ScoreTable table;
  table.rows.resize(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    const CandidateRecord& c = records[i];
    ScoreRow& row = table.rows[i];
    row.candidate_id = c.id;

    if (!c.dumps.xl) {
      fail(ErrorCode::kMissingRequiredRecord, "candidate '" + c.id + "' has no xl log-prob dump");
    }
    const LogProbRecord* xl = find_record(cache.logprobs(*c.dumps.xl), c.id, *c.dumps.xl);
    const LogProbRecord* small =
        c.dumps.small ? find_record(cache.logprobs(*c.dumps.small), c.id, *c.dumps.small) : nullptr;
    const LogProbRecord* lower =
        c.dumps.lower ? find_record(cache.logprobs(*c.dumps.lower), c.id, *c.dumps.lower) : nullptr;
    row.scores = extraction_baselines(xl, small, lower, c.generation);
    row.scores[kRouge] = rouge_l_text(c.generation, c.reference).f1;

    if (!c.dumps.attn) fail(ErrorCode::kMissingDump, "candidate '" + c.id + "' has no attention dump");
    const AttentionStack original = find_stack(cache.attention(*c.dumps.attn), c.id);
    std::vector<AttentionStack> perturbed;
    if (options.perturbation) {
      if (c.dumps.attn_perturbed.size() != plan.size()) {
        fail(ErrorCode::kMissingDump, "candidate '" + c.id + "' lists " +
                                          std::to_string(c.dumps.attn_perturbed.size()) +
                                          " perturbed dumps for a plan of " +
                                          std::to_string(plan.size()));
      }
      for (const auto& p : c.dumps.attn_perturbed) perturbed.push_back(find_stack(cache.attention(p), c.id));
    }
    const FeatureSchema schema =
        feature_schema(original.layers(), original.heads(), plan, options);
    if (schema.hash() != model.schema_hash) {
      fail(ErrorCode::kSchemaMismatch, "features of candidate '" + c.id + "' have schema " +
                                           hash_hex(schema.hash()) + ", model expects " +
                                           hash_hex(model.schema_hash));
    }
    row.scores["attenmia"] =
        predict(model, sample_features(original, perturbed, plan, options, c.id));
  });
  return table;
}

RankingReport evaluate_ranking(const ScoreTable& table, std::size_t top_n, std::size_t bottom_n,
                               bool full) {
  const std::size_t n = table.rows.size();
  if (!full && top_n + bottom_n > n) {
    fail(ErrorCode::kSelectionTooLarge, "top " + std::to_string(top_n) + " + bottom " +
                                            std::to_string(bottom_n) + " exceeds corpus size " +
                                            std::to_string(n));
  }
  std::vector<const ScoreRow*> order;
  for (const auto& r : table.rows) {
    if (!r.scores.count(kRouge)) {
      fail(ErrorCode::kInvalidArgument, "candidate '" + r.candidate_id + "' has no ROUGE-L score");
    }
    order.push_back(&r);
  }
  std::sort(order.begin(), order.end(), [](const ScoreRow* a, const ScoreRow* b) {
    const double ra = a->scores.at(kRouge), rb = b->scores.at(kRouge);
    if (ra != rb) return ra > rb;
    return a->candidate_id < b->candidate_id;
  });

  RankingReport rep;
  rep.full = full;
  rep.top_n = full ? n : top_n;
  rep.bottom_n = full ? 0 : bottom_n;
  std::vector<const ScoreRow*> chosen;
  for (std::size_t i = 0; i < n; ++i) {
    rep.rank[order[i]->candidate_id] = i + 1;
    if (full || i < top_n || i >= n - bottom_n) chosen.push_back(order[i]);
  }
  for (const ScoreRow* r : chosen) rep.selected.push_back(r->candidate_id);

  for (const std::string& method : kExtractionColumns) {
    if (method == kRouge) continue;
    std::vector<double> x, y;
    for (const ScoreRow* r : chosen) {
      auto it = r->scores.find(method);
      if (it == r->scores.end()) continue;
      x.push_back(it->second);
      y.push_back(r->scores.at(kRouge));
    }
    if (x.empty()) continue;
    rep.correlations.push_back({method, pearson(x, y), x.size()});
  }
  return rep;
}

void write_score_table_csv(const ScoreTable& table, const RankingReport& report,
                           const std::filesystem::path& path) {
  std::unordered_set<std::string> selected(report.selected.begin(), report.selected.end());
  std::string out = "candidate_id";
  for (const auto& c : kExtractionColumns) out += "," + c;
  out += ",rank,selected\n";
  for (const auto& r : table.rows) {
    out += csv_field(r.candidate_id);
    for (const auto& c : kExtractionColumns) {
      out += ',';
      auto it = r.scores.find(c);
      if (it != r.scores.end()) out += format_double(it->second);
    }
    auto rank = report.rank.find(r.candidate_id);
    out += ',' + (rank == report.rank.end() ? std::string() : std::to_string(rank->second));
    out += selected.count(r.candidate_id) ? ",1\n" : ",0\n";
  }
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(out.data()),
                                                 out.size()));
}

std::string ranking_report_json(const RankingReport& report) {
  ordered_json j;
  j["selection"] = {{"mode", report.full ? "full" : "top_bottom"},
                    {"top_n", report.top_n},
                    {"bottom_n", report.bottom_n},
                    {"size", report.selected.size()}};
  ordered_json r = ordered_json::object();
  ordered_json n = ordered_json::object();
  for (const auto& c : report.correlations) {
    r[c.method] = c.r;
    n[c.method] = c.n;
  }
  j["pearson_r"] = r;
  j["n"] = n;
  j["zlib_level"] = kZlibLevel;
  return j.dump(2) + "\n";
}

}  // namespace attenmia
