#include "cli/commands.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "attenmia/baselines.h"
#include "attenmia/binary_io.h"
#include "attenmia/error.h"
#include "attenmia/metrics.h"
#include "attenmia/extraction.h"
#include "attenmia/parallel.h"
#include "attenmia/rng.h"
#include "attenmia/synthetic.h"
#include "attenmia/text_util.h"
#include "attenmia/tiny_transformer.h"
#include "json.hpp"

namespace attenmia::cli {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(
                       reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

ordered_json file_fingerprint(const fs::path& path) {
  return {{"path", path.string()}, {"fnv1a64", hash_hex(fnv1a64(read_file(path)))}};
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::kInvalidArgument, "cannot parse " + what + " '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t end = s.find(sep, start);
    out.push_back(s.substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (end == std::string::npos) return out;
    start = end + 1;
  }
}

TokenSequence parse_tokens(const std::string& s) {
  TokenSequence seq;
  for (const auto& part : split(s, ',')) seq.tokens.push_back(parse_int(part, "token id"));
  return seq;
}

std::vector<LabeledSample> read_samples(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoFailure, "cannot open samples " + path.string());
  std::vector<LabeledSample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    LabeledSample s;
    try {
      const auto j = nlohmann::json::parse(line);
      s.sample_id = j.at("id").get<std::string>();
      s.label = j.value("label", 0);
      if (j.contains("group") && !j.at("group").is_null()) s.group = j.at("group").get<std::string>();
      if (j.contains("tokens")) {
        s.sequence.tokens = j.at("tokens").get<std::vector<std::int32_t>>();
      } else {
        s.sequence = tokenize_bytes(j.at("text").get<std::string>());
      }
      if (j.contains("text")) s.sequence.text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kInvalidArgument,
           path.string() + ":" + std::to_string(line_no) + ": malformed sample: " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PerturbationSpec> load_plan(const FeatureInputs& in) {
  if (!in.families.perturbation) return {};
  return read_plan(in.plan ? *in.plan : plan_path_for(in.attn));
}

std::vector<fs::path> perturbed_paths(const FeatureInputs& in, std::size_t n_specs) {
  if (!in.families.perturbation) return {};
  if (!in.perturbed.empty()) return in.perturbed;
  std::vector<fs::path> out;
  for (std::size_t k = 0; k < n_specs; ++k) out.push_back(perturbed_dump_path(in.attn, k));
  return out;
}

FeatureMatrix load_features(const FeatureInputs& in, int jobs, ordered_json* provenance) {
  const auto plan = load_plan(in);
  const auto paths = perturbed_paths(in, plan.size());
  AttentionDumpReader original(in.attn);
  std::vector<AttentionDumpReader> perturbed;
  for (const auto& p : paths) perturbed.emplace_back(p);
  if (provenance) {
    (*provenance)["attn"] = file_fingerprint(in.attn);
    if (in.families.perturbation) {
      (*provenance)["plan"] = file_fingerprint(in.plan ? *in.plan : plan_path_for(in.attn));
      ordered_json list = ordered_json::array();
      for (const auto& p : paths) list.push_back(file_fingerprint(p));
      (*provenance)["perturbed"] = list;
    }
  }
  return dump_features(original, perturbed, plan, in.families, jobs);
}

ordered_json families_json(const FeatureOptions& f) {
  return {{"concentration", f.concentration},
          {"transitional", f.transitional},
          {"perturbation", f.perturbation},
          {"layers", f.layers},
          {"max_len", f.max_len}};
}

ordered_json train_json(const TrainConfig& t) {
  return {{"folds", t.folds},
          {"max_epochs", t.max_epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"patience", t.patience},
          {"validation_fraction", t.validation_fraction},
          {"hidden", t.hidden}};
}

struct Split {
  std::vector<double> members;
  std::vector<double> nonmembers;
};

Split split_by_label(std::span<const double> values, std::span<const int> labels) {
  Split s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    (labels[i] == 1 ? s.members : s.nonmembers).push_back(values[i]);
  }
  return s;
}

ordered_json summary(std::span<const double> v) {
  return {{"mean", mean_of(v)}, {"std", v.size() > 1 ? sample_stddev(v) : 0.0}};
}

}  // namespace

std::vector<int> parse_layer_list(const std::string& text) {
  std::vector<int> out;
  if (text.empty()) return out;
  const std::size_t dots = text.find("..");
  if (dots != std::string::npos) {
    const int lo = parse_int(text.substr(0, dots), "layer range");
    const int hi = parse_int(text.substr(dots + 2), "layer range");
    if (lo > hi) fail(ErrorCode::kInvalidArgument, "empty layer range '" + text + "'");
    for (int l = lo; l <= hi; ++l) out.push_back(l);
  } else {
    for (const auto& part : split(text, ',')) out.push_back(parse_int(part, "layer"));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> parse_hidden(const std::string& text) {
  if (text == "none") return {};
  std::vector<int> out;
  for (const auto& part : split(text, ',')) out.push_back(parse_int(part, "hidden size"));
  return out;
}

fs::path perturbed_dump_path(const fs::path& original, std::size_t k) {
  return companion_path(original, ".p" + std::to_string(k) + ".atnd");
}

fs::path plan_path_for(const fs::path& original) {
  return companion_path(original, ".plan.json");
}

void cmd_synth(const SynthOptions& o, const Common& c) {
  SyntheticConfig cfg;
  cfg.n_members = o.members;
  cfg.n_nonmembers = o.nonmembers;
  cfg.layers = o.layers;
  cfg.heads = o.heads;
  cfg.seq_len = o.seq_len;
  cfg.vocab_size = o.vocab;
  cfg.seed = c.seed;
  const SyntheticCorpus corpus = generate_synthetic(cfg);
  write_attention_dump(corpus.originals, kSyntheticModelTag, o.out);
  write_logprob_dump(corpus.logprobs, companion_path(o.out, ".lgpd"));
  write_plan(corpus.plan, plan_path_for(o.out));
  for (std::size_t k = 0; k < corpus.perturbed.size(); ++k) {
    write_attention_dump(corpus.perturbed[k], kSyntheticModelTag, perturbed_dump_path(o.out, k));
  }
}

void cmd_infer(const InferOptions& o, const Common& c) {
  const LoadedWeights w = load_weights(o.weights);
  const std::vector<LabeledSample> samples = read_samples(o.samples);
  dump_attention(w.config, w.weights, samples, o.out, o.model_tag, c.jobs);
  if (!o.plan) return;
  const auto plan = read_plan(*o.plan);
  for (std::size_t k = 0; k < plan.size(); ++k) {
    std::vector<AttentionRecord> records(samples.size());
    parallel_for(samples.size(), c.jobs, [&](std::size_t i) {
      const auto& s = samples[i];
      const PerturbedTokens p = apply_perturbation(s.sequence, plan[k], w.config.vocab_size);
      records[i] = {s.sample_id, forward(w.config, w.weights, p.tokens).attention, s.label, s.group};
    });
    write_attention_dump(records, o.model_tag, perturbed_dump_path(o.out, k));
  }
}

void cmd_features(const FeaturesOptions& o, const Common& c) {
  const FeatureMatrix m = load_features(o.inputs, c.jobs, nullptr);
  write_feature_csv(m, o.out_csv);
  if (o.out_cache) write_feature_cache(m, *o.out_cache);
}

void cmd_audit(const AuditOptions& o, const Common& c) {
  ordered_json inputs = ordered_json::object();
  const FeatureMatrix matrix = load_features(o.inputs, c.jobs, &inputs);

  std::vector<int> labels = matrix.labels;
  if (o.permute_labels) {
    Rng rng(derive_seed(c.seed, 0x9e41));
    rng.shuffle(labels);
  }
  TrainConfig train = o.train;
  train.seed = c.seed;
  const std::vector<FoldResult> folds = train_cv(matrix, labels, train, c.jobs);

  fs::create_directories(o.out_dir);
  ordered_json fold_json = ordered_json::array();
  std::vector<double> aucs, tprs;
  std::vector<double> pooled_scores(matrix.rows());
  std::vector<int> fold_of(matrix.rows());
  for (const auto& f : folds) {
    const ScoreSet s(f.scores, f.labels);
    aucs.push_back(roc_auc(s));
    tprs.push_back(tpr_at_fpr(s, 0.01));
    fold_json.push_back({{"fold", f.fold},
                         {"n_test", f.test_rows.size()},
                         {"auc", aucs.back()},
                         {"tpr_at_1pct_fpr", tprs.back()}});
    for (std::size_t i = 0; i < f.test_rows.size(); ++i) {
      pooled_scores[f.test_rows[i]] = f.scores[i];
      fold_of[f.test_rows[i]] = f.fold;
    }
  }
  const ScoreSet pooled(pooled_scores, labels);
  write_roc_csv(roc_curve(pooled), o.out_dir / "roc.csv");

  std::string scores_csv = "sample_id,fold,score,label\n";
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    scores_csv += csv_field(matrix.sample_ids[r]) + "," + std::to_string(fold_of[r]) + "," +
                  format_double(pooled_scores[r]) + "," + std::to_string(labels[r]) + "\n";
  }
  write_text(o.out_dir / "scores.csv", scores_csv);

  // Per-column separability and group means.
  std::string hd_csv = "column,family,layer,head,tag,hellinger,member_mean,nonmember_mean\n";
  std::map<std::string, std::vector<double>> hd_by_family;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> means_by_family;
  std::vector<std::string> family_order;
  std::vector<double> column(matrix.rows());
  for (std::size_t j = 0; j < matrix.cols(); ++j) {
    for (std::size_t r = 0; r < matrix.rows(); ++r) column[r] = matrix.row(r)[j];
    const Split s = split_by_label(column, labels);
    const double hd = hellinger(s.members, s.nonmembers, o.hellinger_bins);
    const FeatureColumn& col = matrix.schema.columns()[j];
    const std::string fam(family_name(col.family));
    if (!hd_by_family.count(fam)) family_order.push_back(fam);
    hd_by_family[fam].push_back(hd);
    means_by_family[fam].first.push_back(mean_of(s.members));
    means_by_family[fam].second.push_back(mean_of(s.nonmembers));
    hd_csv += csv_field(col.name()) + "," + fam + "," + std::to_string(col.layer) + "," +
              std::to_string(col.head) + "," + csv_field(col.tag) + "," + format_double(hd) + "," +
              format_double(mean_of(s.members)) + "," + format_double(mean_of(s.nonmembers)) + "\n";
  }
  write_text(o.out_dir / "hellinger.csv", hd_csv);

  ordered_json hd_json = ordered_json::object();
  ordered_json group_json = ordered_json::object();
  for (const auto& fam : family_order) {
    const auto& v = hd_by_family[fam];
    hd_json[fam] = {{"max", *std::max_element(v.begin(), v.end())}, {"mean", mean_of(v)}};
    group_json[fam] = {{"member_mean", mean_of(means_by_family[fam].first)},
                       {"nonmember_mean", mean_of(means_by_family[fam].second)}};
  }

  write_feature_csv(matrix, o.out_dir / "features.csv");
  write_feature_cache(matrix, o.out_dir / "features.feat");

  ordered_json report;
  report["toolkit"] = {{"name", "attenmia"}, {"version", kToolkitVersion}};
  report["samples"] = {{"total", matrix.rows()},
                       {"members", std::count(labels.begin(), labels.end(), 1)},
                       {"nonmembers", std::count(labels.begin(), labels.end(), 0)},
                       {"features", matrix.cols()},
                       {"schema_hash", hash_hex(matrix.schema.hash())}};
  report["folds"] = fold_json;
  report["auc"] = summary(aucs);
  report["tpr_at_1pct_fpr"] = summary(tprs);
  report["pooled_auc"] = roc_auc(pooled);
  report["hellinger"] = hd_json;
  report["group_means"] = group_json;

  if (o.logprobs) {
    inputs["logprobs"] = file_fingerprint(*o.logprobs);
    const auto records = read_logprob_dump(*o.logprobs);
    std::map<std::string, const LogProbRecord*> by_id;
    for (const auto& r : records) by_id[r.sample_id] = &r;
    ordered_json base = ordered_json::object();
    for (const std::string method : {"loss", "ppl", "min_k"}) {
      std::vector<double> oriented;
      for (const auto& id : matrix.sample_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
          fail(ErrorCode::kMissingDump, o.logprobs->string() + " has no record for '" + id + "'");
        }
        const LogProbRecord& rec = *it->second;
        oriented.push_back(method == "loss"  ? loss_score(rec).oriented
                           : method == "ppl" ? ppl_score(rec).oriented
                                             : min_k_score(rec).oriented);
      }
      const ScoreSet s(oriented, labels);
      const Split sp = split_by_label(oriented, labels);
      base[method] = {{"auc", roc_auc(s)},
                      {"tpr_at_1pct_fpr", tpr_at_fpr(s, 0.01)},
                      {"hellinger", hellinger(sp.members, sp.nonmembers, o.hellinger_bins)}};
    }
    report["baselines"] = base;
  }

  std::vector<int> sizes = {static_cast<int>(matrix.cols())};
  sizes.insert(sizes.end(), train.hidden.begin(), train.hidden.end());
  sizes.push_back(1);
  report["classifier"] = {
      {"layer_sizes", sizes},
      {"note", "width, depth, and optimizer settings are implementation choices"}};
  report["provenance"] = {{"inputs", inputs},
                          {"seed", c.seed},
                          {"toolkit_version", kToolkitVersion},
                          {"config",
                           {{"families", families_json(o.inputs.families)},
                            {"train", train_json(train)},
                            {"permute_labels", o.permute_labels},
                            {"hellinger_bins", o.hellinger_bins},
                            {"min_k_percent", kDefaultMinKPercent},
                            {"zlib_level", kZlibLevel}}}};
  write_text(o.out_dir / "report.json", report.dump(2) + "\n");

  if (o.model_out) {
    std::vector<std::size_t> all(matrix.rows());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    save_model(train_model(matrix, labels, all, train, derive_seed(c.seed, 0)), *o.model_out);
  }
}

void cmd_masking(const MaskingOptions& o, const Common&) {
  const LoadedWeights w = load_weights(o.weights);
  const TinyTransformer model(w.config, w.weights);
  const TokenSequence tokens = o.tokens.empty() ? tokenize_bytes(o.text) : parse_tokens(o.tokens);
  if (o.mode != "independent" && o.mode != "cumulative") {
    fail(ErrorCode::kInvalidArgument, "masking mode must be independent or cumulative");
  }
  const MaskingMode mode =
      o.mode == "independent" ? MaskingMode::kIndependent : MaskingMode::kCumulative;
  const auto shifts = masking_sweep(tokens, model, mode, o.k_max);

  std::vector<std::array<double, 2>> coords(shifts.size());
  if (shifts.size() >= 3) {
    coords = pca2(shifts).projected;
  } else if (shifts.size() == 2) {
    // Too few vectors for a 2-component fit; the unperturbed origin anchors it.
    std::vector<std::vector<double>> with_origin = {std::vector<double>(shifts[0].size(), 0.0)};
    with_origin.insert(with_origin.end(), shifts.begin(), shifts.end());
    const Pca2 p = pca2(with_origin);
    coords = {p.projected[1], p.projected[2]};
  }
  std::string csv = "step,pc1,pc2,vector_norm\n";
  for (std::size_t k = 0; k < shifts.size(); ++k) {
    double norm = 0.0;
    for (double v : shifts[k]) norm += v * v;
    norm = std::sqrt(norm);
    if (shifts.size() == 1) coords[k] = {norm, 0.0};
    csv += std::to_string(k + 1) + "," + format_double(coords[k][0]) + "," +
           format_double(coords[k][1]) + "," + format_double(norm) + "\n";
  }
  write_text(o.out, csv);
}

void cmd_rank(const RankOptions& o, const Common& c) {
  const auto corpus = read_corpus(o.corpus);
  const MlpModel model = load_model(o.model);
  std::vector<PerturbationSpec> plan;
  if (o.families.perturbation) {
    if (!o.plan) fail(ErrorCode::kInvalidArgument, "--plan is required with perturbation features");
    plan = read_plan(*o.plan);
  }
  const ScoreTable table = score_corpus(corpus, model, plan, o.families, c.jobs);
  const RankingReport report = evaluate_ranking(table, o.top_n, o.bottom_n, o.full);
  write_score_table_csv(table, report, o.out_csv);
  write_text(o.out_json, ranking_report_json(report));
}

void cmd_baselines(const BaselinesOptions& o, const Common&) {
  const auto records = read_logprob_dump(o.logprobs);
  std::map<std::string, std::string> texts;
  if (o.texts) {
    for (const auto& s : read_samples(*o.texts)) {
      if (s.sequence.text) texts[s.sample_id] = *s.sequence.text;
    }
  }
  std::map<std::string, LogProbRecord> reference;
  if (o.reference) {
    for (auto& r : read_logprob_dump(*o.reference)) reference[r.sample_id] = std::move(r);
  }
  std::vector<BaselineScore> out;
  for (const auto& rec : records) {
    out.push_back(loss_score(rec));
    out.push_back(ppl_score(rec));
    out.push_back(min_k_score(rec, o.k_percent));
    auto t = texts.find(rec.sample_id);
    if (t != texts.end()) out.push_back(zlib_score(rec, t->second));
    auto r = reference.find(rec.sample_id);
    if (r != reference.end()) out.push_back(ref_score(rec, r->second));
  }
  write_baseline_csv(out, o.out);
}

}  // namespace attenmia::cli
