#include "cli/cli.h"

#include <cstdlib>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "attenmia/error.h"
#include "cli/commands.h"

namespace attenmia::cli {

namespace {

constexpr int kUsageExit = 2;

std::uint64_t default_seed() {
  const char* env = std::getenv("ATTENMIA_SEED");
  if (env == nullptr || *env == '\0') return 0;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used == std::string(env).size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::kInvalidArgument, std::string("ATTENMIA_SEED is not an integer: '") + env + "'");
}

void add_family_flags(CLI::App* cmd, FeatureOptions& f, std::string& layers) {
  cmd->add_flag("--no-concentration{false},--concentration{true}", f.concentration,
                "Toggle KL-to-uniform concentration features");
  cmd->add_flag("--no-transitional{false},--transitional{true}", f.transitional,
                "Toggle cross-layer transition features");
  cmd->add_flag("--no-perturbation{false},--perturbation{true}", f.perturbation,
                "Toggle perturbation-shift features");
  cmd->add_option("--layers", layers, "Layer filter: 2, 1,3 or 1..2 (1-based)");
  cmd->add_option("--max-len", f.max_len, "Truncate sequences to this many tokens (0 = off)")
      ->check(CLI::NonNegativeNumber);
}

void add_feature_inputs(CLI::App* cmd, FeatureInputs& in, std::string& layers) {
  cmd->add_option("--attn", in.attn, "Attention dump (ATND)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--plan", in.plan, "Perturbation plan (default <attn stem>.plan.json)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--perturbed", in.perturbed,
                  "Perturbed dumps in plan order (default <attn stem>.p<k>.atnd)")
      ->check(CLI::ExistingFile);
  add_family_flags(cmd, in.families, layers);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    CLI::App app{"Attention-based membership inference auditing toolkit", "attenmia"};
    app.set_version_flag("--version", kToolkitVersion);
    app.require_subcommand(1);
    app.fallthrough();

    Common common;
    common.seed = default_seed();
    app.add_option("--seed", common.seed, "Global seed (default $ATTENMIA_SEED or 0)");
    app.add_option("--jobs", common.jobs, "Worker threads for per-sample stages")
        ->check(CLI::PositiveNumber);

    SynthOptions synth;
    auto* s = app.add_subcommand("synth", "Write a labeled synthetic attention corpus");
    s->add_option("--members", synth.members, "Member samples")->check(CLI::NonNegativeNumber);
    s->add_option("--nonmembers", synth.nonmembers, "Non-member samples")
        ->check(CLI::NonNegativeNumber);
    s->add_option("--layers", synth.layers, "Layers");
    s->add_option("--heads", synth.heads, "Heads per layer");
    s->add_option("--seq-len", synth.seq_len, "Tokens per sample");
    s->add_option("--vocab", synth.vocab, "Vocabulary size used by the replacement plan");
    s->add_option("--out", synth.out, "Output ATND path; companions share its stem")->required();

    InferOptions infer;
    auto* i = app.add_subcommand("infer", "Dump attention and log-probs from a tiny transformer");
    i->add_option("--weights", infer.weights, "Weights (WTSB)")->required()->check(CLI::ExistingFile);
    i->add_option("--samples", infer.samples, "JSON lines {id, text|tokens, label, group}")
        ->required()
        ->check(CLI::ExistingFile);
    i->add_option("--out", infer.out, "Output ATND path")->required();
    i->add_option("--plan", infer.plan, "Also write perturbed dumps for this plan")
        ->check(CLI::ExistingFile);
    i->add_option("--model-tag", infer.model_tag, "Model tag recorded in the dumps");

    FeaturesOptions features;
    std::string features_layers;
    auto* f = app.add_subcommand("features", "Extract the feature matrix from attention dumps");
    add_feature_inputs(f, features.inputs, features_layers);
    f->add_option("--out", features.out_csv, "Feature CSV")->required();
    f->add_option("--cache", features.out_cache, "Binary feature cache");

    AuditOptions audit;
    std::string audit_layers, audit_hidden = "64,32";
    auto* a = app.add_subcommand("audit", "Cross-validated membership audit");
    add_feature_inputs(a, audit.inputs, audit_layers);
    a->add_option("--out-dir", audit.out_dir, "Report directory")->required();
    a->add_option("--logprobs", audit.logprobs, "LGPD for loss/ppl/min_k baselines")
        ->check(CLI::ExistingFile);
    a->add_option("--model-out", audit.model_out, "Also train on all samples and save (MLPM)");
    a->add_option("--folds", audit.train.folds, "Cross-validation folds");
    a->add_option("--epochs", audit.train.max_epochs, "Maximum epochs");
    a->add_option("--batch-size", audit.train.batch_size, "Minibatch size");
    a->add_option("--lr", audit.train.learning_rate, "Adam learning rate");
    a->add_option("--patience", audit.train.patience, "Early-stopping patience (epochs)");
    a->add_option("--hidden", audit_hidden, "Hidden sizes, e.g. 64,32, or none for logistic");
    a->add_option("--hellinger-bins", audit.hellinger_bins, "Histogram bins for Hellinger")
        ->check(CLI::PositiveNumber);
    a->add_flag("--permute-labels", audit.permute_labels, "Shuffle labels (null control)");

    MaskingOptions masking;
    auto* m = app.add_subcommand("masking", "Attention shift under progressive token masking");
    m->add_option("--weights", masking.weights, "Weights (WTSB)")->required()->check(CLI::ExistingFile);
    auto* tok = m->add_option("--tokens", masking.tokens, "Comma-separated token ids");
    auto* txt = m->add_option("--text", masking.text, "Text, byte-tokenized");
    tok->excludes(txt);
    m->add_option("--mode", masking.mode, "independent or cumulative")
        ->check(CLI::IsMember({"independent", "cumulative"}));
    m->add_option("--k-max", masking.k_max, "Masking steps")->required();
    m->add_option("--out", masking.out, "Output CSV")->required();

    RankOptions rank;
    std::string rank_layers;
    auto* r = app.add_subcommand("rank", "Score extraction candidates and correlate with ROUGE-L");
    r->add_option("--corpus", rank.corpus, "Candidate JSON lines")->required()->check(CLI::ExistingFile);
    r->add_option("--model", rank.model, "Classifier (MLPM)")->required()->check(CLI::ExistingFile);
    r->add_option("--plan", rank.plan, "Perturbation plan")->check(CLI::ExistingFile);
    add_family_flags(r, rank.families, rank_layers);
    r->add_option("--top", rank.top_n, "Top-N by ROUGE-L");
    r->add_option("--bottom", rank.bottom_n, "Bottom-N by ROUGE-L");
    r->add_flag("--full", rank.full, "Correlate on every candidate");
    r->add_option("--out-csv", rank.out_csv, "Per-candidate table")->required();
    r->add_option("--out-json", rank.out_json, "Correlation summary")->required();

    BaselinesOptions baselines;
    auto* b = app.add_subcommand("baselines", "Output-based membership scores from log-probs");
    b->add_option("--logprobs", baselines.logprobs, "LGPD")->required()->check(CLI::ExistingFile);
    b->add_option("--texts", baselines.texts, "JSON lines {id, text} for the zlib score")
        ->check(CLI::ExistingFile);
    b->add_option("--reference", baselines.reference, "Reference-model LGPD for the ref score")
        ->check(CLI::ExistingFile);
    b->add_option("--k", baselines.k_percent, "Min-K% percentage");
    b->add_option("--out", baselines.out, "Output CSV")->required();

    std::vector<std::string> argv_store = {"attenmia"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& x : argv_store) argv.push_back(x.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::CallForVersion&) {
      out << kToolkitVersion << "\n";
      return 0;
    } catch (const CLI::ParseError& e) {
      std::string msg = e.what();
      for (char& ch : msg) {
        if (ch == '\n') ch = ' ';
      }
      err << "error: InvalidArgument: " << msg << "\n";
      return kUsageExit;
    }

    features.inputs.families.layers = parse_layer_list(features_layers);
    audit.inputs.families.layers = parse_layer_list(audit_layers);
    rank.families.layers = parse_layer_list(rank_layers);
    audit.train.hidden = parse_hidden(audit_hidden);

    if (s->parsed()) cmd_synth(synth, common);
    else if (i->parsed()) cmd_infer(infer, common);
    else if (f->parsed()) cmd_features(features, common);
    else if (a->parsed()) cmd_audit(audit, common);
    else if (m->parsed()) cmd_masking(masking, common);
    else if (r->parsed()) cmd_rank(rank, common);
    else if (b->parsed()) cmd_baselines(baselines, common);
    return 0;
  } catch (const Error& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    err << "error: " << error_code_name(e.code()) << ": " << msg << "\n";
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: IoFailure: " << e.what() << "\n";
    return exit_code_for(ErrorCode::kIoFailure);
  } catch (const std::exception& e) {
    err << "error: Internal: " << e.what() << "\n";
    return exit_code_for(ErrorCode::kInternal);
  }
}

}  // namespace attenmia::cli
