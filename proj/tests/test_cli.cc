#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "attenmia/attn_data.h"
#include "attenmia/binary_io.h"
#include "attenmia/tiny_transformer.h"
#include "cli/cli.h"
#include "doctest.h"
#include "fixtures.h"
#include "json.hpp"
#include "temp_dir.h"

using namespace attenmia;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

std::size_t line_count(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

bool one_error_line(const std::string& err) {
  static const std::regex pattern("error: [A-Za-z]+: [^\n]+\n");
  return std::regex_match(err, pattern);
}

// Small synthetic dump plus companions at dir/name.atnd.
std::filesystem::path synth(const TempDir& dir, const std::string& name, int n = 30,
                            const std::string& seed = "5") {
  const auto path = dir / (name + ".atnd");
  const auto r = call({"--seed", seed, "synth", "--members", std::to_string(n), "--nonmembers",
                       std::to_string(n), "--layers", "3", "--heads", "2", "--seq-len", "10",
                       "--out", path.string()});
  REQUIRE(r.code == 0);
  return path;
}

std::vector<std::string> quick_audit(const std::filesystem::path& attn, const std::filesystem::path& out) {
  return {"--seed", "3", "audit", "--attn", attn.string(), "--out-dir", out.string(),
          "--epochs", "15", "--hidden", "8", "--lr", "0.01"};
}

}  // namespace

TEST_CASE("help and version") {
  const auto h = call({"--help"});
  CHECK(h.code == 0);
  for (const char* cmd : {"synth", "infer", "features", "audit", "masking", "rank", "baselines"})
    CHECK(h.out.find(cmd) != std::string::npos);
  const auto a = call({"audit", "--help"});
  CHECK(a.code == 0);
  for (const char* flag : {"--attn", "--plan", "--perturbed", "--no-concentration", "--no-transitional",
                           "--no-perturbation", "--layers", "--max-len", "--out-dir", "--logprobs",
                           "--model-out", "--folds", "--epochs", "--hidden", "--permute-labels"})
    CHECK(a.out.find(flag) != std::string::npos);
  CHECK(call({"--version"}).out == "0.1.0\n");
}

TEST_CASE("usage errors") {
  TempDir dir("cli_usage");
  const auto unknown = call({"synth", "--out", (dir / "x.atnd").string(), "--bogus"});
  CHECK(unknown.code == 2);
  CHECK(one_error_line(unknown.err));
  CHECK(unknown.err.rfind("error: InvalidArgument: ", 0) == 0);
  CHECK(call({}).code == 2);
  CHECK(call({"frobnicate"}).code == 2);
  const auto missing = call({"features", "--attn", (dir / "nope.atnd").string(), "--out", "x.csv"});
  CHECK(missing.code == 2);
  CHECK(one_error_line(missing.err));
}

TEST_CASE("synth is reproducible and honours counts") {
  TempDir dir("cli_synth");
  const auto a = synth(dir, "a", 7);
  const auto b = synth(dir, "b", 7);
  for (const char* ext : {".atnd", ".lgpd", ".plan.json", ".p0.atnd", ".p1.atnd", ".p2.atnd"}) {
    CHECK(slurp(dir / (std::string("a") + ext)) == slurp(dir / (std::string("b") + ext)));
  }
  const AttentionDumpReader reader(a);
  int members = 0;
  for (const auto& e : reader.manifest().samples) members += e.label;
  CHECK(reader.manifest().samples.size() == 14);
  CHECK(members == 7);
  CHECK(reader.manifest().layers == 3);
  synth(dir, "c", 7, "6");
  CHECK(slurp(dir / "c.atnd") != slurp(a));

  const auto empty = dir / "empty.atnd";
  REQUIRE(call({"synth", "--members", "0", "--nonmembers", "0", "--out", empty.string()}).code == 0);
  CHECK(AttentionDumpReader(empty).manifest().samples.empty());
  const auto bad = call({"synth", "--layers", "0", "--out", (dir / "bad.atnd").string()});
  CHECK(bad.code == 2);
  CHECK(bad.err.rfind("error: InvalidShape: ", 0) == 0);
}

TEST_CASE("seed defaults to the environment") {
  TempDir dir("cli_env");
  ::setenv("ATTENMIA_SEED", "5", 1);
  REQUIRE(call({"synth", "--members", "3", "--nonmembers", "3", "--layers", "3", "--heads", "2",
                "--seq-len", "10", "--out", (dir / "env.atnd").string()})
              .code == 0);
  ::unsetenv("ATTENMIA_SEED");
  synth(dir, "flag", 3, "5");
  CHECK(slurp(dir / "env.atnd") == slurp(dir / "flag.atnd"));
}

TEST_CASE("infer writes dumps matching the engine") {
  TempDir dir("cli_infer");
  const ModelConfig c = fixture_model_config();
  const WeightBundle w = random_weights(c, 12);
  save_weights(c, w, dir / "w.wtsb");
  std::ofstream(dir / "s.jsonl") << R"({"id":"a","text":"hello world","label":1})" << '\n'
                                 << R"({"id":"b","tokens":[5,6,7,8,9,10,11],"label":0,"group":"g"})" << '\n';
  std::ofstream(dir / "plan.json") << R"({"specs":[{"kind":"drop","positions":[2]},{"kind":"replace","positions":[3],"seed":4}]})";
  for (const char* name : {"x", "y"}) {
    const auto r = call({"--jobs", name[0] == 'x' ? "1" : "3", "infer", "--weights", (dir / "w.wtsb").string(),
                         "--samples", (dir / "s.jsonl").string(), "--plan", (dir / "plan.json").string(),
                         "--out", (dir / (std::string(name) + ".atnd")).string()});
    REQUIRE(r.code == 0);
  }
  for (const char* ext : {".atnd", ".lgpd", ".p0.atnd", ".p1.atnd"})
    CHECK(slurp(dir / (std::string("x") + ext)) == slurp(dir / (std::string("y") + ext)));
  const TinyTransformer m(c, w);
  CHECK(read_attention_dump(dir / "x.atnd", "b") == m.attention({{5, 6, 7, 8, 9, 10, 11}, {}}));
  const auto lp = read_logprob_dump(dir / "x.lgpd");
  CHECK(lp.size() == 2);
  CHECK(lp[0].token_logprobs.size() == 10);
  CHECK(read_attention_dump(dir / "x.p0.atnd", "b").seq_len() == 6);
}

TEST_CASE("features honours family and layer flags") {
  TempDir dir("cli_feat");
  const auto attn = synth(dir, "d", 4);
  REQUIRE(call({"features", "--attn", attn.string(), "--out", (dir / "all.csv").string(),
                "--cache", (dir / "all.feat").string()}).code == 0);
  REQUIRE(call({"features", "--attn", attn.string(), "--out", (dir / "all2.csv").string()}).code == 0);
  CHECK(slurp(dir / "all.csv") == slurp(dir / "all2.csv"));
  CHECK(line_count(dir / "all.csv") == 9);
  const FeatureMatrix cached = read_feature_cache(dir / "all.feat");
  CHECK(cached.rows() == 8);
  // 6 concentration + 5 * 4 transitional + 2 * 3 * 6 perturbation.
  CHECK(cached.cols() == 6 + 20 + 36);

  REQUIRE(call({"features", "--attn", attn.string(), "--layers", "1..1", "--out",
                (dir / "l1.csv").string()}).code == 0);
  const std::string header = first_line(dir / "l1.csv");
  CHECK(header.find("_l1_") != std::string::npos);
  CHECK(header.find("_l2_") == std::string::npos);
  CHECK(header.find("_l3_") == std::string::npos);

  REQUIRE(call({"features", "--attn", attn.string(), "--no-perturbation", "--no-concentration",
                "--out", (dir / "t.csv").string()}).code == 0);
  CHECK(first_line(dir / "t.csv").find("pert_") == std::string::npos);
  CHECK(first_line(dir / "t.csv").find("concentration") == std::string::npos);

  const auto off = call({"features", "--attn", attn.string(), "--no-perturbation", "--no-concentration",
                         "--no-transitional", "--out", (dir / "n.csv").string()});
  CHECK(off.code == 2);
  const auto deep = call({"features", "--attn", attn.string(), "--layers", "7", "--out", (dir / "n.csv").string()});
  CHECK(deep.code == 2);
  CHECK(one_error_line(deep.err));
  CHECK(call({"features", "--attn", attn.string(), "--layers", "2..x", "--out", (dir / "n.csv").string()}).code == 2);
}

TEST_CASE("corrupt dumps are invariant violations") {
  TempDir dir("cli_corrupt");
  const auto attn = synth(dir, "d", 2);
  Bytes bytes = read_file(attn);
  // The last four bytes are the final f32 of the last row.
  float v = 0.5f;
  std::memcpy(bytes.data() + bytes.size() - 4, &v, 4);
  std::ofstream(attn, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                               static_cast<std::streamsize>(bytes.size()));
  const auto r = call({"features", "--attn", attn.string(), "--no-perturbation", "--out",
                       (dir / "x.csv").string()});
  CHECK(r.code == 3);
  CHECK(r.err.rfind("error: CorruptTensor: ", 0) == 0);
}

TEST_CASE("audit report contents and determinism") {
  TempDir dir("cli_audit");
  const auto attn = synth(dir, "d", 30);
  auto args = quick_audit(attn, dir / "r1");
  args.insert(args.end(), {"--logprobs", (dir / "d.lgpd").string(), "--model-out", (dir / "m1.mlpm").string()});
  REQUIRE(call(args).code == 0);
  auto args2 = quick_audit(attn, dir / "r2");
  args2.insert(args2.end(), {"--logprobs", (dir / "d.lgpd").string(), "--model-out", (dir / "m2.mlpm").string(),
                             "--jobs", "4"});
  REQUIRE(call(args2).code == 0);
  for (const char* f : {"report.json", "roc.csv", "scores.csv", "hellinger.csv", "features.csv", "features.feat"})
    CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));
  CHECK(slurp(dir / "m1.mlpm") == slurp(dir / "m2.mlpm"));

  const auto j = nlohmann::json::parse(slurp(dir / "r1" / "report.json"));
  CHECK(j.at("folds").size() == 5);
  CHECK(j.at("samples").at("total") == 60);
  CHECK(j.at("samples").at("members") == 30);
  CHECK(j.at("samples").at("features") == 62);
  CHECK(j.at("auc").at("mean").get<double>() >= 0.9);
  CHECK(j.at("baselines").contains("loss"));
  CHECK(j.at("baselines").contains("min_k"));
  CHECK(j.at("provenance").at("seed") == 3);
  CHECK(j.at("provenance").at("toolkit_version") == "0.1.0");
  CHECK(j.at("provenance").at("inputs").size() >= 2);
  CHECK(j.at("hellinger").contains("trans_corr"));
  CHECK(first_line(dir / "r1" / "scores.csv") == "sample_id,fold,score,label");
  CHECK(line_count(dir / "r1" / "scores.csv") == 61);
  CHECK(first_line(dir / "r1" / "roc.csv") == "threshold,fpr,tpr");
  CHECK(first_line(dir / "r1" / "hellinger.csv") ==
        "column,family,layer,head,tag,hellinger,member_mean,nonmember_mean");

  const auto bad = quick_audit(attn, dir / "r3");
  auto folds = bad;
  folds.insert(folds.end(), {"--folds", "1"});
  CHECK(call(folds).code == 2);
}

TEST_CASE("masking output") {
  TempDir dir("cli_mask");
  const ModelConfig c = fixture_model_config();
  save_weights(c, random_weights(c, 3), dir / "w.wtsb");
  const std::string text = "attention anchors early";
  auto run_mask = [&](const std::string& mode, int k, const std::string& out) {
    return call({"masking", "--weights", (dir / "w.wtsb").string(), "--text", text, "--mode", mode,
                 "--k-max", std::to_string(k), "--out", (dir / out).string()});
  };
  REQUIRE(run_mask("independent", 1, "one.csv").code == 0);
  CHECK(line_count(dir / "one.csv") == 2);
  CHECK(first_line(dir / "one.csv") == "step,pc1,pc2,vector_norm");
  REQUIRE(run_mask("cumulative", 8, "a.csv").code == 0);
  REQUIRE(run_mask("cumulative", 8, "b.csv").code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(line_count(dir / "a.csv") == 9);
  CHECK(run_mask("sideways", 2, "x.csv").code == 2);

  // With attention anchored on the first position, cumulative masking shifts
  // concentration further at every step.
  save_weights(c, anchored_weights(c, 3), dir / "w.wtsb");
  REQUIRE(run_mask("cumulative", 8, "rise.csv").code == 0);
  std::ifstream in(dir / "rise.csv");
  std::string line;
  std::getline(in, line);
  std::vector<double> norms;
  while (std::getline(in, line)) norms.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  REQUIRE(norms.size() == 8);
  CHECK(norms[5] > norms[0]);
  for (std::size_t k = 1; k < norms.size(); ++k) CHECK(norms[k] > norms[k - 1]);
  CHECK(run_mask("cumulative", 40, "x.csv").code == 2);
}

TEST_CASE("rank and baselines") {
  TempDir dir("cli_rank");
  const auto fx = make_extraction_fixture(dir / "fx", 12, 9);
  for (const char* n : {"1", "2"}) {
    REQUIRE(call({"--jobs", n, "rank", "--corpus", fx.corpus.string(), "--model", fx.model.string(), "--plan",
                  fx.plan.string(), "--top", "4", "--bottom", "4", "--out-csv",
                  (dir / (std::string("r") + n + ".csv")).string(), "--out-json",
                  (dir / (std::string("r") + n + ".json")).string()})
                .code == 0);
  }
  CHECK(slurp(dir / "r1.csv") == slurp(dir / "r2.csv"));
  CHECK(slurp(dir / "r1.json") == slurp(dir / "r2.json"));
  CHECK(line_count(dir / "r1.csv") == 13);
  const auto j = nlohmann::json::parse(slurp(dir / "r1.json"));
  CHECK(j.at("pearson_r").contains("attenmia"));
  const auto big = call({"rank", "--corpus", fx.corpus.string(), "--model", fx.model.string(), "--plan",
                         fx.plan.string(), "--top", "10", "--bottom", "10", "--out-csv",
                         (dir / "x.csv").string(), "--out-json", (dir / "x.json").string()});
  CHECK(big.code == 2);
  CHECK(big.err.rfind("error: SelectionTooLarge: ", 0) == 0);

  std::ofstream texts(dir / "texts.jsonl");
  for (const auto& r : read_logprob_dump(dir / "fx" / "xl.lgpd"))
    texts << nlohmann::json{{"id", r.sample_id}, {"text", "some text for " + r.sample_id}}.dump() << '\n';
  texts.close();
  for (const char* n : {"1", "2"}) {
    REQUIRE(call({"baselines", "--logprobs", (dir / "fx" / "xl.lgpd").string(), "--texts",
                  (dir / "texts.jsonl").string(), "--reference", (dir / "fx" / "small.lgpd").string(),
                  "--out", (dir / (std::string("b") + n + ".csv")).string()})
                .code == 0);
  }
  CHECK(slurp(dir / "b1.csv") == slurp(dir / "b2.csv"));
  CHECK(line_count(dir / "b1.csv") == 1 + 12 * 5);
}
