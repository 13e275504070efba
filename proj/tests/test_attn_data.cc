#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "attenmia/attn_data.h"
#include "attenmia/error.h"
#include "doctest.h"
#include "expect_error.h"
#include "oracles.h"
#include "temp_dir.h"

using namespace attenmia;

namespace {

std::vector<AttentionRecord> fixture(std::uint64_t seed, int n, int L = 2, int H = 3) {
  std::vector<AttentionRecord> out;
  for (int i = 0; i < n; ++i) {
    const int T = 1 + (i * 3) % 7;
    AttentionRecord r{"sample-" + std::to_string(i), oracle::random_stack(seed + i, L, H, T, i % 2 == 0),
                      i % 2, std::nullopt};
    if (i == 1) r.group = "wiki";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST_CASE("single-token stack round trips as [[1.0]]") {
  AttentionStack s(1, 1, 1, true, {1.0f});
  const Bytes file = encode_attention_dump(std::vector<AttentionRecord>{{"a", s, 1, {}}}, "m");
  AttentionDumpReader reader(file, "mem");
  const AttentionRecord r = reader.read("a");
  CHECK(r.stack.seq_len() == 1);
  CHECK(r.stack.at(0, 0, 0, 0) == 1.0f);
  CHECK(r.label == 1);
}

TEST_CASE("row summing to 0.9 is rejected naming layer, head and row") {
  AttentionStack s(2, 2, 2, false, std::vector<float>(16, 0.5f));
  s.at(1, 0, 1, 0) = 0.4f;
  try {
    check_stack(s, "x");
    FAIL("accepted a corrupt stack");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptTensor);
    const std::string msg = e.what();
    CHECK(msg.find("layer 2") != std::string::npos);
    CHECK(msg.find("head 1") != std::string::npos);
    CHECK(msg.find("row 2") != std::string::npos);
  }
  // The writer refuses it too, and a reader refuses a patched payload.
  CHECK(code_of([&] { encode_attention_dump(std::vector<AttentionRecord>{{"a", s, 0, {}}}, "m"); }) ==
        ErrorCode::kCorruptTensor);
  AttentionStack good(1, 1, 2, false, {0.5f, 0.5f, 0.5f, 0.5f});
  Bytes file = encode_attention_dump(std::vector<AttentionRecord>{{"a", good, 0, {}}}, "m");
  const float bad = 0.4f;
  std::memcpy(file.data() + file.size() - 4, &bad, 4);
  AttentionDumpReader reader(file, "mem");
  CHECK(code_of([&] { reader.read("a"); }) == ErrorCode::kCorruptTensor);
}

TEST_CASE("causal upper triangle must be exactly zero on read") {
  AttentionStack s(1, 1, 2, true, {1.0f, 0.0f, 0.5f, 0.5f});
  CHECK_FALSE(find_violation(s).has_value());
  AttentionStack leaky(1, 1, 2, true, {1.0f - 1e-7f, 1e-7f, 0.5f, 0.5f});
  CHECK(find_violation(leaky).has_value());
}

TEST_CASE("rewriting a read fixture is byte-identical") {
  TempDir dir("atnd");
  const auto records = fixture(11, 3);
  write_attention_dump(records, "fixture", dir / "a.atnd");
  AttentionDumpReader reader(dir / "a.atnd");
  const auto back = reader.read_all();
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == records[i]);
  write_attention_dump(back, reader.manifest().model_tag, dir / "b.atnd");
  CHECK(read_file(dir / "a.atnd") == read_file(dir / "b.atnd"));
}

TEST_CASE("f32 bit patterns survive a round trip") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto records = fixture(seed * 100, 4, 1 + seed % 3, 1 + seed % 4);
    AttentionDumpReader reader(encode_attention_dump(records, "m"), "mem");
    for (const auto& r : records) {
      const auto got = reader.read(r.sample_id);
      REQUIRE(got.stack.data().size() == r.stack.data().size());
      CHECK(std::memcmp(got.stack.data().data(), r.stack.data().data(),
                        r.stack.data().size() * sizeof(float)) == 0);
      CHECK(got.stack.causal() == r.stack.causal());
    }
  }
}

TEST_CASE("empty dump has a valid header and no samples") {
  AttentionDumpReader reader(encode_attention_dump({}, "m"), "mem");
  CHECK(reader.manifest().samples.empty());
  CHECK(reader.read_all().empty());
}

TEST_CASE("writer preconditions") {
  auto records = fixture(3, 2);
  records[1].stack = oracle::random_stack(9, 2, 4, 3, true);
  CHECK(code_of([&] { encode_attention_dump(records, "m"); }) == ErrorCode::kHeterogeneousShape);
  records = fixture(3, 2);
  records[1].sample_id = records[0].sample_id;
  CHECK(code_of([&] { encode_attention_dump(records, "m"); }) == ErrorCode::kDuplicateSampleId);
  CHECK(code_of([&] { write_attention_dump(fixture(3, 1), "m", "/nonexistent-dir/x.atnd"); }) ==
        ErrorCode::kIoFailure);
}

TEST_CASE("reader errors") {
  const Bytes file = encode_attention_dump(fixture(5, 2), "m");
  AttentionDumpReader reader(file, "mem");
  CHECK(code_of([&] { reader.read("missing"); }) == ErrorCode::kUnknownSample);

  Bytes wrong = file;
  wrong[0] = 'X';
  CHECK(code_of([&] { AttentionDumpReader r(wrong, "w"); }) == ErrorCode::kBadMagic);

  Bytes cut(file.begin(), file.end() - 3);
  CHECK(code_of([&] { AttentionDumpReader r(cut, "c"); }) == ErrorCode::kTruncatedFile);
  Bytes header_cut(file.begin(), file.begin() + 8);
  CHECK(code_of([&] { AttentionDumpReader r(header_cut, "c"); }) == ErrorCode::kTruncatedFile);
}

TEST_CASE("manifest lists keys in order and lengths are L*H*T*T*4") {
  const auto records = fixture(8, 3);
  const Bytes file = encode_attention_dump(records, "tag");
  const Container c = parse_container(file, "ATND", "mem");
  CHECK(c.header.rfind("{\"format_version\":1,\"model_tag\":\"tag\",\"layers\":2,\"heads\":3,", 0) == 0);
  CHECK(c.header.find("{\"id\":\"sample-0\",\"seq_len\":1,\"offset\":0,\"length\":24,\"label\":0,"
                      "\"group\":null}") != std::string::npos);
  AttentionDumpReader reader(file, "mem");
  std::uint64_t next = 0;
  for (const auto& e : reader.manifest().samples) {
    CHECK(e.offset == next);
    CHECK(e.length == static_cast<std::uint64_t>(2 * 3 * e.seq_len * e.seq_len * 4));
    next += e.length;
  }
  CHECK(reader.manifest().samples[1].group == std::optional<std::string>("wiki"));
}

TEST_CASE("schema hash tracks header content") {
  const auto a = AttentionDumpReader(encode_attention_dump(fixture(1, 2), "m"), "a").manifest();
  const auto b = AttentionDumpReader(encode_attention_dump(fixture(1, 3), "m"), "b").manifest();
  const auto c = AttentionDumpReader(encode_attention_dump(fixture(1, 2, 3, 3), "m"), "c").manifest();
  const auto a2 = AttentionDumpReader(encode_attention_dump(fixture(1, 2), "m"), "a2").manifest();
  CHECK(a.schema_hash == a2.schema_hash);
  CHECK(a.schema_hash != b.schema_hash);
  CHECK(a.schema_hash != c.schema_hash);
}

TEST_CASE("log-prob dumps") {
  SUBCASE("single value round trips bit-exactly") {
    const std::vector<LogProbRecord> recs = {{"a", {-0.5f}, "m"}};
    CHECK(decode_logprob_dump(encode_logprob_dump(recs), "mem") == recs);
  }
  SUBCASE("positive value is rejected") {
    const std::vector<LogProbRecord> recs = {{"a", {-0.5f, 0.1f}, "m"}};
    CHECK(code_of([&] { encode_logprob_dump(recs); }) == ErrorCode::kInvalidLogProb);
    const std::vector<LogProbRecord> nan = {{"a", {std::nanf("")}, "m"}};
    CHECK(code_of([&] { encode_logprob_dump(nan); }) == ErrorCode::kInvalidLogProb);
  }
  SUBCASE("1000 records round trip through a file") {
    TempDir dir("lgpd");
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<float> u(-12.0f, 0.0f);
    std::vector<LogProbRecord> recs;
    for (int i = 0; i < 1000; ++i) {
      LogProbRecord r{"r" + std::to_string(i), {}, "model"};
      for (int t = 0; t < i % 9; ++t) r.token_logprobs.push_back(u(gen));
      recs.push_back(std::move(r));
    }
    write_logprob_dump(recs, dir / "x.lgpd");
    CHECK(read_logprob_dump(dir / "x.lgpd") == recs);
  }
  SUBCASE("duplicate ids are rejected") {
    const std::vector<LogProbRecord> recs = {{"a", {-1.0f}, "m"}, {"a", {-1.0f}, "m"}};
    CHECK(code_of([&] { encode_logprob_dump(recs); }) == ErrorCode::kDuplicateSampleId);
  }
}

TEST_CASE("stack helpers") {
  const AttentionStack s = oracle::random_stack(4, 3, 2, 6, true);
  const AttentionStack t = truncate_stack(s, 4);
  CHECK(t.seq_len() == 4);
  CHECK(t.at(2, 1, 3, 2) == s.at(2, 1, 3, 2));
  CHECK_FALSE(find_violation(t).has_value());

  const AttentionStack dense = oracle::random_stack(5, 1, 1, 5, false);
  CHECK_FALSE(find_violation(truncate_stack(dense, 3)).has_value());

  const std::vector<int> keep = {2, 0};
  const AttentionStack sel = select_layers(s, keep);
  CHECK(sel.layers() == 2);
  CHECK(sel.at(0, 1, 4, 3) == s.at(2, 1, 4, 3));
  CHECK(code_of([] { AttentionStack bad(0, 1, 1, true); }) == ErrorCode::kInvalidShape);
}

TEST_CASE("token validation") {
  CHECK(code_of([] { validate_tokens({}, 10); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { validate_tokens({{1, 10}, {}}, 10); }) == ErrorCode::kTokenOutOfVocab);
  CHECK(tokenize_bytes("hi").tokens == std::vector<std::int32_t>{'h', 'i'});
}
