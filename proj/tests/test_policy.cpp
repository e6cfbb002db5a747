#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/policy.hpp"
#include "support.hpp"

using namespace cdpo::policy;
using testsupport::TempDir;

namespace {

Tokenizer small_tokenizer() {
  return Tokenizer::build({"wa wb wc wd", "we wf"});  // vocab 4 + 6 = 10
}

ModelDims small_dims(const Tokenizer& tok) {
  ModelDims d;
  d.vocab = tok.vocab_size();
  d.embed = 8;
  d.layers = 1;
  d.heads = 2;
  d.context = 16;
  return d;
}

}  // namespace

TEST_CASE("tokenizer: reserved ids, sorted vocabulary, unk fallback") {
  const auto tok = small_tokenizer();
  CHECK(tok.vocab_size() == 10);
  CHECK(tok.vocabulary()[Tokenizer::kBos] == "<bos>");
  CHECK(tok.vocabulary()[Tokenizer::kEos] == "<eos>");
  CHECK(tok.vocabulary()[Tokenizer::kUnk] == "<unk>");
  CHECK(tok.vocabulary()[Tokenizer::kSep] == "<sep>");
  CHECK(tok.word_id("wa") == 4);  // sorted after the reserved block
  CHECK(tok.word_id("wf") == 9);
  CHECK(tok.word_id("nope") == Tokenizer::kUnk);

  const auto ids = tok.encode("wb  wa \t nope");
  CHECK(ids == std::vector<int>{5, 4, Tokenizer::kUnk});
  CHECK(tok.decode(ids) == "wb wa <unk>");
}

TEST_CASE("tokenizer: build dedupes, from_vocabulary round-trips") {
  const auto tok = Tokenizer::build({"x x x y", "y x"});
  CHECK(tok.vocab_size() == 6);

  const auto back = Tokenizer::from_vocabulary(tok.vocabulary());
  CHECK(back.vocabulary() == tok.vocabulary());
  CHECK(back.encode("y x") == tok.encode("y x"));

  CHECK_THROWS_AS(Tokenizer::from_vocabulary({"<bos>", "<eos>", "<unk>",
                                              "<sep>", "dup", "dup"}),
                  cdpo::ValidationError);
}

TEST_CASE("model dims are validated") {
  const auto tok = small_tokenizer();
  ModelDims d = small_dims(tok);
  d.heads = 3;  // embed 8 not divisible
  CHECK_THROWS_AS(PolicyModel(tok, d, 0, InitMode::zeros),
                  cdpo::ValidationError);
  d = small_dims(tok);
  d.vocab = 7;  // disagrees with the tokenizer
  CHECK_THROWS_AS(PolicyModel(tok, d, 0, InitMode::zeros),
                  cdpo::ValidationError);
}

TEST_CASE("zero parameters give exactly uniform next-token distributions") {
  // vocab of exactly 8 so 1/V is representable
  const auto tok = Tokenizer::build({"wa wb wc wd"});
  REQUIRE(tok.vocab_size() == 8);
  ModelDims d;
  d.vocab = 8;
  d.embed = 8;
  d.layers = 2;
  d.heads = 2;
  d.context = 16;
  PolicyModel model(tok, d, 0, InitMode::zeros);

  const std::vector<int> tokens = {4, 5, 6, 7, 1};
  const auto rows = next_token_distributions(model.dims(), model.parameters(),
                                             tokens);
  REQUIRE(rows.size() == tokens.size());
  for (const auto& row : rows) {
    REQUIRE(row.size() == 8);
    for (double p : row) CHECK(p == 0.125);
  }

  const std::vector<int> prompt = {4, 5};
  const std::vector<int> completion = {6, 7, 1};
  const double lp = sequence_logprob(model, prompt, completion);
  CHECK(lp == doctest::Approx(3.0 * std::log(1.0 / 8.0)).epsilon(1e-12));
}

TEST_CASE("random init is seed-deterministic") {
  const auto tok = small_tokenizer();
  const auto d = small_dims(tok);
  PolicyModel a(tok, d, 11, InitMode::random);
  PolicyModel b(tok, d, 11, InitMode::random);
  PolicyModel c(tok, d, 12, InitMode::random);
  CHECK(std::memcmp(a.parameters().data(), b.parameters().data(),
                    a.parameters().size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.parameters().data(), c.parameters().data(),
                    a.parameters().size() * sizeof(double)) != 0);
  CHECK(a.seed() == 11);
}

TEST_CASE("next-token distributions are normalized") {
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 3, InitMode::random);
  const std::vector<int> tokens = {4, 9, 5, 2, 8, 1};
  const auto rows =
      next_token_distributions(model.dims(), model.parameters(), tokens);
  REQUIRE(rows.size() == tokens.size());
  for (const auto& row : rows) {
    double sum = 0.0;
    for (double p : row) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("causal masking: a suffix edit never changes earlier rows") {
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 5, InitMode::random);

  std::vector<int> t1 = {4, 5, 6, 7, 8};
  std::vector<int> t2 = t1;
  t2.back() = 9;

  const auto r1 =
      next_token_distributions(model.dims(), model.parameters(), t1);
  const auto r2 =
      next_token_distributions(model.dims(), model.parameters(), t2);
  // row i only sees tokens before i, so even the edited row keeps its
  // distribution; only the probability read off it would change
  for (std::size_t i = 0; i < t1.size(); ++i)
    CHECK(std::memcmp(r1[i].data(), r2[i].data(),
                      r1[i].size() * sizeof(double)) == 0);
}

TEST_CASE("sequence_logprob decomposes over completion splits") {
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 7, InitMode::random);

  const std::vector<int> prompt = {4, 5};
  const std::vector<int> c1 = {6, 7};
  const std::vector<int> c2 = {8, 1};
  std::vector<int> c12 = c1;
  c12.insert(c12.end(), c2.begin(), c2.end());
  std::vector<int> p1 = prompt;
  p1.insert(p1.end(), c1.begin(), c1.end());

  const double whole = sequence_logprob(model, prompt, c12);
  const double split =
      sequence_logprob(model, prompt, c1) + sequence_logprob(model, p1, c2);
  CHECK(whole == doctest::Approx(split).epsilon(1e-9));
}

TEST_CASE("sequence_logprob agrees with the distribution rows") {
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 9, InitMode::random);
  const std::vector<int> prompt = {5, 8};
  const std::vector<int> completion = {4, 9, 1};

  std::vector<int> tokens = prompt;
  tokens.insert(tokens.end(), completion.begin(), completion.end());
  const auto rows =
      next_token_distributions(model.dims(), model.parameters(), tokens);

  double want = 0.0;
  for (std::size_t j = 0; j < completion.size(); ++j)
    want += std::log(rows[prompt.size() + j][completion[j]]);
  CHECK(sequence_logprob(model, prompt, completion) ==
        doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("input validation: empty spans and context overflow") {
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 0, InitMode::zeros);
  const std::vector<int> prompt = {4};
  const std::vector<int> completion = {5};
  const std::vector<int> empty;
  CHECK_THROWS_AS(sequence_logprob(model, empty, completion),
                  cdpo::ValidationError);
  CHECK_THROWS_AS(sequence_logprob(model, prompt, empty),
                  cdpo::ValidationError);

  const std::vector<int> lon(20, 4);  // 1 + 20 + 1 > context 16
  CHECK_THROWS_WITH_AS(sequence_logprob(model, lon, completion),
                       doctest::Contains("refusing to truncate"),
                       cdpo::ValidationError);

  const std::vector<int> bad = {4, 99};
  CHECK_THROWS_AS(sequence_logprob(model, bad, completion),
                  cdpo::ValidationError);
}

TEST_CASE("analytic gradient matches central finite differences everywhere") {
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 21, InitMode::random);
  const std::vector<int> prompt = {4, 7, 5};
  const std::vector<int> completion = {9, 6, 1};

  const auto grad = logprob_gradient(model, prompt, completion);
  REQUIRE(grad.size() == model.parameters().size());

  const double h = 1e-4;
  auto params = model.mutable_parameters();
  double max_rel = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = sequence_logprob(model, prompt, completion);
    params[i] = keep - h;
    const double dn = sequence_logprob(model, prompt, completion);
    params[i] = keep;
    const double fd = (up - dn) / (2.0 * h);
    const double rel =
        std::abs(fd - grad[i]) / std::max(1.0, std::abs(grad[i]));
    max_rel = std::max(max_rel, rel);
  }
  CHECK(max_rel < 1e-5);
}

TEST_CASE("SequenceGrad: logprob matches and gradient scales linearly") {
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 23, InitMode::random);
  const std::vector<int> prompt = {6, 4};
  const std::vector<int> completion = {5, 1};

  SequenceGrad sg(model.dims(), model.parameters(), prompt, completion);
  CHECK(sg.logprob() == sequence_logprob(model, prompt, completion));

  const auto base = logprob_gradient(model, prompt, completion);
  std::vector<double> acc(base.size(), 0.0);
  sg.accumulate_gradient(1.0, acc);
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(acc[i] == doctest::Approx(base[i]).epsilon(1e-12));

  // accumulates on top of existing content, scaled
  sg.accumulate_gradient(-2.0, acc);
  for (std::size_t i = 0; i < base.size(); ++i)
    CHECK(acc[i] == doctest::Approx(-base[i]).epsilon(1e-9));
}

TEST_CASE("reference snapshot is immune to later training") {
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 31, InitMode::random);
  const auto ref = snapshot_reference(model);

  const std::vector<int> prompt = {4, 5};
  const std::vector<int> completion = {6, 1};
  const double before = sequence_logprob(ref, prompt, completion);

  for (auto& p : model.mutable_parameters()) p += 0.5;
  CHECK(sequence_logprob(ref, prompt, completion) == before);
  CHECK(std::memcmp(ref.parameters().data(), model.parameters().data(),
                    ref.parameters().size() * sizeof(double)) != 0);
}

TEST_CASE("model files round-trip bit-exactly") {
  TempDir tmp;
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 37, InitMode::random);
  const auto path = tmp.file("model.bin");
  save_model(model, path);

  const auto back = load_model(path);
  CHECK(back.dims() == model.dims());
  CHECK(back.seed() == model.seed());
  CHECK(back.tokenizer().vocabulary() == tok.vocabulary());
  REQUIRE(back.parameters().size() == model.parameters().size());
  CHECK(std::memcmp(back.parameters().data(), model.parameters().data(),
                    model.parameters().size() * sizeof(double)) == 0);

  // saving the loaded model reproduces the file byte for byte
  const auto path2 = tmp.file("model2.bin");
  save_model(back, path2);
  CHECK(testsupport::read_text(path) == testsupport::read_text(path2));
}

TEST_CASE("model files reject corruption") {
  TempDir tmp;
  const auto tok = small_tokenizer();
  PolicyModel model(tok, small_dims(tok), 41, InitMode::random);
  const auto path = tmp.file("model.bin");
  save_model(model, path);
  const std::string bytes = testsupport::read_text(path);

  // wrong magic -> not a model file
  std::string magic = bytes;
  magic[0] = 'X';
  testsupport::write_text(tmp.file("magic.bin"), magic);
  CHECK_THROWS_WITH_AS(load_model(tmp.file("magic.bin")),
                       doctest::Contains("not a model file"),
                       cdpo::ValidationError);

  // unsupported format version
  std::string vers = bytes;
  vers[4] = 9;
  testsupport::write_text(tmp.file("vers.bin"), vers);
  CHECK_THROWS_AS(load_model(tmp.file("vers.bin")), cdpo::ValidationError);

  // a flipped parameter byte breaks the checksum
  std::string flip = bytes;
  flip[bytes.size() / 2] ^= 0x40;
  testsupport::write_text(tmp.file("flip.bin"), flip);
  CHECK_THROWS_AS(load_model(tmp.file("flip.bin")), cdpo::IoError);

  // truncation breaks it too
  testsupport::write_text(tmp.file("trunc.bin"),
                          bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_model(tmp.file("trunc.bin")), cdpo::IoError);

  CHECK_THROWS_AS(load_model(tmp.file("absent.bin")), cdpo::IoError);
}
