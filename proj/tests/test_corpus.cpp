#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>
#include <string>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/corpus.hpp"
#include "cdpo/grounding.hpp"
#include "support.hpp"

using namespace cdpo::corpus;
using testsupport::TempDir;
using testsupport::write_text;

namespace {

DetectionExample make_example(const std::string& id) {
  DetectionExample ex;
  ex.id = id;
  ex.context = "record alpha includes beta gamma";
  ex.question = "what does record alpha include";
  ex.answer_true = "beta gamma";
  ex.answer_hall = "delta omega";
  ex.label = 1;
  return ex;
}

}  // namespace

TEST_CASE("corpus: write/load round-trips with and without optionals") {
  TempDir tmp;
  auto a = make_example("a");
  auto b = make_example("b");
  b.label = 0;
  b.tier = "medium";
  b.score = 0.5;

  const auto path = tmp.file("corpus.jsonl");
  write_corpus(path, {a, b});
  const auto back = load_corpus(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == a);
  CHECK(back[1] == b);
}

TEST_CASE("corpus: load rejects duplicates and malformed rows") {
  TempDir tmp;
  const auto path = tmp.file("bad.jsonl");

  write_text(path,
             R"({"id":"x","context":"c","question":"q","answer_true":"t","answer_hall":"h","label":1})"
             "\n"
             R"({"id":"x","context":"c","question":"q","answer_true":"t","answer_hall":"h","label":1})"
             "\n");
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("duplicate id"),
                       cdpo::ValidationError);

  write_text(path, R"({"id":"x","context":"c"})" "\n");
  CHECK_THROWS_AS(load_corpus(path), cdpo::ParseError);

  write_text(path, "not json\n");
  CHECK_THROWS_AS(load_corpus(path), cdpo::ParseError);

  write_text(path,
             R"({"id":"x","context":"c","question":"q","answer_true":"t","answer_hall":"h","label":3})"
             "\n");
  CHECK_THROWS_AS(load_corpus(path), cdpo::ValidationError);

  write_text(path,
             R"({"id":"x","context":"c","question":"q","answer_true":"same","answer_hall":"same","label":1})"
             "\n");
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("answer_true equals"),
                       cdpo::ValidationError);

  CHECK_THROWS_AS(load_corpus(tmp.file("missing.jsonl")), cdpo::IoError);
}

TEST_CASE("corpus: tier values are validated") {
  TempDir tmp;
  const auto path = tmp.file("tier.jsonl");
  write_text(path,
             R"({"id":"x","context":"c","question":"q","answer_true":"t","answer_hall":"h","label":1,"tier":"impossible"})"
             "\n");
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("tier"),
                       cdpo::ValidationError);
}

TEST_CASE("template: default answer prompt renders placeholders") {
  const auto tmpl = PromptTemplate::default_for(TemplateMode::answer_preference);
  const auto ex = make_example("a");
  CHECK(tmpl.render_prompt(ex) ==
        "context : record alpha includes beta gamma question : what does "
        "record alpha include answer :");
}

TEST_CASE("template: label prompt includes the candidate") {
  const auto tmpl = PromptTemplate::default_for(TemplateMode::label_preference);
  const auto ex = make_example("a");
  CHECK(tmpl.render_prompt(ex, "delta omega") ==
        "context : record alpha includes beta gamma question : what does "
        "record alpha include candidate : delta omega verdict :");
  // {answer} with no candidate is a template misuse
  CHECK_THROWS_AS(tmpl.render_prompt(ex), cdpo::ValidationError);
}

TEST_CASE("template: unknown placeholder and unterminated brace throw") {
  PromptTemplate t;
  t.template_text = "{nope}";
  CHECK_THROWS_AS(t.render_prompt(make_example("a")), cdpo::ValidationError);
  t.template_text = "{context";
  CHECK_THROWS_AS(t.render_prompt(make_example("a")), cdpo::ValidationError);
}

TEST_CASE("build_pairs: answer mode prefers the factual answer") {
  auto ex = make_example("a");
  ex.score = 0.25;
  const auto pairs = build_pairs(
      {ex}, PromptTemplate::default_for(TemplateMode::answer_preference));
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].example_id == "a");
  CHECK(pairs[0].chosen == ex.answer_true);
  CHECK(pairs[0].rejected == ex.answer_hall);
  CHECK(pairs[0].score == ex.score);
  CHECK(pairs[0].prompt.find("answer :") != std::string::npos);
}

TEST_CASE("build_pairs: label mode judges the candidate the gold label points at") {
  auto pos = make_example("pos");  // label 1, candidate = hallucinated answer
  auto neg = make_example("neg");
  neg.label = 0;
  const auto tmpl = PromptTemplate::default_for(TemplateMode::label_preference);
  const auto pairs = build_pairs({pos, neg}, tmpl);
  REQUIRE(pairs.size() == 2);

  CHECK(pairs[0].prompt.find(pos.answer_hall) != std::string::npos);
  CHECK(pairs[0].chosen == "hallucinated");
  CHECK(pairs[0].rejected == "factual");

  CHECK(pairs[1].prompt.find(neg.answer_true) != std::string::npos);
  CHECK(pairs[1].chosen == "factual");
  CHECK(pairs[1].rejected == "hallucinated");
}

TEST_CASE("pairs: write/load round-trips and rejects chosen == rejected") {
  TempDir tmp;
  PreferencePair p;
  p.example_id = "a";
  p.prompt = "prompt text";
  p.chosen = "good";
  p.rejected = "bad";
  p.score = 0.75;
  const auto path = tmp.file("pairs.jsonl");
  write_pairs(path, {p});
  const auto back = load_pairs(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == p);

  write_text(path,
             R"({"example_id":"a","prompt":"p","chosen":"x","rejected":"x"})"
             "\n");
  CHECK_THROWS_AS(load_pairs(path), cdpo::ValidationError);
}

TEST_CASE("synthetic corpus: deterministic per seed, unique ids, valid fields") {
  const auto a = generate_synthetic_corpus(200, 1.0, 9);
  const auto b = generate_synthetic_corpus(200, 1.0, 9);
  CHECK(a == b);
  const auto c = generate_synthetic_corpus(200, 1.0, 10);
  CHECK(a != c);

  std::set<std::string> ids;
  for (const auto& ex : a) {
    ids.insert(ex.id);
    CHECK((ex.label == 0 || ex.label == 1));
    REQUIRE(ex.tier.has_value());
    CHECK((*ex.tier == "easy" || *ex.tier == "medium" || *ex.tier == "hard"));
    REQUIRE(ex.score.has_value());
    CHECK(*ex.score >= 0.0);
    CHECK(*ex.score <= 1.0);
    CHECK(ex.answer_true != ex.answer_hall);
  }
  CHECK(ids.size() == a.size());
}

TEST_CASE("synthetic corpus: embedded score equals the lexical proxy exactly") {
  // the generator promises its stored score is the overlap fraction the
  // proxy scorer recomputes
  for (const auto& ex : generate_synthetic_corpus(300, 1.0, 4)) {
    CHECK(*ex.score ==
          cdpo::grounding::lexical_proxy_score(ex.answer_hall, ex.context));
  }
}

TEST_CASE("synthetic corpus: spread 0 keeps hallucinations token-disjoint") {
  for (const auto& ex : generate_synthetic_corpus(100, 0.0, 2)) {
    CHECK(*ex.score == 0.0);
    CHECK(cdpo::grounding::lexical_proxy_score(ex.answer_hall, ex.context) == 0.0);
  }
}

TEST_CASE("synthetic corpus: argument validation") {
  CHECK_THROWS_AS(generate_synthetic_corpus(0, 1.0, 1), cdpo::ValidationError);
  CHECK_THROWS_AS(generate_synthetic_corpus(10, 1.5, 1), cdpo::ValidationError);
  CHECK_THROWS_AS(generate_synthetic_corpus(10, -0.1, 1), cdpo::ValidationError);
}

TEST_CASE("synthetic corpus: round-trips through the JSONL layer") {
  TempDir tmp;
  const auto corpus = generate_synthetic_corpus(50, 1.0, 3);
  const auto path = tmp.file("synth.jsonl");
  write_corpus(path, corpus);
  CHECK(load_corpus(path) == corpus);
}

TEST_CASE("template mode names round-trip") {
  CHECK(template_mode_from_string("answer") == TemplateMode::answer_preference);
  CHECK(template_mode_from_string("label_preference") ==
        TemplateMode::label_preference);
  CHECK(std::string(to_string(TemplateMode::answer_preference)) ==
        "answer_preference");
  CHECK_THROWS_AS(template_mode_from_string("bogus"), cdpo::ValidationError);
}
