#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>
#include <string>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/corpus.hpp"
#include "cdpo/grounding.hpp"
#include "support.hpp"

using namespace cdpo::grounding;
using cdpo::corpus::DetectionExample;
using testsupport::TempDir;
using testsupport::write_text;

TEST_CASE("lexical proxy: worked examples") {
  const std::string ctx = "the sky is blue and wide";
  // one of two content tokens grounded
  CHECK(lexical_proxy_score("blue quantum", ctx) == 0.5);
  // stop words drop off the answer side before counting
  CHECK(lexical_proxy_score("the blue", ctx) == 1.0);
  // token sets: repeats never change the fraction
  CHECK(lexical_proxy_score("blue blue quantum", ctx) == 0.5);
  // punctuation and case are normalized away
  CHECK(lexical_proxy_score("Blue, WIDE!", ctx) == 1.0);
  // all stop words leaves nothing to ground
  CHECK(lexical_proxy_score("the of and", ctx) == 0.0);
  CHECK(lexical_proxy_score("", ctx) == 0.0);
  CHECK(lexical_proxy_score("zuqi xefy", ctx) == 0.0);
}

TEST_CASE("lexical proxy scorer reads answer_hall against context") {
  DetectionExample ex;
  ex.context = "alpha beta gamma";
  ex.answer_hall = "alpha zeta";
  LexicalProxyScorer scorer;
  CHECK(scorer.id() == "lexical_proxy");
  CHECK(scorer.score(ex) == 0.5);
}

TEST_CASE("range presets cover the four published cut-offs") {
  const auto names = range_preset_names();
  REQUIRE(names == std::vector<std::string>{"r00-75", "r25-100", "r25-75",
                                            "r00-100"});
  CHECK(range_preset("r00-75")->lo == 0.0);
  CHECK(range_preset("r00-75")->hi == 0.75);
  CHECK(range_preset("r25-100")->lo == 0.25);
  CHECK(range_preset("r25-100")->hi == 1.0);
  CHECK(range_preset("r25-75")->lo == 0.25);
  CHECK(range_preset("r25-75")->hi == 0.75);
  CHECK(range_preset("r00-100")->lo == 0.0);
  CHECK(range_preset("r00-100")->hi == 1.0);
  CHECK(!range_preset("r10-90").has_value());
}

TEST_CASE("score_examples preserves order and stamps the scorer id") {
  std::vector<DetectionExample> exs(3);
  exs[0].id = "c";
  exs[0].context = "x y";
  exs[0].answer_hall = "x q";
  exs[1].id = "a";
  exs[1].context = "x y";
  exs[1].answer_hall = "q r";
  exs[2].id = "b";
  exs[2].context = "x y";
  exs[2].answer_hall = "x y";

  const auto scores = score_examples(exs, LexicalProxyScorer{});
  REQUIRE(scores.size() == 3);
  CHECK(scores[0].example_id == "c");
  CHECK(scores[0].p == 0.5);
  CHECK(scores[1].example_id == "a");
  CHECK(scores[1].p == 0.0);
  CHECK(scores[2].example_id == "b");
  CHECK(scores[2].p == 1.0);
  for (const auto& s : scores) CHECK(s.scorer_id == "lexical_proxy");
}

TEST_CASE("file-backed scorer lists every missing id in one error") {
  TempDir tmp;
  const auto sidecar = tmp.file("scores.jsonl");
  write_text(sidecar, R"({"id":"a","p":0.5})" "\n");

  std::vector<DetectionExample> exs(3);
  exs[0].id = "a";
  exs[1].id = "b";
  exs[2].id = "c";
  FileBackedScorer scorer(sidecar);
  CHECK_THROWS_WITH_AS(score_examples(exs, scorer),
                       doctest::Contains("missing ids: b, c"),
                       cdpo::ValidationError);

  const auto ok = score_examples({exs[0]}, scorer);
  REQUIRE(ok.size() == 1);
  CHECK(ok[0].p == 0.5);
  CHECK(ok[0].scorer_id == "file_backed");
}

TEST_CASE("score sidecar round-trips and validates") {
  TempDir tmp;
  const auto path = tmp.file("scores.jsonl");
  std::vector<GroundingScore> scores = {{"a", 0.25, "file_backed"},
                                        {"b", 1.0, "file_backed"},
                                        {"c", 0.0, "file_backed"}};
  write_scores(path, scores);
  CHECK(load_scores(path) == scores);

  write_text(path, R"({"id":"a","p":1.5})" "\n");
  CHECK_THROWS_AS(load_scores(path), cdpo::ValidationError);
  write_text(path, R"({"id":"a","p":0.5})" "\n" R"({"id":"a","p":0.6})" "\n");
  CHECK_THROWS_WITH_AS(load_scores(path), doctest::Contains("duplicate"),
                       cdpo::ValidationError);
  write_text(path, R"({"p":0.5})" "\n");
  CHECK_THROWS_AS(load_scores(path), cdpo::ParseError);
  CHECK_THROWS_AS(load_scores(tmp.file("nope.jsonl")), cdpo::IoError);
}

TEST_CASE("filter_by_range keeps both bounds inclusively") {
  std::vector<GroundingScore> scores;
  for (double p : {0.0, 0.24, 0.25, 0.5, 0.75, 0.76, 1.0})
    scores.push_back({"id" + std::to_string(scores.size()), p, "t"});

  const auto kept = filter_by_range(scores, ScoreRange{0.25, 0.75});
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].p == 0.25);
  CHECK(kept[1].p == 0.5);
  CHECK(kept[2].p == 0.75);

  CHECK(filter_by_range(scores, ScoreRange{0.0, 1.0}).size() == scores.size());
  CHECK_THROWS_AS(filter_by_range(scores, ScoreRange{0.8, 0.2}),
                  cdpo::ValidationError);
}

TEST_CASE("tier_statistics: mean and median against hand computation") {
  std::vector<GroundingScore> scores = {{"a", 0.1, "t"},
                                        {"b", 0.2, "t"},
                                        {"c", 0.6, "t"},
                                        {"d", 0.3, "t"},
                                        {"e", 0.9, "t"}};
  std::map<std::string, std::string> tiers = {{"a", "easy"},
                                              {"b", "easy"},
                                              {"c", "easy"},
                                              {"d", "hard"},
                                              {"e", "hard"},
                                              {"f", "medium"}};
  // "f" has a tier but no score: reported with count 0

  auto stats = tier_statistics(scores, tiers);
  REQUIRE(stats.size() == 3);
  CHECK(stats["easy"].count == 3);
  CHECK(*stats["easy"].mean == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(*stats["easy"].median == 0.2);
  CHECK(stats["hard"].count == 2);
  CHECK(*stats["hard"].mean == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(*stats["hard"].median == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(stats["medium"].count == 0);
  CHECK(!stats["medium"].mean.has_value());
  CHECK(!stats["medium"].median.has_value());

  tiers.erase("e");
  CHECK_THROWS_WITH_AS(tier_statistics(scores, tiers),
                       doctest::Contains("no tier"), cdpo::ValidationError);
}

TEST_CASE("tiers_from_terciles splits the sorted scores into thirds") {
  std::vector<GroundingScore> scores;
  for (int i = 0; i < 9; ++i)
    scores.push_back({"id" + std::to_string(i),
                      static_cast<double>(i) / 10.0, "t"});

  const auto tiers = tiers_from_terciles(scores);
  for (int i = 0; i < 3; ++i) CHECK(tiers.at("id" + std::to_string(i)) == "easy");
  for (int i = 3; i < 6; ++i)
    CHECK(tiers.at("id" + std::to_string(i)) == "medium");
  for (int i = 6; i < 9; ++i) CHECK(tiers.at("id" + std::to_string(i)) == "hard");
}

TEST_CASE("tiers_from_terciles breaks score ties by id") {
  std::vector<GroundingScore> scores = {
      {"b", 0.5, "t"}, {"a", 0.5, "t"}, {"c", 0.5, "t"}};
  const auto tiers = tiers_from_terciles(scores);
  CHECK(tiers.at("a") == "easy");
  CHECK(tiers.at("b") == "medium");
  CHECK(tiers.at("c") == "hard");
}
