#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cdpo/corpus.hpp"

namespace cdpo::grounding {

// Grounding probability p of the hallucinated answer against its
// context. Lower p marks hallucinations that are easier to spot.
struct GroundingScore {
  std::string example_id;
  double p = 0.0;
  std::string scorer_id;

  bool operator==(const GroundingScore&) const = default;
};

struct ScoreRange {
  double lo = 0.0;
  double hi = 1.0;
};

// The four curriculum cut-off presets exposed on the CLI.
// r00-75, r25-100, r25-75, r00-100.
std::optional<ScoreRange> range_preset(const std::string& name);
std::vector<std::string> range_preset_names();

// Scorer interface. The external fact-verifier is out of scope; both
// built-in scorers are deterministic and safe to call concurrently.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string id() const = 0;
  virtual double score(const corpus::DetectionExample& ex) const = 0;
};

// |content-tokens(answer) ∩ tokens(context)| / max(1, |content-tokens(answer)|)
// over lowercase alphanumeric tokens, stop words removed from the answer
// side. Token sets, so duplicate tokens and token order never matter.
class LexicalProxyScorer : public Scorer {
 public:
  std::string id() const override { return "lexical_proxy"; }
  double score(const corpus::DetectionExample& ex) const override;
};

double lexical_proxy_score(const std::string& answer,
                           const std::string& context);
const std::vector<std::string>& stop_words();

// Precomputed scores from a sidecar JSONL of {"id": ..., "p": ...}.
class FileBackedScorer : public Scorer {
 public:
  explicit FileBackedScorer(const std::string& sidecar_path);
  std::string id() const override { return "file_backed"; }
  double score(const corpus::DetectionExample& ex) const override;

  const std::map<std::string, double>& table() const { return table_; }

 private:
  std::map<std::string, double> table_;
};

// One score per example, input order preserved. For the file-backed
// scorer every id must be present; missing ids are all listed in the
// error.
std::vector<GroundingScore> score_examples(
    const std::vector<corpus::DetectionExample>& examples,
    const Scorer& scorer);

void write_scores(const std::string& path,
                  const std::vector<GroundingScore>& scores);
std::vector<GroundingScore> load_scores(const std::string& path,
                                        const std::string& scorer_id = "file_backed");

// Keeps scores with lo <= p <= hi, both bounds inclusive, order
// preserved.
std::vector<GroundingScore> filter_by_range(
    const std::vector<GroundingScore>& scores, const ScoreRange& range);

struct TierStats {
  std::size_t count = 0;
  std::optional<double> mean;
  std::optional<double> median;
};

// Mean/median/count per tier. Every scored id must have a tier; use
// tiers_from_terciles when the corpus carries none.
std::map<std::string, TierStats> tier_statistics(
    const std::vector<GroundingScore>& scores,
    const std::map<std::string, std::string>& tiers);

// Fallback tier assignment: rank terciles of the score distribution,
// lowest third easy, middle third medium, top third hard. Ties broken
// by example_id so the assignment is deterministic.
std::map<std::string, std::string> tiers_from_terciles(
    const std::vector<GroundingScore>& scores);

}  // namespace cdpo::grounding
