#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cdpo/corpus.hpp"
#include "cdpo/policy.hpp"

namespace cdpo::eval {

struct MetricBlock {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  // null when the denominator is zero, so degenerate runs stay visible
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;

  std::size_t total() const { return tp + fp + fn + tn; }
};

struct MetricsReport {
  MetricBlock overall;
  std::map<std::string, MetricBlock> per_tier;
  std::optional<double> pairwise_win_rate;
  std::size_t skipped = 0;
};

struct LabeledPrediction {
  int gold = 0;
  int predicted = 0;
  std::optional<std::string> tier;
};

// Confusion counts and derived metrics; positive class is hallucinated
// (label 1). Throws on empty input or labels outside {0,1}.
MetricsReport compute_metrics(std::span<const LabeledPrediction> predictions);

// Judges the candidate under test (the hallucinated answer when the
// gold label is 1, the factual answer otherwise) by comparing the
// likelihood of the two verdict completions. Ties predict 0.
int predict_label(const policy::PolicyModel& model,
                  const DetectionExample& example, const PromptTemplate& tmpl,
                  const policy::Tokenizer& tokenizer);

struct ClassificationOutcome {
  std::vector<LabeledPrediction> predictions;
  std::size_t skipped = 0;  // examples whose prompt overflowed the context
};

// Whole-corpus classification; with both_answers each example is judged
// twice (factual answer as gold 0, hallucinated answer as gold 1) for a
// balanced confusion matrix.
ClassificationOutcome classify_corpus(const policy::PolicyModel& model,
                                      std::span<const DetectionExample> exs,
                                      const PromptTemplate& tmpl,
                                      const policy::Tokenizer& tokenizer,
                                      bool both_answers = false);

struct WinRateOutcome {
  double rate = 0.0;
  double wins = 0.0;  // ties add 0.5
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

WinRateOutcome pairwise_wins(const policy::PolicyModel& model,
                             std::span<const PreferencePair> pairs,
                             const policy::Tokenizer& tokenizer);

// fraction of pairs where the chosen completion is more likely
double pairwise_win_rate(const policy::PolicyModel& model,
                         std::span<const PreferencePair> pairs,
                         const policy::Tokenizer& tokenizer);

nlohmann::ordered_json metrics_to_json(const MetricsReport& report);

// Plain-text table, one row overall plus one per tier.
std::string render_metrics_table(const MetricsReport& report);

}  // namespace cdpo::eval
