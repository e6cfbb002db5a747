#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cdpo::corpus {

// One labeled detection instance. label == 1 marks the hallucinated
// candidate as the one under judgment.
struct DetectionExample {
  std::string id;
  std::string context;
  std::string question;
  std::string answer_true;
  std::string answer_hall;
  int label = 0;
  std::optional<std::string> tier;  // easy | medium | hard
  std::optional<double> score;      // grounding probability, if precomputed

  bool operator==(const DetectionExample&) const = default;
};

struct PreferencePair {
  std::string example_id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  std::optional<double> score;

  bool operator==(const PreferencePair&) const = default;
};

enum class TemplateMode { answer_preference, label_preference };

const char* to_string(TemplateMode mode);
TemplateMode template_mode_from_string(const std::string& s);

// Placeholders: {context} {question} and, in label mode, {answer} for
// the candidate under judgment. The verdict strings are the two
// completions compared in label mode; they must tokenize to the same
// length so likelihood comparison needs no length normalization.
struct PromptTemplate {
  TemplateMode mode = TemplateMode::answer_preference;
  std::string template_text;
  std::string verdict_positive;  // completion meaning "hallucinated"
  std::string verdict_negative;  // completion meaning "not hallucinated"

  static PromptTemplate default_for(TemplateMode mode);

  std::string render_prompt(const DetectionExample& ex) const;
  std::string render_prompt(const DetectionExample& ex,
                            const std::string& candidate) const;
};

// JSONL fields: id, context, question, answer_true, answer_hall, label,
// optional tier, optional score.
std::vector<DetectionExample> load_corpus(const std::string& path);
void write_corpus(const std::string& path,
                  const std::vector<DetectionExample>& examples);

std::vector<PreferencePair> load_pairs(const std::string& path);
void write_pairs(const std::string& path,
                 const std::vector<PreferencePair>& pairs);

// Exactly one pair per example, input order preserved.
std::vector<PreferencePair> build_pairs(
    const std::vector<DetectionExample>& examples,
    const PromptTemplate& tmpl);

// Deterministic desk-scale corpus. difficulty_spread in [0, 1] controls
// how much context vocabulary leaks into the hallucinated answers: 0
// keeps them token-disjoint from the context, 1 spreads their lexical
// grounding over the whole [0, 1] range.
std::vector<DetectionExample> generate_synthetic_corpus(std::size_t n,
                                                        double difficulty_spread,
                                                        std::uint64_t seed);

}  // namespace cdpo::corpus

namespace cdpo {
using corpus::DetectionExample;
using corpus::PreferencePair;
using corpus::PromptTemplate;
using corpus::TemplateMode;
}  // namespace cdpo
