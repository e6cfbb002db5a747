#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdpo/corpus.hpp"
#include "cdpo/curriculum.hpp"
#include "cdpo/dpo.hpp"
#include "cdpo/eval.hpp"
#include "cdpo/grounding.hpp"
#include "cdpo/policy.hpp"

namespace cdpo::cli {

// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitRuntime = 4;

// Which preference pairs a training run optimizes: the factual answer
// against the hallucinated one, the correct verdict word against the
// wrong one, or the union of the two sets.
enum class PairSetMode { answer, label, both };
const char* to_string(PairSetMode m);
PairSetMode pair_set_mode_from_string(const std::string& s);

// Deterministic id-hash holdout: an example lands in the held-out split
// purely as a function of its id, so every run over the same corpus
// shares one test set regardless of seed or policy.
bool in_holdout(const std::string& example_id, double fraction);

struct CorpusSplit {
  std::vector<DetectionExample> train;
  std::vector<DetectionExample> test;
};
CorpusSplit split_corpus(const std::vector<DetectionExample>& examples,
                         double holdout_fraction);

// Vocabulary source for a corpus: prompts rendered in both template
// modes, both answers, and the verdict words.
policy::Tokenizer build_tokenizer_for(
    std::span<const DetectionExample> examples);

std::vector<PreferencePair> build_pair_set(
    const std::vector<DetectionExample>& examples, PairSetMode mode);

struct PipelineSpec {
  std::vector<DetectionExample> train_examples;
  std::map<std::string, double> scores;  // id -> p, must cover train ids
  grounding::ScoreRange range;
  std::size_t stages = 3;
  curriculum::Policy policy = curriculum::Policy::curriculum;
  PairSetMode mode = PairSetMode::answer;
  policy::ModelDims dims;  // vocab filled from the tokenizer
  dpo::TrainConfig config;
  std::uint64_t seed = 0;
  // tokenizer source; defaults to train_examples when null
  const std::vector<DetectionExample>* vocab_examples = nullptr;
};

struct PipelineResult {
  policy::PolicyModel model;
  curriculum::CurriculumSchedule schedule;
  std::vector<dpo::TrainLogRecord> log;
  std::size_t pairs_total = 0;
  std::size_t pairs_kept = 0;  // after the difficulty filter
};

// filter -> pairs -> schedule -> train, sharing one seed throughout.
PipelineResult run_training_pipeline(const PipelineSpec& spec);

// Classification metrics (label template), optionally judging both
// answers per example, plus the pairwise win rate over answer pairs.
eval::MetricsReport evaluate_model(const policy::PolicyModel& model,
                                   std::span<const DetectionExample> examples,
                                   bool both_answers, bool with_win_rate);

std::uint64_t file_checksum(const std::string& path);

int run_cli(int argc, const char* const* argv);

}  // namespace cdpo::cli
