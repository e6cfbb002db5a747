#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdpo/corpus.hpp"
#include "cdpo/curriculum.hpp"
#include "cdpo/policy.hpp"

namespace cdpo::dpo {

enum class OptimizerKind { sgd, adamw };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

// Desk-scale defaults; paper_preset() swaps in the published
// hyperparameters, which assume a far larger backbone.
struct TrainConfig {
  double beta = 0.1;
  double learning_rate = 1e-3;
  std::size_t grad_accum_steps = 1;
  std::size_t batch_size = 4;
  std::size_t epochs_per_stage = 4;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  // stages run in stored order by default; opt-in reshuffle per epoch
  bool shuffle_within_stage = false;

  void validate() const;
  static TrainConfig paper_preset();
};

// key=value application; keys are exactly the TrainConfig field names
void apply_config_entry(TrainConfig& cfg, const std::string& key,
                        const std::string& value);
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});

struct TrainLogRecord {
  std::size_t stage = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;         // mean per-pair loss over the update window
  double mean_margin = 0.0;  // mean (delta_theta - delta_ref)
  std::size_t examples_seen = 0;
};

void write_train_log(const std::string& path,
                     const std::vector<TrainLogRecord>& log);

// -log sigmoid(beta * (delta_theta - delta_ref)) in softplus form.
double dpo_loss(double logp_w_theta, double logp_l_theta, double logp_w_ref,
                double logp_l_ref, double beta);

struct EncodedPair {
  std::vector<int> prompt;
  std::vector<int> chosen;    // EOS-terminated
  std::vector<int> rejected;  // EOS-terminated
};

// Tokenizes one pair and checks both sequences fit the context window;
// errors carry the example_id.
EncodedPair encode_pair(const policy::Tokenizer& tokenizer,
                        const PreferencePair& pair,
                        const policy::ModelDims& dims);

struct BatchResult {
  double loss = 0.0;  // sum over the batch
  std::vector<double> grad;
};

BatchResult batch_loss_and_gradient(const policy::PolicyModel& model,
                                    const policy::ReferenceSnapshot& ref,
                                    std::span<const PreferencePair> batch,
                                    const policy::Tokenizer& tokenizer,
                                    double beta);

struct OptState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

void sgd_step(std::span<double> params, std::span<const double> grads,
              OptState& state, const TrainConfig& cfg);
void adamw_step(std::span<double> params, std::span<const double> grads,
                OptState& state, const TrainConfig& cfg);

// Stage-wise preference training. Stages run strictly in order; within
// a stage each epoch walks the stored pair order, micro-batches of
// batch_size accumulate for grad_accum_steps batches before an
// optimizer update (mean gradient over the window), and a partial
// window left at the end of a stage is flushed. The reference snapshot
// never moves. Mutates `model` in place and returns the step log.
std::vector<TrainLogRecord> train(policy::PolicyModel& model,
                                  const policy::ReferenceSnapshot& ref,
                                  const curriculum::CurriculumSchedule& sched,
                                  const TrainConfig& cfg);

}  // namespace cdpo::dpo
