#include "cdpo/dpo.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "cdpo/common.hpp"
#include "cdpo/kernels.hpp"

namespace cdpo::dpo {

using json = nlohmann::ordered_json;

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "adamw";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ValidationError("unknown optimizer '" + s + "' (want sgd or adamw)");
}

void TrainConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ValidationError("beta must be a positive finite real");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ValidationError("learning_rate must be a positive finite real");
  }
  if (grad_accum_steps < 1) {
    throw ValidationError("grad_accum_steps must be >= 1");
  }
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (epochs_per_stage < 1) {
    throw ValidationError("epochs_per_stage must be >= 1");
  }
  if (!(b1 >= 0.0 && b1 < 1.0) || !(b2 >= 0.0 && b2 < 1.0)) {
    throw ValidationError("adamw betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("optimizer eps must be positive");
  if (weight_decay < 0.0) {
    throw ValidationError("weight_decay must be nonnegative");
  }
}

TrainConfig TrainConfig::paper_preset() {
  TrainConfig cfg;
  cfg.beta = 0.1;
  cfg.learning_rate = 1e-5;
  cfg.grad_accum_steps = 4;
  cfg.batch_size = 4;
  return cfg;
}

namespace {

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ParseError("config value for '" + key + "' is not a number: '" +
                     value + "'");
  }
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ParseError("config value for '" + key +
                     "' is not a nonnegative integer: '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ParseError("config value for '" + key + "' is not a boolean: '" +
                   value + "'");
}

}  // namespace

void apply_config_entry(TrainConfig& cfg, const std::string& key,
                        const std::string& value) {
  if (key == "beta") {
    cfg.beta = parse_real(key, value);
  } else if (key == "learning_rate") {
    cfg.learning_rate = parse_real(key, value);
  } else if (key == "grad_accum_steps") {
    cfg.grad_accum_steps = parse_count(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_count(key, value);
  } else if (key == "epochs_per_stage") {
    cfg.epochs_per_stage = parse_count(key, value);
  } else if (key == "optimizer") {
    cfg.optimizer = optimizer_from_string(value);
  } else if (key == "b1") {
    cfg.b1 = parse_real(key, value);
  } else if (key == "b2") {
    cfg.b2 = parse_real(key, value);
  } else if (key == "eps") {
    cfg.eps = parse_real(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = parse_real(key, value);
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(parse_count(key, value));
  } else if (key == "shuffle_within_stage") {
    cfg.shuffle_within_stage = parse_bool(key, value);
  } else {
    throw ValidationError("unknown config key '" + key + "'");
  }
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = normalize_whitespace(line);
    if (s.empty() || s[0] == '#') continue;
    auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(lineno) +
                       " is not key=value: '" + s + "'");
    }
    std::string key = normalize_whitespace(s.substr(0, eq));
    std::string value = normalize_whitespace(s.substr(eq + 1));
    try {
      apply_config_entry(base, key, value);
    } catch (const ParseError& e) {
      throw ParseError("config line " + std::to_string(lineno) + ": " +
                       e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(lineno) + ": " +
                            e.what());
    }
  }
  return base;
}

void write_train_log(const std::string& path,
                     const std::vector<TrainLogRecord>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& r : log) {
    json j;
    j["stage"] = r.stage;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["loss"] = r.loss;
    j["mean_margin"] = r.mean_margin;
    j["examples_seen"] = r.examples_seen;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("short write to '" + path + "'");
}

// --------------------------------------------------------------------- loss

namespace {

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double dpo_loss(double logp_w_theta, double logp_l_theta, double logp_w_ref,
                double logp_l_ref, double beta) {
  if (!(beta > 0.0)) throw ValidationError("beta must be positive");
  for (double v : {logp_w_theta, logp_l_theta, logp_w_ref, logp_l_ref, beta}) {
    if (!std::isfinite(v)) {
      throw ValidationError("dpo_loss received a non-finite input");
    }
  }
  double z =
      beta * ((logp_w_theta - logp_l_theta) - (logp_w_ref - logp_l_ref));
  return softplus(-z);
}

EncodedPair encode_pair(const policy::Tokenizer& tokenizer,
                        const PreferencePair& pair,
                        const policy::ModelDims& dims) {
  EncodedPair enc;
  enc.prompt = tokenizer.encode(pair.prompt);
  enc.chosen = tokenizer.encode(pair.chosen);
  enc.chosen.push_back(policy::Tokenizer::kEos);
  enc.rejected = tokenizer.encode(pair.rejected);
  enc.rejected.push_back(policy::Tokenizer::kEos);
  if (enc.prompt.empty()) {
    throw ValidationError("pair '" + pair.example_id + "' has an empty prompt");
  }
  std::size_t longest = std::max(enc.chosen.size(), enc.rejected.size());
  if (1 + enc.prompt.size() + longest > dims.context) {
    throw ValidationError(
        "pair '" + pair.example_id + "' does not fit the context window (" +
        std::to_string(1 + enc.prompt.size() + longest) + " > " +
        std::to_string(dims.context) + " tokens)");
  }
  return enc;
}

namespace {

struct PairTerms {
  double loss = 0.0;
  double margin = 0.0;  // delta_theta - delta_ref
};

// Forward + backward for one pair against current params; gradient of
// its loss is accumulated into grad (contributes per-pair sums).
PairTerms pair_loss_and_accumulate(const policy::ModelDims& dims,
                                   std::span<const double> params,
                                   const EncodedPair& enc, double ref_lpw,
                                   double ref_lpl, double beta,
                                   std::span<double> grad,
                                   const std::string& example_id) {
  policy::SequenceGrad sw(dims, params, enc.prompt, enc.chosen);
  policy::SequenceGrad sl(dims, params, enc.prompt, enc.rejected);
  double margin = (sw.logprob() - sl.logprob()) - (ref_lpw - ref_lpl);
  double z = beta * margin;
  if (!std::isfinite(z)) {
    throw std::runtime_error("non-finite margin on pair '" + example_id +
                             "' (logp_w=" + std::to_string(sw.logprob()) +
                             ", logp_l=" + std::to_string(sl.logprob()) + ")");
  }
  // dLoss/dlogp_w = -beta * sigmoid(-z); dLoss/dlogp_l = +beta * sigmoid(-z)
  double s = sigmoid(-z);
  sw.accumulate_gradient(-beta * s, grad);
  sl.accumulate_gradient(beta * s, grad);
  return {softplus(-z), margin};
}

}  // namespace

BatchResult batch_loss_and_gradient(const policy::PolicyModel& model,
                                    const policy::ReferenceSnapshot& ref,
                                    std::span<const PreferencePair> batch,
                                    const policy::Tokenizer& tokenizer,
                                    double beta) {
  if (batch.empty()) throw ValidationError("batch is empty");
  if (!(beta > 0.0)) throw ValidationError("beta must be positive");
  const auto& dims = model.dims();

  std::vector<EncodedPair> encs;
  encs.reserve(batch.size());
  for (const auto& p : batch) encs.push_back(encode_pair(tokenizer, p, dims));

  BatchResult out;
  out.grad.assign(policy::ParamLayout(dims).total, 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double ref_lpw = sequence_logprob(ref, encs[i].prompt, encs[i].chosen);
    double ref_lpl = sequence_logprob(ref, encs[i].prompt, encs[i].rejected);
    out.loss += pair_loss_and_accumulate(dims, model.parameters(), encs[i],
                                         ref_lpw, ref_lpl, beta, out.grad,
                                         batch[i].example_id)
                    .loss;
  }
  return out;
}

// --------------------------------------------------------------- optimizers

void sgd_step(std::span<double> params, std::span<const double> grads,
              OptState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ValidationError("sgd_step: params/grads size mismatch");
  }
  state.step += 1;
  const double lr = cfg.learning_rate, wd = cfg.weight_decay;
  kernels::parallel_for(params.size(), [&](std::size_t i) {
    params[i] -= lr * (grads[i] + wd * params[i]);
  });
}

void adamw_step(std::span<double> params, std::span<const double> grads,
                OptState& state, const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ValidationError("adamw_step: params/grads size mismatch");
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ValidationError("adamw_step: optimizer state size mismatch");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.b1, t);
  const double bc2 = 1.0 - std::pow(cfg.b2, t);
  const double lr = cfg.learning_rate, wd = cfg.weight_decay;
  const double b1 = cfg.b1, b2 = cfg.b2, eps = cfg.eps;
  double* m = state.m.data();
  double* v = state.v.data();
  kernels::parallel_for(params.size(), [&](std::size_t i) {
    double g = grads[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * params[i]);
  });
}

// ----------------------------------------------------------------- training

std::vector<TrainLogRecord> train(policy::PolicyModel& model,
                                  const policy::ReferenceSnapshot& ref,
                                  const curriculum::CurriculumSchedule& sched,
                                  const TrainConfig& cfg) {
  cfg.validate();
  if (sched.stages.empty()) {
    throw ValidationError("schedule has no stages");
  }
  const auto& dims = model.dims();
  const policy::Tokenizer& tok = model.tokenizer();
  const std::size_t nparams = model.parameters().size();

  OptState state;
  DetRng shuffle_rng(cfg.seed ^ 0x5bf0e9d4c1a3f77bull);

  std::vector<TrainLogRecord> log;
  std::vector<double> accum(nparams, 0.0);
  std::size_t window_pairs = 0, window_batches = 0;
  double window_loss = 0.0, window_margin = 0.0;
  std::size_t step = 0, examples_seen = 0;

  auto flush = [&](std::size_t stage, std::size_t epoch) {
    if (window_batches == 0) return;
    const double inv = 1.0 / static_cast<double>(window_pairs);
    kernels::parallel_for(nparams, [&](std::size_t i) { accum[i] *= inv; });
    if (cfg.optimizer == OptimizerKind::adamw) {
      adamw_step(model.mutable_parameters(), accum, state, cfg);
    } else {
      sgd_step(model.mutable_parameters(), accum, state, cfg);
    }
    ++step;
    log.push_back({stage, epoch, step, window_loss * inv, window_margin * inv,
                   examples_seen});
    std::fill(accum.begin(), accum.end(), 0.0);
    window_pairs = window_batches = 0;
    window_loss = window_margin = 0.0;
  };

  for (std::size_t si = 0; si < sched.stages.size(); ++si) {
    const auto& stage_pairs = sched.stages[si];
    const std::size_t stage_no = si + 1;
    if (stage_pairs.empty()) {
      std::cerr << "warning: stage " << stage_no << " is empty; skipped\n";
      continue;
    }

    // tokenize once and freeze the reference logprobs for the stage
    std::vector<EncodedPair> encs;
    encs.reserve(stage_pairs.size());
    for (const auto& p : stage_pairs) encs.push_back(encode_pair(tok, p, dims));
    std::vector<double> ref_lpw(encs.size()), ref_lpl(encs.size());
    kernels::parallel_for(encs.size(), [&](std::size_t i) {
      ref_lpw[i] = sequence_logprob(ref, encs[i].prompt, encs[i].chosen);
      ref_lpl[i] = sequence_logprob(ref, encs[i].prompt, encs[i].rejected);
    });

    std::vector<std::size_t> order(encs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs_per_stage; ++epoch) {
      if (cfg.shuffle_within_stage) shuffle_rng.shuffle(order);
      for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
        const std::size_t hi = std::min(at + cfg.batch_size, order.size());
        for (std::size_t bi = at; bi < hi; ++bi) {
          const std::size_t i = order[bi];
          PairTerms terms;
          try {
            terms = pair_loss_and_accumulate(
                dims, model.parameters(), encs[i], ref_lpw[i], ref_lpl[i],
                cfg.beta, accum, stage_pairs[i].example_id);
          } catch (const std::runtime_error& e) {
            throw std::runtime_error(
                "training aborted at stage " + std::to_string(stage_no) +
                " epoch " + std::to_string(epoch) + " step " +
                std::to_string(step + 1) + ": " + e.what());
          }
          window_loss += terms.loss;
          window_margin += terms.margin;
          ++window_pairs;
        }
        examples_seen += hi - at;
        ++window_batches;
        if (window_batches == cfg.grad_accum_steps) flush(stage_no, epoch);
      }
    }
    // partial accumulation window at the stage boundary is applied, not
    // dropped
    flush(stage_no, cfg.epochs_per_stage);
  }
  return log;
}

}  // namespace cdpo::dpo
