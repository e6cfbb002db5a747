#include "cdpo/eval.hpp"

#include <algorithm>
#include <cstdio>

#include "cdpo/common.hpp"
#include "cdpo/dpo.hpp"
#include "cdpo/kernels.hpp"

namespace cdpo::eval {

namespace {

MetricBlock block_from_counts(std::size_t tp, std::size_t fp, std::size_t fn,
                              std::size_t tn) {
  MetricBlock b;
  b.tp = tp;
  b.fp = fp;
  b.fn = fn;
  b.tn = tn;
  const std::size_t total = tp + fp + fn + tn;
  b.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  if (tp + fp > 0) {
    b.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn > 0) {
    b.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (b.precision && b.recall && *b.precision + *b.recall > 0.0) {
    b.f1 = 2.0 * *b.precision * *b.recall / (*b.precision + *b.recall);
  }
  return b;
}

}  // namespace

MetricsReport compute_metrics(std::span<const LabeledPrediction> predictions) {
  if (predictions.empty()) {
    throw ValidationError("compute_metrics: no predictions to score");
  }
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  };
  Counts overall;
  std::map<std::string, Counts> tiers;
  for (const auto& p : predictions) {
    if ((p.gold != 0 && p.gold != 1) || (p.predicted != 0 && p.predicted != 1)) {
      throw ValidationError("compute_metrics: labels must be 0 or 1");
    }
    auto bump = [&](Counts& c) {
      if (p.gold == 1 && p.predicted == 1) ++c.tp;
      if (p.gold == 0 && p.predicted == 1) ++c.fp;
      if (p.gold == 1 && p.predicted == 0) ++c.fn;
      if (p.gold == 0 && p.predicted == 0) ++c.tn;
    };
    bump(overall);
    if (p.tier) bump(tiers[*p.tier]);
  }
  MetricsReport r;
  r.overall = block_from_counts(overall.tp, overall.fp, overall.fn, overall.tn);
  for (const auto& [tier, c] : tiers) {
    r.per_tier[tier] = block_from_counts(c.tp, c.fp, c.fn, c.tn);
  }
  return r;
}

// ------------------------------------------------------------ model-driven

namespace {

struct VerdictTokens {
  std::vector<int> positive, negative;
};

VerdictTokens verdict_tokens(const PromptTemplate& tmpl,
                             const policy::Tokenizer& tok) {
  if (tmpl.mode != TemplateMode::label_preference) {
    throw ValidationError("verdict scoring needs a label_preference template");
  }
  VerdictTokens v;
  v.positive = tok.encode(tmpl.verdict_positive);
  v.positive.push_back(policy::Tokenizer::kEos);
  v.negative = tok.encode(tmpl.verdict_negative);
  v.negative.push_back(policy::Tokenizer::kEos);
  if (v.positive.size() != v.negative.size()) {
    throw ValidationError("verdict completions tokenize to different lengths ('" +
                          tmpl.verdict_positive + "' vs '" +
                          tmpl.verdict_negative + "')");
  }
  return v;
}

}  // namespace

int predict_label(const policy::PolicyModel& model,
                  const DetectionExample& example, const PromptTemplate& tmpl,
                  const policy::Tokenizer& tokenizer) {
  VerdictTokens v = verdict_tokens(tmpl, tokenizer);
  const std::string& candidate =
      example.label == 1 ? example.answer_hall : example.answer_true;
  std::vector<int> prompt = tokenizer.encode(tmpl.render_prompt(example, candidate));
  if (prompt.empty() ||
      1 + prompt.size() + v.positive.size() > model.dims().context) {
    throw ValidationError("example '" + example.id +
                          "' does not fit the context window");
  }
  double lp_pos = sequence_logprob(model, prompt, v.positive);
  double lp_neg = sequence_logprob(model, prompt, v.negative);
  return lp_pos > lp_neg ? 1 : 0;
}

ClassificationOutcome classify_corpus(const policy::PolicyModel& model,
                                      std::span<const DetectionExample> exs,
                                      const PromptTemplate& tmpl,
                                      const policy::Tokenizer& tokenizer,
                                      bool both_answers) {
  VerdictTokens v = verdict_tokens(tmpl, tokenizer);

  struct Task {
    std::vector<int> prompt;
    int gold = 0;
    std::optional<std::string> tier;
    int predicted = 0;
  };

  // render and length-check up front so the parallel pass cannot throw
  ClassificationOutcome out;
  std::vector<Task> tasks;
  for (const auto& ex : exs) {
    std::vector<std::pair<const std::string*, int>> candidates;
    if (both_answers) {
      candidates = {{&ex.answer_true, 0}, {&ex.answer_hall, 1}};
    } else {
      const std::string& c = ex.label == 1 ? ex.answer_hall : ex.answer_true;
      candidates = {{&c, ex.label}};
    }
    bool fits = true;
    std::vector<Task> pending;
    for (auto [answer, gold] : candidates) {
      Task t;
      t.prompt = tokenizer.encode(tmpl.render_prompt(ex, *answer));
      t.gold = gold;
      t.tier = ex.tier;
      if (t.prompt.empty() ||
          1 + t.prompt.size() + v.positive.size() > model.dims().context) {
        fits = false;
        break;
      }
      pending.push_back(std::move(t));
    }
    if (!fits) {
      ++out.skipped;
      continue;
    }
    for (auto& t : pending) tasks.push_back(std::move(t));
  }

  kernels::parallel_for(tasks.size(), [&](std::size_t i) {
    Task& t = tasks[i];
    double lp_pos = sequence_logprob(model, t.prompt, v.positive);
    double lp_neg = sequence_logprob(model, t.prompt, v.negative);
    t.predicted = lp_pos > lp_neg ? 1 : 0;
  });

  out.predictions.reserve(tasks.size());
  for (const auto& t : tasks) {
    out.predictions.push_back({t.gold, t.predicted, t.tier});
  }
  return out;
}

WinRateOutcome pairwise_wins(const policy::PolicyModel& model,
                             std::span<const PreferencePair> pairs,
                             const policy::Tokenizer& tokenizer) {
  WinRateOutcome out;
  std::vector<dpo::EncodedPair> encs;
  encs.reserve(pairs.size());
  for (const auto& p : pairs) {
    try {
      encs.push_back(dpo::encode_pair(tokenizer, p, model.dims()));
    } catch (const ValidationError&) {
      ++out.skipped;
    }
  }
  if (encs.empty()) {
    throw ValidationError("no pair fits the context window");
  }
  std::vector<double> score(encs.size(), 0.0);
  kernels::parallel_for(encs.size(), [&](std::size_t i) {
    double lw = sequence_logprob(model, encs[i].prompt, encs[i].chosen);
    double ll = sequence_logprob(model, encs[i].prompt, encs[i].rejected);
    score[i] = lw > ll ? 1.0 : (lw == ll ? 0.5 : 0.0);
  });
  for (double s : score) out.wins += s;
  out.evaluated = encs.size();
  out.rate = out.wins / static_cast<double>(out.evaluated);
  return out;
}

double pairwise_win_rate(const policy::PolicyModel& model,
                         std::span<const PreferencePair> pairs,
                         const policy::Tokenizer& tokenizer) {
  return pairwise_wins(model, pairs, tokenizer).rate;
}

// ---------------------------------------------------------------- reporting

namespace {

nlohmann::ordered_json block_to_json(const MetricBlock& b) {
  nlohmann::ordered_json j;
  j["accuracy"] = b.accuracy;
  j["precision"] = b.precision ? nlohmann::ordered_json(*b.precision)
                               : nlohmann::ordered_json(nullptr);
  j["recall"] = b.recall ? nlohmann::ordered_json(*b.recall)
                         : nlohmann::ordered_json(nullptr);
  j["f1"] = b.f1 ? nlohmann::ordered_json(*b.f1)
                 : nlohmann::ordered_json(nullptr);
  j["confusion"] = {{"tp", b.tp}, {"fp", b.fp}, {"fn", b.fn}, {"tn", b.tn}};
  return j;
}

std::string fmt_metric(const std::optional<double>& v) {
  if (!v) return "   n/a";
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%6.4f", *v);
  return buf;
}

// easy/medium/hard read better in difficulty order
std::vector<std::string> tier_order(const MetricsReport& r) {
  std::vector<std::string> out;
  for (const char* t : {"easy", "medium", "hard"}) {
    if (r.per_tier.count(t)) out.push_back(t);
  }
  for (const auto& [tier, _] : r.per_tier) {
    if (std::find(out.begin(), out.end(), tier) == out.end()) {
      out.push_back(tier);
    }
  }
  return out;
}

}  // namespace

nlohmann::ordered_json metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j = block_to_json(report.overall);
  j["per_tier"] = nlohmann::ordered_json::object();
  for (const auto& tier : tier_order(report)) {
    j["per_tier"][tier] = block_to_json(report.per_tier.at(tier));
  }
  if (report.pairwise_win_rate) {
    j["pairwise_win_rate"] = *report.pairwise_win_rate;
  }
  j["skipped"] = report.skipped;
  return j;
}

std::string render_metrics_table(const MetricsReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %8s %9s %8s %8s %6s %6s %6s %6s\n",
                "split", "accuracy", "precision", "recall", "f1", "tp", "fp",
                "fn", "tn");
  out += line;
  auto row = [&](const std::string& name, const MetricBlock& b) {
    std::snprintf(line, sizeof(line),
                  "%-10s %8.4f %9s %8s %8s %6zu %6zu %6zu %6zu\n",
                  name.c_str(), b.accuracy, fmt_metric(b.precision).c_str(),
                  fmt_metric(b.recall).c_str(), fmt_metric(b.f1).c_str(), b.tp,
                  b.fp, b.fn, b.tn);
    out += line;
  };
  row("overall", report.overall);
  for (const auto& tier : tier_order(report)) {
    row(tier, report.per_tier.at(tier));
  }
  if (report.pairwise_win_rate) {
    std::snprintf(line, sizeof(line), "pairwise_win_rate %.4f\n",
                  *report.pairwise_win_rate);
    out += line;
  }
  if (report.skipped > 0) {
    std::snprintf(line, sizeof(line), "skipped %zu\n", report.skipped);
    out += line;
  }
  return out;
}

}  // namespace cdpo::eval
