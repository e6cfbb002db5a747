#include "cdpo/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cdpo/common.hpp"
#include "cdpo/kernels.hpp"

namespace cdpo::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const char* to_string(PairSetMode m) {
  switch (m) {
    case PairSetMode::answer: return "answer";
    case PairSetMode::label: return "label";
    default: return "both";
  }
}

PairSetMode pair_set_mode_from_string(const std::string& s) {
  if (s == "answer") return PairSetMode::answer;
  if (s == "label") return PairSetMode::label;
  if (s == "both") return PairSetMode::both;
  throw ValidationError("unknown pair mode '" + s +
                        "' (want answer, label, or both)");
}

bool in_holdout(const std::string& example_id, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ValidationError("holdout fraction must lie in [0, 1)");
  }
  const auto threshold =
      static_cast<std::uint64_t>(std::llround(fraction * 10000.0));
  return fnv1a64(example_id) % 10000 < threshold;
}

CorpusSplit split_corpus(const std::vector<DetectionExample>& examples,
                         double holdout_fraction) {
  CorpusSplit split;
  for (const auto& ex : examples) {
    (in_holdout(ex.id, holdout_fraction) ? split.test : split.train)
        .push_back(ex);
  }
  return split;
}

policy::Tokenizer build_tokenizer_for(
    std::span<const DetectionExample> examples) {
  const auto ans = PromptTemplate::default_for(TemplateMode::answer_preference);
  const auto lab = PromptTemplate::default_for(TemplateMode::label_preference);
  std::vector<std::string> texts;
  texts.reserve(examples.size() * 4 + 2);
  for (const auto& ex : examples) {
    texts.push_back(ans.render_prompt(ex));
    texts.push_back(lab.render_prompt(ex, ex.answer_true));
    texts.push_back(ex.answer_true);
    texts.push_back(ex.answer_hall);
  }
  texts.push_back(lab.verdict_positive);
  texts.push_back(lab.verdict_negative);
  return policy::Tokenizer::build(texts);
}

std::vector<PreferencePair> build_pair_set(
    const std::vector<DetectionExample>& examples, PairSetMode mode) {
  std::vector<PreferencePair> pairs;
  if (mode == PairSetMode::answer || mode == PairSetMode::both) {
    auto p = corpus::build_pairs(
        examples, PromptTemplate::default_for(TemplateMode::answer_preference));
    pairs.insert(pairs.end(), std::make_move_iterator(p.begin()),
                 std::make_move_iterator(p.end()));
  }
  if (mode == PairSetMode::label || mode == PairSetMode::both) {
    auto p = corpus::build_pairs(
        examples, PromptTemplate::default_for(TemplateMode::label_preference));
    pairs.insert(pairs.end(), std::make_move_iterator(p.begin()),
                 std::make_move_iterator(p.end()));
  }
  return pairs;
}

PipelineResult run_training_pipeline(const PipelineSpec& spec) {
  if (spec.train_examples.empty()) {
    throw ValidationError("no training examples after the holdout split");
  }
  spec.config.validate();

  std::vector<DetectionExample> train = spec.train_examples;
  std::vector<grounding::GroundingScore> scores;
  scores.reserve(train.size());
  for (auto& ex : train) {
    auto it = spec.scores.find(ex.id);
    if (it == spec.scores.end()) {
      throw ValidationError("no grounding score for example '" + ex.id + "'");
    }
    ex.score = it->second;
    scores.push_back({ex.id, it->second, "pipeline"});
  }

  auto kept_scores = grounding::filter_by_range(scores, spec.range);
  std::set<std::string> kept_ids;
  for (const auto& s : kept_scores) kept_ids.insert(s.example_id);
  std::vector<DetectionExample> kept;
  kept.reserve(kept_ids.size());
  for (const auto& ex : train) {
    if (kept_ids.count(ex.id)) kept.push_back(ex);
  }
  if (kept.empty()) {
    throw ValidationError("difficulty filter [" + std::to_string(spec.range.lo) +
                          ", " + std::to_string(spec.range.hi) +
                          "] removed every training example");
  }

  auto pairs = build_pair_set(kept, spec.mode);
  auto schedule =
      curriculum::build_schedule(pairs, spec.stages, spec.policy, spec.seed);

  const std::vector<DetectionExample>& vocab_src =
      spec.vocab_examples ? *spec.vocab_examples : spec.train_examples;
  policy::Tokenizer tok = build_tokenizer_for(vocab_src);

  policy::ModelDims dims = spec.dims;
  dims.vocab = tok.vocab_size();
  policy::PolicyModel model(std::move(tok), dims, spec.seed,
                            policy::InitMode::random);
  auto ref = policy::snapshot_reference(model);

  dpo::TrainConfig cfg = spec.config;
  cfg.seed = spec.seed;
  auto log = dpo::train(model, ref, schedule, cfg);

  const std::size_t per_example = spec.mode == PairSetMode::both ? 2 : 1;
  return PipelineResult{std::move(model), std::move(schedule), std::move(log),
                        train.size() * per_example, pairs.size()};
}

eval::MetricsReport evaluate_model(const policy::PolicyModel& model,
                                   std::span<const DetectionExample> examples,
                                   bool both_answers, bool with_win_rate) {
  if (examples.empty()) throw ValidationError("no examples to evaluate");
  const auto tmpl = PromptTemplate::default_for(TemplateMode::label_preference);
  auto outcome = eval::classify_corpus(model, examples, tmpl,
                                       model.tokenizer(), both_answers);
  if (outcome.predictions.empty()) {
    throw ValidationError("every example overflowed the context window");
  }
  auto report = eval::compute_metrics(outcome.predictions);
  report.skipped = outcome.skipped;
  if (with_win_rate) {
    std::vector<DetectionExample> vec(examples.begin(), examples.end());
    auto pairs = corpus::build_pairs(
        vec, PromptTemplate::default_for(TemplateMode::answer_preference));
    report.pairwise_win_rate =
        eval::pairwise_wins(model, pairs, model.tokenizer()).rate;
  }
  return report;
}

std::uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for checksum");
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string data = ss.str();
  return fnv1a64(data.data(), data.size());
}

// ------------------------------------------------------------------ helpers

namespace {

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

std::string iso_timestamp() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create output directory '" + dir +
                  "': " + ec.message());
  }
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("short write to '" + path + "'");
}

json config_to_json(const dpo::TrainConfig& cfg) {
  json j;
  j["beta"] = cfg.beta;
  j["learning_rate"] = cfg.learning_rate;
  j["grad_accum_steps"] = cfg.grad_accum_steps;
  j["batch_size"] = cfg.batch_size;
  j["epochs_per_stage"] = cfg.epochs_per_stage;
  j["optimizer"] = dpo::to_string(cfg.optimizer);
  j["b1"] = cfg.b1;
  j["b2"] = cfg.b2;
  j["eps"] = cfg.eps;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["shuffle_within_stage"] = cfg.shuffle_within_stage;
  return j;
}

struct ManifestBuilder {
  json j;

  ManifestBuilder(const std::string& command,
                  const std::vector<std::string>& argv) {
    j["command"] = command;
    j["timestamp"] = iso_timestamp();
    j["argv"] = argv;
    j["inputs"] = json::object();
    j["outputs"] = json::object();
  }
  void input(const std::string& key, const std::string& path) {
    j["inputs"][key] = path;
  }
  void output(const std::string& key, const std::string& path) {
    j["outputs"][key] = {{"path", path},
                         {"fnv1a64", hex64(file_checksum(path))}};
  }
  void write(const std::string& out_dir) {
    write_text(out_dir + "/manifest.json", j.dump(2) + "\n");
  }
};

std::map<std::string, double> to_score_map(
    const std::vector<grounding::GroundingScore>& scores) {
  std::map<std::string, double> m;
  for (const auto& s : scores) m[s.example_id] = s.p;
  return m;
}

// sidecar wins; otherwise scores embedded in the corpus; otherwise the
// lexical proxy
std::map<std::string, double> resolve_scores(
    const std::vector<DetectionExample>& examples,
    const std::string& sidecar, std::string* source) {
  if (!sidecar.empty()) {
    if (source) *source = "file:" + sidecar;
    return to_score_map(grounding::load_scores(sidecar));
  }
  bool all_embedded = !examples.empty();
  for (const auto& ex : examples) {
    if (!ex.score) {
      all_embedded = false;
      break;
    }
  }
  if (all_embedded) {
    std::map<std::string, double> m;
    for (const auto& ex : examples) m[ex.id] = *ex.score;
    if (source) *source = "embedded";
    return m;
  }
  if (source) *source = "lexical_proxy";
  grounding::LexicalProxyScorer scorer;
  return to_score_map(grounding::score_examples(examples, scorer));
}

grounding::ScoreRange resolve_range(const std::string& preset,
                                    const std::optional<double>& lo,
                                    const std::optional<double>& hi) {
  auto range = grounding::range_preset(preset);
  if (!range) {
    throw ValidationError("unknown range preset '" + preset + "'");
  }
  grounding::ScoreRange r = *range;
  if (lo) r.lo = *lo;
  if (hi) r.hi = *hi;
  if (!(r.lo <= r.hi)) {
    throw ValidationError("range lower bound exceeds upper bound");
  }
  return r;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ',')) {
    item = normalize_whitespace(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string fmt_opt(const std::optional<double>& v, int width) {
  char buf[32];
  if (v) {
    std::snprintf(buf, sizeof(buf), "%*.4f", width, *v);
  } else {
    std::snprintf(buf, sizeof(buf), "%*s", width, "n/a");
  }
  return buf;
}

// ------------------------------------------------------------ train options

struct TrainFlags {
  std::string config_file;
  std::string preset;
  std::optional<double> beta, learning_rate, b1, b2, eps, weight_decay;
  std::optional<long long> grad_accum, batch, epochs;
  std::optional<std::string> optimizer;
  bool shuffle = false;

  dpo::TrainConfig resolve(const std::optional<std::uint64_t>& seed_flag) const {
    dpo::TrainConfig cfg;
    if (!preset.empty()) {
      if (preset != "paper") {
        throw ValidationError("unknown preset '" + preset +
                              "' (only 'paper' exists)");
      }
      cfg = dpo::TrainConfig::paper_preset();
    }
    if (!config_file.empty()) cfg = dpo::load_train_config(config_file, cfg);
    if (beta) cfg.beta = *beta;
    if (learning_rate) cfg.learning_rate = *learning_rate;
    if (grad_accum) cfg.grad_accum_steps = static_cast<std::size_t>(*grad_accum);
    if (batch) cfg.batch_size = static_cast<std::size_t>(*batch);
    if (epochs) cfg.epochs_per_stage = static_cast<std::size_t>(*epochs);
    if (optimizer) cfg.optimizer = dpo::optimizer_from_string(*optimizer);
    if (b1) cfg.b1 = *b1;
    if (b2) cfg.b2 = *b2;
    if (eps) cfg.eps = *eps;
    if (weight_decay) cfg.weight_decay = *weight_decay;
    if (shuffle) cfg.shuffle_within_stage = true;
    if (seed_flag) cfg.seed = *seed_flag;
    cfg.validate();
    return cfg;
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file,
                    "key=value training config file");
    cmd->add_option("--preset", preset,
                    "hyperparameter preset (paper: lr 1e-5, accum 4)");
    cmd->add_option("--beta", beta, "trust-region beta");
    cmd->add_option("--learning-rate", learning_rate, "optimizer step size");
    cmd->add_option("--grad-accum-steps", grad_accum,
                    "micro-batches per optimizer update");
    cmd->add_option("--batch-size", batch, "pairs per micro-batch");
    cmd->add_option("--epochs-per-stage", epochs, "passes over each stage");
    cmd->add_option("--optimizer", optimizer, "sgd or adamw");
    cmd->add_option("--b1", b1, "adamw first-moment decay");
    cmd->add_option("--b2", b2, "adamw second-moment decay");
    cmd->add_option("--eps", eps, "adamw denominator floor");
    cmd->add_option("--weight-decay", weight_decay, "decoupled weight decay");
    cmd->add_flag("--shuffle-within-stage", shuffle,
                  "reshuffle each stage's pairs every epoch");
  }
};

struct DimFlags {
  long long embed = 64, layers = 2, heads = 2, context = 256;

  policy::ModelDims resolve() const {
    policy::ModelDims d;
    if (embed <= 0 || layers <= 0 || heads <= 0 || context <= 0) {
      throw ValidationError("model dimensions must be positive");
    }
    d.embed = static_cast<std::size_t>(embed);
    d.layers = static_cast<std::size_t>(layers);
    d.heads = static_cast<std::size_t>(heads);
    d.context = static_cast<std::size_t>(context);
    return d;
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--embed", embed, "embedding width");
    cmd->add_option("--layers", layers, "transformer blocks");
    cmd->add_option("--heads", heads, "attention heads");
    cmd->add_option("--context", context, "context window in tokens");
  }
};

// ----------------------------------------------------------------- commands

struct SharedFlags {
  std::optional<std::uint64_t> seed;
  std::string out = ".";

  std::uint64_t seed_or(std::uint64_t fallback) const {
    return seed ? *seed : fallback;
  }
  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "master seed for all randomness");
    cmd->add_option("--out", out, "output directory");
  }
};

int cmd_synth(const std::vector<std::string>& argv, const SharedFlags& shared,
              long long n, double spread, const std::string& name) {
  if (n <= 0) throw ValidationError("--n must be positive");
  ensure_dir(shared.out);
  auto examples = corpus::generate_synthetic_corpus(
      static_cast<std::size_t>(n), spread, shared.seed_or(0));
  const std::string path = shared.out + "/" + name;
  corpus::write_corpus(path, examples);

  ManifestBuilder mb("synth", argv);
  mb.j["config"] = {{"n", n}, {"spread", spread}, {"seed", shared.seed_or(0)}};
  mb.output("corpus", path);
  mb.write(shared.out);
  std::cout << "wrote " << examples.size() << " examples to " << path << "\n";
  return kExitOk;
}

int cmd_score(const std::vector<std::string>& argv, const SharedFlags& shared,
              const std::string& corpus_path, const std::string& scorer_name,
              const std::string& sidecar) {
  ensure_dir(shared.out);
  auto examples = corpus::load_corpus(corpus_path);

  std::unique_ptr<grounding::Scorer> scorer;
  if (scorer_name == "lexical_proxy") {
    scorer = std::make_unique<grounding::LexicalProxyScorer>();
  } else if (scorer_name == "file_backed") {
    if (sidecar.empty()) {
      throw ValidationError("file_backed scorer needs --sidecar");
    }
    scorer = std::make_unique<grounding::FileBackedScorer>(sidecar);
  } else {
    throw ValidationError("unknown scorer '" + scorer_name +
                          "' (want lexical_proxy or file_backed)");
  }

  auto scores = grounding::score_examples(examples, *scorer);
  const std::string path = shared.out + "/scores.jsonl";
  grounding::write_scores(path, scores);

  ManifestBuilder mb("score", argv);
  mb.input("corpus", corpus_path);
  if (!sidecar.empty()) mb.input("sidecar", sidecar);
  mb.j["config"] = {{"scorer", scorer_name}};
  mb.output("scores", path);
  mb.write(shared.out);
  std::cout << "scored " << scores.size() << " examples with " << scorer->id()
            << " -> " << path << "\n";
  return kExitOk;
}

int cmd_train(const std::vector<std::string>& argv, const SharedFlags& shared,
              const std::string& corpus_path, const std::string& sidecar,
              const std::string& range_name, const std::optional<double>& lo,
              const std::optional<double>& hi, long long stages,
              const std::string& policy_name, const std::string& mode_name,
              double holdout, const TrainFlags& tf, const DimFlags& df) {
  if (stages <= 0) throw ValidationError("--stages must be positive");
  ensure_dir(shared.out);

  auto all = corpus::load_corpus(corpus_path);
  auto split = split_corpus(all, holdout);
  std::string score_source;
  auto scores = resolve_scores(split.train, sidecar, &score_source);

  PipelineSpec spec;
  spec.train_examples = std::move(split.train);
  spec.scores = std::move(scores);
  spec.range = resolve_range(range_name, lo, hi);
  spec.stages = static_cast<std::size_t>(stages);
  spec.policy = curriculum::policy_from_string(policy_name);
  spec.mode = pair_set_mode_from_string(mode_name);
  spec.dims = df.resolve();
  spec.config = tf.resolve(shared.seed);
  spec.seed = spec.config.seed;
  spec.vocab_examples = &all;

  auto result = run_training_pipeline(spec);

  const std::string model_path = shared.out + "/model.bin";
  const std::string log_path = shared.out + "/train_log.jsonl";
  const std::string sched_path = shared.out + "/schedule.jsonl";
  policy::save_model(result.model, model_path);
  dpo::write_train_log(log_path, result.log);
  curriculum::write_schedule(sched_path, result.schedule);

  ManifestBuilder mb("train", argv);
  mb.input("corpus", corpus_path);
  if (!sidecar.empty()) mb.input("scores", sidecar);
  mb.j["config"] = config_to_json(spec.config);
  mb.j["config"]["range"] = {{"lo", spec.range.lo}, {"hi", spec.range.hi}};
  mb.j["config"]["stages"] = spec.stages;
  mb.j["config"]["policy"] = curriculum::to_string(spec.policy);
  mb.j["config"]["mode"] = to_string(spec.mode);
  mb.j["config"]["holdout"] = holdout;
  mb.j["config"]["score_source"] = score_source;
  mb.j["config"]["dims"] = {{"vocab", result.model.dims().vocab},
                            {"embed", result.model.dims().embed},
                            {"layers", result.model.dims().layers},
                            {"heads", result.model.dims().heads},
                            {"context", result.model.dims().context}};
  mb.output("model", model_path);
  mb.output("train_log", log_path);
  mb.output("schedule", sched_path);
  mb.write(shared.out);

  double final_loss =
      result.log.empty() ? 0.0 : result.log.back().loss;
  std::cout << "trained on " << result.pairs_kept << "/" << result.pairs_total
            << " pairs in " << result.schedule.stages.size() << " stages, "
            << result.log.size() << " optimizer steps, final step loss "
            << final_loss << "\n"
            << "model -> " << model_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::vector<std::string>& argv, const SharedFlags& shared,
             const std::string& model_path, const std::string& corpus_path,
             const std::string& split_name, double holdout, bool both_answers,
             bool no_win_rate) {
  ensure_dir(shared.out);
  auto model = policy::load_model(model_path);
  auto all = corpus::load_corpus(corpus_path);

  std::vector<DetectionExample> subset;
  if (split_name == "all") {
    subset = all;
  } else if (split_name == "test" || split_name == "train") {
    auto split = split_corpus(all, holdout);
    subset = split_name == "test" ? std::move(split.test)
                                  : std::move(split.train);
  } else {
    throw ValidationError("unknown split '" + split_name +
                          "' (want test, train, or all)");
  }
  if (subset.empty()) {
    throw ValidationError("split '" + split_name + "' is empty");
  }

  auto report = evaluate_model(model, subset, both_answers, !no_win_rate);

  json j;
  j["model"] = model_path;
  j["corpus"] = corpus_path;
  j["split"] = split_name;
  j["holdout"] = holdout;
  j["both_answers"] = both_answers;
  j["examples"] = subset.size();
  j["metrics"] = eval::metrics_to_json(report);
  const std::string json_path = shared.out + "/report.json";
  const std::string text_path = shared.out + "/report.txt";
  write_text(json_path, j.dump(2) + "\n");
  std::string table = eval::render_metrics_table(report);
  write_text(text_path, table);

  ManifestBuilder mb("eval", argv);
  mb.input("model", model_path);
  mb.input("corpus", corpus_path);
  mb.j["config"] = {{"split", split_name},
                    {"holdout", holdout},
                    {"both_answers", both_answers},
                    {"win_rate", !no_win_rate}};
  mb.output("report_json", json_path);
  mb.output("report_text", text_path);
  mb.write(shared.out);

  std::cout << table;
  return kExitOk;
}

int cmd_ablate(const std::vector<std::string>& argv, const SharedFlags& shared,
               const std::string& corpus_path, const std::string& sidecar,
               const std::string& policies_csv, const std::string& ranges_csv,
               const std::string& seeds_csv, long long stages,
               const std::string& mode_name, double holdout,
               const TrainFlags& tf, const DimFlags& df) {
  if (stages <= 0) throw ValidationError("--stages must be positive");
  ensure_dir(shared.out);

  const auto policies = split_csv(policies_csv);
  const auto ranges = split_csv(ranges_csv);
  const auto seed_names = split_csv(seeds_csv);
  if (policies.empty() || ranges.empty() || seed_names.empty()) {
    throw ValidationError("ablation grid is empty");
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& s : seed_names) {
    try {
      seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ValidationError("bad seed '" + s + "' in --seeds");
    }
  }

  auto all = corpus::load_corpus(corpus_path);
  auto split = split_corpus(all, holdout);
  if (split.train.empty() || split.test.empty()) {
    throw ValidationError("holdout split left an empty train or test set");
  }
  std::string score_source;
  auto scores = resolve_scores(split.train, sidecar, &score_source);
  const auto base_cfg = tf.resolve(shared.seed);
  const auto dims = df.resolve();
  const auto mode = pair_set_mode_from_string(mode_name);

  struct Row {
    std::string policy, range;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::optional<double> f1, precision, win_rate;
    double accuracy = 0.0;
  };
  std::vector<Row> rows;

  for (const auto& policy_name : policies) {
    for (const auto& range_name : ranges) {
      for (std::uint64_t seed : seeds) {
        Row row;
        row.policy = policy_name;
        row.range = range_name;
        row.seed = seed;
        try {
          PipelineSpec spec;
          spec.train_examples = split.train;
          spec.scores = scores;
          spec.range = resolve_range(range_name, std::nullopt, std::nullopt);
          spec.stages = static_cast<std::size_t>(stages);
          spec.policy = curriculum::policy_from_string(policy_name);
          spec.mode = mode;
          spec.dims = dims;
          spec.config = base_cfg;
          spec.seed = seed;
          spec.vocab_examples = &all;
          auto result = run_training_pipeline(spec);
          auto report = evaluate_model(result.model, split.test, false, true);
          row.ok = true;
          row.f1 = report.overall.f1;
          row.precision = report.overall.precision;
          row.accuracy = report.overall.accuracy;
          row.win_rate = report.pairwise_win_rate;
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }

  // per-policy means over the cells that finished
  struct Mean {
    std::vector<double> f1, precision, accuracy, win_rate;
  };
  std::map<std::string, Mean> means;
  for (const auto& r : rows) {
    if (!r.ok) continue;
    auto& m = means[r.policy];
    if (r.f1) m.f1.push_back(*r.f1);
    if (r.precision) m.precision.push_back(*r.precision);
    m.accuracy.push_back(r.accuracy);
    if (r.win_rate) m.win_rate.push_back(*r.win_rate);
  }

  json j;
  j["corpus"] = corpus_path;
  j["holdout"] = holdout;
  j["stages"] = stages;
  j["mode"] = to_string(mode);
  j["score_source"] = score_source;
  j["config"] = config_to_json(base_cfg);
  j["rows"] = json::array();
  for (const auto& r : rows) {
    json rj;
    rj["policy"] = r.policy;
    rj["range"] = r.range;
    rj["seed"] = r.seed;
    rj["ok"] = r.ok;
    if (!r.ok) {
      rj["error"] = r.error;
    } else {
      rj["f1"] = r.f1 ? json(*r.f1) : json(nullptr);
      rj["precision"] = r.precision ? json(*r.precision) : json(nullptr);
      rj["accuracy"] = r.accuracy;
      rj["win_rate"] = r.win_rate ? json(*r.win_rate) : json(nullptr);
    }
    j["rows"].push_back(rj);
  }
  j["policy_means"] = json::object();
  for (const auto& [policy_name, m] : means) {
    json mj;
    auto put = [&](const char* key, const std::vector<double>& v) {
      auto mu = mean_of(v);
      mj[key] = mu ? json(*mu) : json(nullptr);
    };
    put("f1", m.f1);
    put("precision", m.precision);
    put("accuracy", m.accuracy);
    put("win_rate", m.win_rate);
    j["policy_means"][policy_name] = mj;
  }

  std::string table;
  char line[200];
  std::snprintf(line, sizeof(line), "%-12s %-9s %6s %8s %10s %9s %9s  %s\n",
                "policy", "range", "seed", "f1", "precision", "accuracy",
                "win_rate", "status");
  table += line;
  for (const auto& r : rows) {
    if (r.ok) {
      std::snprintf(line, sizeof(line), "%-12s %-9s %6llu %s %s %9.4f %s  ok\n",
                    r.policy.c_str(), r.range.c_str(),
                    static_cast<unsigned long long>(r.seed),
                    fmt_opt(r.f1, 8).c_str(), fmt_opt(r.precision, 10).c_str(),
                    r.accuracy, fmt_opt(r.win_rate, 9).c_str());
    } else {
      std::snprintf(line, sizeof(line), "%-12s %-9s %6llu %8s %10s %9s %9s  failed: %s\n",
                    r.policy.c_str(), r.range.c_str(),
                    static_cast<unsigned long long>(r.seed), "-", "-", "-", "-",
                    r.error.c_str());
    }
    table += line;
  }
  for (const auto& [policy_name, m] : means) {
    std::snprintf(line, sizeof(line), "%-12s %-9s %6s %s %s %s %s  mean\n",
                  policy_name.c_str(), "*", "*",
                  fmt_opt(mean_of(m.f1), 8).c_str(),
                  fmt_opt(mean_of(m.precision), 10).c_str(),
                  fmt_opt(mean_of(m.accuracy), 9).c_str(),
                  fmt_opt(mean_of(m.win_rate), 9).c_str());
    table += line;
  }

  const std::string json_path = shared.out + "/ablation.json";
  const std::string text_path = shared.out + "/ablation.txt";
  write_text(json_path, j.dump(2) + "\n");
  write_text(text_path, table);

  ManifestBuilder mb("ablate", argv);
  mb.input("corpus", corpus_path);
  if (!sidecar.empty()) mb.input("scores", sidecar);
  mb.j["config"] = j["config"];
  mb.j["config"]["grid"] = {{"policies", policies},
                            {"ranges", ranges},
                            {"seeds", seeds},
                            {"stages", stages},
                            {"mode", to_string(mode)},
                            {"holdout", holdout}};
  mb.output("ablation_json", json_path);
  mb.output("ablation_text", text_path);
  mb.write(shared.out);

  std::cout << table;
  return kExitOk;
}

int cmd_stats(const std::vector<std::string>& argv, const SharedFlags& shared,
              const std::string& corpus_path, const std::string& sidecar,
              const std::string& scorer_name, const std::string& alt_path) {
  ensure_dir(shared.out);
  auto examples = corpus::load_corpus(corpus_path);

  auto gather = [&](const std::vector<DetectionExample>& exs,
                    const std::string& sidecar_path)
      -> std::pair<std::vector<grounding::GroundingScore>,
                   std::map<std::string, std::string>> {
    std::vector<grounding::GroundingScore> scores;
    if (!sidecar_path.empty()) {
      auto table = to_score_map(grounding::load_scores(sidecar_path));
      for (const auto& ex : exs) {
        auto it = table.find(ex.id);
        if (it == table.end()) {
          throw ValidationError("sidecar has no score for example '" + ex.id +
                                "'");
        }
        scores.push_back({ex.id, it->second, "file_backed"});
      }
    } else if (!scorer_name.empty()) {
      if (scorer_name != "lexical_proxy") {
        throw ValidationError("unknown scorer '" + scorer_name + "'");
      }
      grounding::LexicalProxyScorer scorer;
      scores = grounding::score_examples(exs, scorer);
    } else {
      bool embedded = !exs.empty();
      for (const auto& ex : exs) {
        if (!ex.score) {
          embedded = false;
          break;
        }
      }
      if (!embedded) {
        throw ValidationError(
            "corpus carries no scores; pass --scores or --scorer");
      }
      for (const auto& ex : exs) scores.push_back({ex.id, *ex.score, "embedded"});
    }
    bool tiered = !exs.empty();
    std::map<std::string, std::string> tiers;
    for (const auto& ex : exs) {
      if (!ex.tier) {
        tiered = false;
        break;
      }
      tiers[ex.id] = *ex.tier;
    }
    if (!tiered) tiers = grounding::tiers_from_terciles(scores);
    return {std::move(scores), std::move(tiers)};
  };

  auto [scores, tiers] = gather(examples, sidecar);
  auto stats = grounding::tier_statistics(scores, tiers);

  std::map<std::string, grounding::TierStats> alt_stats;
  if (!alt_path.empty()) {
    auto alt = corpus::load_corpus(alt_path);
    auto [alt_scores, alt_tiers] = gather(alt, "");
    alt_stats = grounding::tier_statistics(alt_scores, alt_tiers);
  }

  auto ordered_tiers = [](const std::map<std::string, grounding::TierStats>& m) {
    std::vector<std::string> out;
    for (const char* t : {"easy", "medium", "hard"}) {
      if (m.count(t)) out.push_back(t);
    }
    for (const auto& [tier, _] : m) {
      if (std::find(out.begin(), out.end(), tier) == out.end()) {
        out.push_back(tier);
      }
    }
    return out;
  };

  json j;
  j["corpus"] = corpus_path;
  auto stats_json = [&](const std::map<std::string, grounding::TierStats>& m) {
    json out = json::object();
    for (const auto& tier : ordered_tiers(m)) {
      const auto& s = m.at(tier);
      out[tier] = {{"count", s.count},
                   {"mean", s.mean ? json(*s.mean) : json(nullptr)},
                   {"median", s.median ? json(*s.median) : json(nullptr)}};
    }
    return out;
  };
  j["tiers"] = stats_json(stats);
  if (!alt_path.empty()) {
    j["alt_corpus"] = alt_path;
    j["alt_tiers"] = stats_json(alt_stats);
  }

  std::string table;
  char line[200];
  if (alt_path.empty()) {
    std::snprintf(line, sizeof(line), "%-10s %7s %9s %9s\n", "tier", "count",
                  "mean", "median");
    table += line;
    for (const auto& tier : ordered_tiers(stats)) {
      const auto& s = stats.at(tier);
      std::snprintf(line, sizeof(line), "%-10s %7zu %s %s\n", tier.c_str(),
                    s.count, fmt_opt(s.mean, 9).c_str(),
                    fmt_opt(s.median, 9).c_str());
      table += line;
    }
  } else {
    std::snprintf(line, sizeof(line), "%-10s | %7s %9s %9s | %7s %9s %9s\n",
                  "tier", "count", "mean", "median", "count", "mean",
                  "median");
    table += line;
    auto order = ordered_tiers(stats);
    for (const auto& tier : ordered_tiers(alt_stats)) {
      if (std::find(order.begin(), order.end(), tier) == order.end()) {
        order.push_back(tier);
      }
    }
    grounding::TierStats empty;
    for (const auto& tier : order) {
      const auto& a = stats.count(tier) ? stats.at(tier) : empty;
      const auto& b = alt_stats.count(tier) ? alt_stats.at(tier) : empty;
      std::snprintf(line, sizeof(line),
                    "%-10s | %7zu %s %s | %7zu %s %s\n", tier.c_str(), a.count,
                    fmt_opt(a.mean, 9).c_str(), fmt_opt(a.median, 9).c_str(),
                    b.count, fmt_opt(b.mean, 9).c_str(),
                    fmt_opt(b.median, 9).c_str());
      table += line;
    }
  }

  const std::string json_path = shared.out + "/stats.json";
  const std::string text_path = shared.out + "/stats.txt";
  write_text(json_path, j.dump(2) + "\n");
  write_text(text_path, table);

  ManifestBuilder mb("stats", argv);
  mb.input("corpus", corpus_path);
  if (!sidecar.empty()) mb.input("scores", sidecar);
  if (!alt_path.empty()) mb.input("alt_corpus", alt_path);
  mb.j["config"] = {{"scorer", scorer_name.empty() ? "auto" : scorer_name}};
  mb.output("stats_json", json_path);
  mb.output("stats_text", text_path);
  mb.write(shared.out);

  std::cout << table;
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------- front end

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> argv_echo(argv, argv + argc);

  CLI::App app{"curriculum-ordered preference training for hallucination "
               "detection on a desk-scale policy model"};
  app.require_subcommand(1);

  int threads = 0;
  bool serial = false;
  app.add_option("--threads", threads, "cap worker threads (0 = default)");
  app.add_flag("--serial", serial, "force the serial kernel path");
  app.fallthrough();  // lets --threads/--serial appear after the subcommand

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  SharedFlags synth_shared;
  synth_shared.attach(synth);
  long long synth_n = 500;
  double synth_spread = 1.0;
  std::string synth_name = "corpus.jsonl";
  synth->add_option("--n", synth_n, "number of examples");
  synth->add_option("--spread", synth_spread,
                    "difficulty spread in [0,1]; 1 covers the whole range");
  synth->add_option("--name", synth_name, "output file name");

  // score
  auto* score = app.add_subcommand("score", "grounding-score a corpus");
  SharedFlags score_shared;
  score_shared.attach(score);
  std::string score_corpus, score_scorer = "lexical_proxy", score_sidecar;
  score->add_option("--corpus", score_corpus, "corpus JSONL")->required();
  score->add_option("--scorer", score_scorer,
                    "lexical_proxy or file_backed");
  score->add_option("--sidecar", score_sidecar,
                    "precomputed scores for file_backed");

  // train
  auto* train = app.add_subcommand("train", "curriculum preference training");
  SharedFlags train_shared;
  train_shared.attach(train);
  std::string train_corpus, train_scores, train_range = "r25-100";
  std::string train_policy = "curriculum", train_mode = "answer";
  std::optional<double> train_lo, train_hi;
  long long train_stages = 3;
  double train_holdout = 0.2;
  TrainFlags train_tf;
  DimFlags train_df;
  train->add_option("--corpus", train_corpus, "corpus JSONL")->required();
  train->add_option("--scores", train_scores, "score sidecar JSONL");
  train->add_option("--range", train_range,
                    "difficulty range preset (r00-75 r25-100 r25-75 r00-100)");
  train->add_option("--lo", train_lo, "override range lower bound");
  train->add_option("--hi", train_hi, "override range upper bound");
  train->add_option("--stages", train_stages, "curriculum stages");
  train->add_option("--policy", train_policy, "curriculum or random");
  train->add_option("--mode", train_mode,
                    "preference pairs: answer, label, or both");
  train->add_option("--holdout", train_holdout,
                    "held-out fraction by id hash");
  train_tf.attach(train);
  train_df.attach(train);

  // eval
  auto* evalc = app.add_subcommand("eval", "evaluate a trained model");
  SharedFlags eval_shared;
  eval_shared.attach(evalc);
  std::string eval_model, eval_corpus, eval_split = "test";
  double eval_holdout = 0.2;
  bool eval_both = false, eval_no_wr = false;
  evalc->add_option("--model", eval_model, "model file")->required();
  evalc->add_option("--corpus", eval_corpus, "corpus JSONL")->required();
  evalc->add_option("--split", eval_split, "test, train, or all");
  evalc->add_option("--holdout", eval_holdout, "held-out fraction");
  evalc->add_flag("--both-answers", eval_both,
                  "judge both answers of every example");
  evalc->add_flag("--no-win-rate", eval_no_wr, "skip the pairwise win rate");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "policy/range/seed grid");
  SharedFlags ablate_shared;
  ablate_shared.attach(ablate);
  std::string ab_corpus, ab_scores;
  std::string ab_policies = "curriculum,random";
  std::string ab_ranges = "r25-100";
  std::string ab_seeds = "1";
  std::string ab_mode = "both";
  long long ab_stages = 3;
  double ab_holdout = 0.2;
  TrainFlags ab_tf;
  DimFlags ab_df;
  ablate->add_option("--corpus", ab_corpus, "corpus JSONL")->required();
  ablate->add_option("--scores", ab_scores, "score sidecar JSONL");
  ablate->add_option("--policies", ab_policies, "comma-separated policies");
  ablate->add_option("--ranges", ab_ranges, "comma-separated range presets");
  ablate->add_option("--seeds", ab_seeds, "comma-separated seeds");
  ablate->add_option("--stages", ab_stages, "curriculum stages");
  ablate->add_option("--mode", ab_mode, "pair mode per cell");
  ablate->add_option("--holdout", ab_holdout, "held-out fraction");
  ab_tf.attach(ablate);
  ab_df.attach(ablate);

  // stats
  auto* stats = app.add_subcommand("stats", "grounding score tier statistics");
  SharedFlags stats_shared;
  stats_shared.attach(stats);
  std::string st_corpus, st_scores, st_scorer, st_alt;
  stats->add_option("--corpus", st_corpus, "corpus JSONL")->required();
  stats->add_option("--scores", st_scores, "score sidecar JSONL");
  stats->add_option("--scorer", st_scorer, "compute scores (lexical_proxy)");
  stats->add_option("--alt-negatives", st_alt,
                    "second corpus with alternative negatives");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  if (threads > 0) kernels::set_num_threads(threads);
  if (serial) kernels::set_force_serial(true);

  try {
    if (synth->parsed()) {
      return cmd_synth(argv_echo, synth_shared, synth_n, synth_spread,
                       synth_name);
    }
    if (score->parsed()) {
      return cmd_score(argv_echo, score_shared, score_corpus, score_scorer,
                       score_sidecar);
    }
    if (train->parsed()) {
      return cmd_train(argv_echo, train_shared, train_corpus, train_scores,
                       train_range, train_lo, train_hi, train_stages,
                       train_policy, train_mode, train_holdout, train_tf,
                       train_df);
    }
    if (evalc->parsed()) {
      return cmd_eval(argv_echo, eval_shared, eval_model, eval_corpus,
                      eval_split, eval_holdout, eval_both, eval_no_wr);
    }
    if (ablate->parsed()) {
      return cmd_ablate(argv_echo, ablate_shared, ab_corpus, ab_scores,
                        ab_policies, ab_ranges, ab_seeds, ab_stages, ab_mode,
                        ab_holdout, ab_tf, ab_df);
    }
    if (stats->parsed()) {
      return cmd_stats(argv_echo, stats_shared, st_corpus, st_scores,
                       st_scorer, st_alt);
    }
    throw ValidationError("no command selected");
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace cdpo::cli
