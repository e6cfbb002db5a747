#include "cdpo/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cdpo/common.hpp"
#include "json.hpp"

namespace cdpo::corpus {

using nlohmann::ordered_json;

const char* to_string(TemplateMode mode) {
  return mode == TemplateMode::answer_preference ? "answer_preference"
                                                 : "label_preference";
}

TemplateMode template_mode_from_string(const std::string& s) {
  if (s == "answer_preference" || s == "answer")
    return TemplateMode::answer_preference;
  if (s == "label_preference" || s == "label")
    return TemplateMode::label_preference;
  throw ValidationError("unknown template mode: " + s);
}

PromptTemplate PromptTemplate::default_for(TemplateMode mode) {
  PromptTemplate t;
  t.mode = mode;
  t.verdict_positive = "hallucinated";
  t.verdict_negative = "factual";
  if (mode == TemplateMode::answer_preference) {
    t.template_text = "context : {context} question : {question} answer :";
  } else {
    t.template_text =
        "context : {context} question : {question} candidate : {answer} "
        "verdict :";
  }
  return t;
}

namespace {

std::string substitute(const std::string& tmpl, const DetectionExample& ex,
                       const std::string* candidate) {
  std::string out;
  out.reserve(tmpl.size() + ex.context.size() + ex.question.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close == std::string::npos)
        throw ValidationError("template: unterminated placeholder");
      const std::string name = tmpl.substr(i + 1, close - i - 1);
      if (name == "context") {
        out += ex.context;
      } else if (name == "question") {
        out += ex.question;
      } else if (name == "answer") {
        if (candidate == nullptr)
          throw ValidationError(
              "template: {answer} placeholder needs a candidate answer");
        out += *candidate;
      } else {
        throw ValidationError("template: unknown placeholder {" + name + "}");
      }
      i = close + 1;
    } else {
      out.push_back(tmpl[i]);
      ++i;
    }
  }
  return out;
}

}  // namespace

std::string PromptTemplate::render_prompt(const DetectionExample& ex) const {
  return substitute(template_text, ex, nullptr);
}

std::string PromptTemplate::render_prompt(const DetectionExample& ex,
                                          const std::string& candidate) const {
  return substitute(template_text, ex, &candidate);
}

namespace {

std::string require_string(const ordered_json& obj, const char* field,
                           std::size_t line_no) {
  if (!obj.contains(field))
    throw ParseError("corpus line " + std::to_string(line_no) +
                     ": missing field `" + field + "`");
  if (!obj[field].is_string())
    throw ParseError("corpus line " + std::to_string(line_no) + ": field `" +
                     field + "` must be a string");
  return obj[field].get<std::string>();
}

}  // namespace

std::vector<DetectionExample> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);

  std::vector<DetectionExample> out;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("corpus line " + std::to_string(line_no) +
                       ": invalid JSON: " + e.what());
    }
    DetectionExample ex;
    ex.id = require_string(obj, "id", line_no);
    ex.context = require_string(obj, "context", line_no);
    ex.question = require_string(obj, "question", line_no);
    ex.answer_true = require_string(obj, "answer_true", line_no);
    ex.answer_hall = require_string(obj, "answer_hall", line_no);
    if (!obj.contains("label"))
      throw ParseError("corpus line " + std::to_string(line_no) +
                       ": missing field `label`");
    if (!obj["label"].is_number_integer())
      throw ParseError("corpus line " + std::to_string(line_no) +
                       ": field `label` must be an integer");
    ex.label = obj["label"].get<int>();
    if (ex.label != 0 && ex.label != 1)
      throw ValidationError("corpus line " + std::to_string(line_no) +
                            ": label must be 0 or 1");
    if (obj.contains("tier") && !obj["tier"].is_null()) {
      const auto tier = obj["tier"].get<std::string>();
      if (tier != "easy" && tier != "medium" && tier != "hard")
        throw ValidationError("corpus line " + std::to_string(line_no) +
                              ": tier must be easy|medium|hard");
      ex.tier = tier;
    }
    if (obj.contains("score") && !obj["score"].is_null()) {
      if (!obj["score"].is_number())
        throw ParseError("corpus line " + std::to_string(line_no) +
                         ": field `score` must be a number");
      ex.score = obj["score"].get<double>();
    }

    if (ex.id.empty())
      throw ValidationError("corpus line " + std::to_string(line_no) +
                            ": id must be nonempty");
    if (!seen_ids.insert(ex.id).second)
      throw ValidationError("corpus line " + std::to_string(line_no) +
                            ": duplicate id `" + ex.id + "`");
    const std::string t_norm = normalize_whitespace(ex.answer_true);
    const std::string h_norm = normalize_whitespace(ex.answer_hall);
    if (t_norm == h_norm)
      throw ValidationError("corpus line " + std::to_string(line_no) +
                            ": answer_true equals answer_hall");
    if (alnum_tokens(t_norm) == alnum_tokens(h_norm))
      std::cerr << "warning: corpus line " << line_no << " (id " << ex.id
                << "): answer_true and answer_hall are near-duplicates\n";
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

ordered_json example_to_json(const DetectionExample& ex) {
  ordered_json obj;
  obj["id"] = ex.id;
  obj["context"] = ex.context;
  obj["question"] = ex.question;
  obj["answer_true"] = ex.answer_true;
  obj["answer_hall"] = ex.answer_hall;
  obj["label"] = ex.label;
  if (ex.tier) obj["tier"] = *ex.tier;
  if (ex.score) obj["score"] = *ex.score;
  return obj;
}

}  // namespace

void write_corpus(const std::string& path,
                  const std::vector<DetectionExample>& examples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file: " + path);
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
  if (!out) throw IoError("error while writing corpus file: " + path);
}

std::vector<PreferencePair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pairs file: " + path);
  std::vector<PreferencePair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("pairs line " + std::to_string(line_no) +
                       ": invalid JSON: " + e.what());
    }
    PreferencePair p;
    p.example_id = require_string(obj, "example_id", line_no);
    p.prompt = require_string(obj, "prompt", line_no);
    p.chosen = require_string(obj, "chosen", line_no);
    p.rejected = require_string(obj, "rejected", line_no);
    if (obj.contains("score") && !obj["score"].is_null())
      p.score = obj["score"].get<double>();
    if (p.chosen == p.rejected)
      throw ValidationError("pairs line " + std::to_string(line_no) +
                            ": chosen equals rejected");
    out.push_back(std::move(p));
  }
  return out;
}

void write_pairs(const std::string& path,
                 const std::vector<PreferencePair>& pairs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pairs file: " + path);
  for (const auto& p : pairs) {
    ordered_json obj;
    obj["example_id"] = p.example_id;
    obj["prompt"] = p.prompt;
    obj["chosen"] = p.chosen;
    obj["rejected"] = p.rejected;
    if (p.score) obj["score"] = *p.score;
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("error while writing pairs file: " + path);
}

std::vector<PreferencePair> build_pairs(
    const std::vector<DetectionExample>& examples, const PromptTemplate& tmpl) {
  std::vector<PreferencePair> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    PreferencePair p;
    p.example_id = ex.id;
    p.score = ex.score;
    if (tmpl.mode == TemplateMode::answer_preference) {
      p.prompt = tmpl.render_prompt(ex);
      p.chosen = ex.answer_true;
      p.rejected = ex.answer_hall;
    } else {
      // the candidate under judgment follows the gold label
      const std::string& candidate =
          ex.label == 1 ? ex.answer_hall : ex.answer_true;
      p.prompt = tmpl.render_prompt(ex, candidate);
      p.chosen = ex.label == 1 ? tmpl.verdict_positive : tmpl.verdict_negative;
      p.rejected = ex.label == 1 ? tmpl.verdict_negative : tmpl.verdict_positive;
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

// Two disjoint syllable pools: grounded vocabulary comes from the first,
// alien vocabulary (words that never occur in any context) from the
// second, so lexical overlap between answers and contexts is fully
// controlled by construction.
std::vector<std::string> make_word_pool(const std::vector<std::string>& syll,
                                        std::size_t want) {
  std::vector<std::string> words;
  words.reserve(want);
  for (std::size_t a = 0; a < syll.size() && words.size() < want; ++a)
    for (std::size_t b = 0; b < syll.size() && words.size() < want; ++b)
      words.push_back(syll[a] + syll[b]);
  for (std::size_t a = 0; a < syll.size() && words.size() < want; ++a)
    for (std::size_t b = 0; b < syll.size() && words.size() < want; ++b)
      for (std::size_t c = 0; c < syll.size() && words.size() < want; ++c)
        words.push_back(syll[a] + syll[b] + syll[c]);
  return words;
}

template <typename T>
std::vector<T> sample_distinct(const std::vector<T>& pool, std::size_t k,
                               DetRng& rng) {
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<T> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.bounded(idx.size() - i));
    std::swap(idx[i], idx[j]);
    out.push_back(pool[idx[i]]);
  }
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

}  // namespace

std::vector<DetectionExample> generate_synthetic_corpus(std::size_t n,
                                                        double difficulty_spread,
                                                        std::uint64_t seed) {
  if (n == 0) throw ValidationError("generate_synthetic_corpus: n must be >= 1");
  if (!(difficulty_spread >= 0.0 && difficulty_spread <= 1.0))
    throw ValidationError(
        "generate_synthetic_corpus: difficulty_spread must be in [0,1]");

  static const std::vector<std::string> grounded_syllables = {
      "ka", "ri", "mo", "ta", "lu", "ne", "so", "vi", "pa", "den", "or", "al"};
  static const std::vector<std::string> alien_syllables = {
      "zu", "qi", "xe", "fy", "wu", "ju", "zef", "xo", "qua", "zyn"};

  const auto grounded = make_word_pool(grounded_syllables, 160);
  const auto alien = make_word_pool(alien_syllables, 120);
  // primary and distractor roles get globally disjoint halves of the
  // grounded pool; difficulty is still the overlap fraction k/m
  const std::vector<std::string> primary_pool(grounded.begin(),
                                              grounded.begin() + 80);
  const std::vector<std::string> distractor_pool(grounded.begin() + 80,
                                                 grounded.end());

  DetRng rng(seed);
  std::vector<DetectionExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    DetectionExample ex;
    {
      char buf[32];
      std::snprintf(buf, sizeof buf, "synth-%06zu", i);
      ex.id = buf;
    }
    const auto picked = sample_distinct(primary_pool, 5, rng);
    const std::string& subject = picked[0];
    const std::size_t n_primary = 3 + static_cast<std::size_t>(rng.bounded(2));
    const std::vector<std::string> primary(picked.begin() + 1,
                                           picked.begin() + 1 + n_primary);
    const auto distractors = sample_distinct(distractor_pool, 7, rng);

    ex.context = "record " + subject + " includes " + join(primary) +
                 " beside " + join(distractors);
    ex.question = "which primary items does record " + subject + " include";
    ex.answer_true = join(primary);

    // hallucinated answer: k tokens grounded in the distractor pool,
    // the rest alien, k set by the per-example overlap fraction
    const std::size_t m = 3 + static_cast<std::size_t>(rng.bounded(4));
    const double frac = difficulty_spread * rng.uniform();
    const auto k = static_cast<std::size_t>(std::lround(frac * static_cast<double>(m)));
    std::vector<std::string> hall = sample_distinct(distractors, std::min(k, distractors.size()), rng);
    const std::size_t grounded_in_hall = hall.size();
    const auto aliens = sample_distinct(alien, m - hall.size(), rng);
    hall.insert(hall.end(), aliens.begin(), aliens.end());
    rng.shuffle(hall);
    ex.answer_hall = join(hall);
    // exactly what the lexical proxy recomputes for this answer
    ex.score = static_cast<double>(grounded_in_hall) / static_cast<double>(m);

    ex.label = static_cast<int>(rng.bounded(2));
    ex.tier = frac < 1.0 / 3.0 ? "easy" : (frac < 2.0 / 3.0 ? "medium" : "hard");
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace cdpo::corpus
