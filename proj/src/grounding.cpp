#include "cdpo/grounding.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "cdpo/common.hpp"
#include "cdpo/kernels.hpp"
#include "json.hpp"

namespace cdpo::grounding {

std::optional<ScoreRange> range_preset(const std::string& name) {
  if (name == "r00-75") return ScoreRange{0.0, 0.75};
  if (name == "r25-100") return ScoreRange{0.25, 1.0};
  if (name == "r25-75") return ScoreRange{0.25, 0.75};
  if (name == "r00-100") return ScoreRange{0.0, 1.0};
  return std::nullopt;
}

std::vector<std::string> range_preset_names() {
  return {"r00-75", "r25-100", "r25-75", "r00-100"};
}

// Fixed stop-word list, versioned with the artifact so proxy scores are
// reproducible. Function words only; nothing domain specific.
const std::vector<std::string>& stop_words() {
  static const std::vector<std::string> words = {
      "a",    "an",   "and",  "are",  "as",    "at",    "be",   "but",
      "by",   "do",   "does", "for",  "from",  "had",   "has",  "have",
      "he",   "her",  "his",  "i",    "if",    "in",    "into", "is",
      "it",   "its",  "no",   "not",  "of",    "on",    "or",   "she",
      "so",   "such", "that", "the",  "their", "then",  "there", "these",
      "they", "this", "to",   "was",  "were",  "which", "who",  "will",
      "with", "you"};
  return words;
}

namespace {

const std::unordered_set<std::string>& stop_word_set() {
  static const std::unordered_set<std::string> set(stop_words().begin(),
                                                   stop_words().end());
  return set;
}

}  // namespace

double lexical_proxy_score(const std::string& answer,
                           const std::string& context) {
  std::unordered_set<std::string> answer_content;
  for (auto& tok : alnum_tokens(answer))
    if (!stop_word_set().contains(tok)) answer_content.insert(std::move(tok));
  if (answer_content.empty()) return 0.0;

  std::unordered_set<std::string> context_tokens;
  for (auto& tok : alnum_tokens(context)) context_tokens.insert(std::move(tok));

  std::size_t hits = 0;
  for (const auto& tok : answer_content)
    if (context_tokens.contains(tok)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(answer_content.size());
}

double LexicalProxyScorer::score(const corpus::DetectionExample& ex) const {
  return lexical_proxy_score(ex.answer_hall, ex.context);
}

FileBackedScorer::FileBackedScorer(const std::string& sidecar_path) {
  for (const auto& s : load_scores(sidecar_path)) table_[s.example_id] = s.p;
}

double FileBackedScorer::score(const corpus::DetectionExample& ex) const {
  const auto it = table_.find(ex.id);
  if (it == table_.end())
    throw ValidationError("file_backed scorer: missing ids: " + ex.id);
  return it->second;
}

std::vector<GroundingScore> score_examples(
    const std::vector<corpus::DetectionExample>& examples,
    const Scorer& scorer) {
  // fail up front so the parallel loop below cannot throw
  if (const auto* fb = dynamic_cast<const FileBackedScorer*>(&scorer)) {
    std::string missing;
    for (const auto& ex : examples) {
      if (!fb->table().contains(ex.id)) {
        if (!missing.empty()) missing += ", ";
        missing += ex.id;
      }
    }
    if (!missing.empty())
      throw ValidationError("file_backed scorer: missing ids: " + missing);
  }

  std::vector<GroundingScore> out(examples.size());
  const std::string scorer_id = scorer.id();
  kernels::parallel_for(examples.size(), [&](std::size_t i) {
    out[i] = GroundingScore{examples[i].id, scorer.score(examples[i]), scorer_id};
  });
  for (const auto& s : out)
    if (!(s.p >= 0.0 && s.p <= 1.0))
      throw ValidationError("scorer produced out-of-range p=" +
                            std::to_string(s.p) + " for id " + s.example_id);
  return out;
}

void write_scores(const std::string& path,
                  const std::vector<GroundingScore>& scores) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write score sidecar: " + path);
  for (const auto& s : scores) {
    nlohmann::ordered_json obj;
    obj["id"] = s.example_id;
    obj["p"] = s.p;
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("error while writing score sidecar: " + path);
}

std::vector<GroundingScore> load_scores(const std::string& path,
                                        const std::string& scorer_id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open score sidecar: " + path);
  std::vector<GroundingScore> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("score sidecar line " + std::to_string(line_no) +
                       ": invalid JSON: " + e.what());
    }
    if (!obj.contains("id") || !obj["id"].is_string())
      throw ParseError("score sidecar line " + std::to_string(line_no) +
                       ": missing field `id`");
    if (!obj.contains("p") || !obj["p"].is_number())
      throw ParseError("score sidecar line " + std::to_string(line_no) +
                       ": missing field `p`");
    GroundingScore s;
    s.example_id = obj["id"].get<std::string>();
    s.p = obj["p"].get<double>();
    s.scorer_id = scorer_id;
    if (!(s.p >= 0.0 && s.p <= 1.0))
      throw ValidationError("score sidecar line " + std::to_string(line_no) +
                            ": p must be in [0,1]");
    if (!seen.insert(s.example_id).second)
      throw ValidationError("score sidecar line " + std::to_string(line_no) +
                            ": duplicate id `" + s.example_id + "`");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<GroundingScore> filter_by_range(
    const std::vector<GroundingScore>& scores, const ScoreRange& range) {
  if (!(range.lo <= range.hi))
    throw ValidationError("filter_by_range: lo must be <= hi");
  std::vector<GroundingScore> out;
  out.reserve(scores.size());
  for (const auto& s : scores)
    if (s.p >= range.lo && s.p <= range.hi) out.push_back(s);
  return out;
}

std::map<std::string, TierStats> tier_statistics(
    const std::vector<GroundingScore>& scores,
    const std::map<std::string, std::string>& tiers) {
  std::map<std::string, std::vector<double>> by_tier;
  for (const auto& [id, tier] : tiers) by_tier[tier];  // empty tiers reported too
  for (const auto& s : scores) {
    const auto it = tiers.find(s.example_id);
    if (it == tiers.end())
      throw ValidationError("tier_statistics: no tier for id " + s.example_id);
    by_tier[it->second].push_back(s.p);
  }

  std::map<std::string, TierStats> out;
  for (auto& [tier, values] : by_tier) {
    TierStats st;
    st.count = values.size();
    if (!values.empty()) {
      double sum = 0.0;
      for (double v : values) sum += v;
      st.mean = sum / static_cast<double>(values.size());
      std::sort(values.begin(), values.end());
      const std::size_t n = values.size();
      st.median = n % 2 == 1 ? values[n / 2]
                             : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    }
    out[tier] = st;
  }
  return out;
}

std::map<std::string, std::string> tiers_from_terciles(
    const std::vector<GroundingScore>& scores) {
  std::vector<std::pair<double, std::string>> order;
  order.reserve(scores.size());
  for (const auto& s : scores) order.emplace_back(s.p, s.example_id);
  std::sort(order.begin(), order.end());

  const std::size_t n = order.size();
  std::map<std::string, std::string> tiers;
  for (std::size_t i = 0; i < n; ++i) {
    const char* tier = i * 3 < n ? "easy" : (i * 3 < 2 * n ? "medium" : "hard");
    tiers[order[i].second] = tier;
  }
  return tiers;
}

}  // namespace cdpo::grounding
