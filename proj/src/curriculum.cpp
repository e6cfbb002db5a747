#include "cdpo/curriculum.hpp"

#include <algorithm>
#include <fstream>

#include "cdpo/common.hpp"
#include "json.hpp"

namespace cdpo::curriculum {

const char* to_string(Policy p) {
  return p == Policy::curriculum ? "curriculum" : "random";
}

Policy policy_from_string(const std::string& s) {
  if (s == "curriculum") return Policy::curriculum;
  if (s == "random") return Policy::random;
  throw ValidationError("unknown schedule policy: " + s);
}

namespace {

std::vector<std::vector<corpus::PreferencePair>> split_equal_count(
    std::vector<corpus::PreferencePair> ordered, std::size_t s) {
  const std::size_t n = ordered.size();
  const std::size_t q = n / s;
  const std::size_t r = n % s;
  std::vector<std::vector<corpus::PreferencePair>> stages(s);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < s; ++k) {
    const std::size_t size = q + (k < r ? 1 : 0);
    stages[k].assign(std::make_move_iterator(ordered.begin() + pos),
                     std::make_move_iterator(ordered.begin() + pos + size));
    pos += size;
  }
  return stages;
}

}  // namespace

CurriculumSchedule build_schedule(const std::vector<corpus::PreferencePair>& pairs,
                                  std::size_t s, Policy policy,
                                  std::uint64_t seed, Binning binning) {
  if (s < 1) throw ValidationError("build_schedule: stage count must be >= 1");
  if (s > pairs.size())
    throw ValidationError("build_schedule: stage count " + std::to_string(s) +
                          " exceeds pair count " + std::to_string(pairs.size()));

  CurriculumSchedule schedule;
  schedule.policy = policy;
  schedule.seed = seed;

  if (policy == Policy::random) {
    if (binning == Binning::width)
      throw ValidationError("build_schedule: width binning needs curriculum policy");
    std::vector<corpus::PreferencePair> shuffled = pairs;
    DetRng rng(seed);
    rng.shuffle(shuffled);
    schedule.stages = split_equal_count(std::move(shuffled), s);
    return schedule;
  }

  for (const auto& p : pairs)
    if (!p.score)
      throw ValidationError("build_schedule: pair for example " + p.example_id +
                            " has no grounding score");

  std::vector<corpus::PreferencePair> ordered = pairs;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const corpus::PreferencePair& a,
                      const corpus::PreferencePair& b) {
                     if (*a.score != *b.score) return *a.score < *b.score;
                     return a.example_id < b.example_id;
                   });

  if (binning == Binning::count) {
    schedule.stages = split_equal_count(std::move(ordered), s);
    return schedule;
  }

  // equal-width intervals over the observed score range; the last bin
  // owns its upper edge
  const double lo = *ordered.front().score;
  const double hi = *ordered.back().score;
  const double width = (hi - lo) / static_cast<double>(s);
  schedule.stages.assign(s, {});
  for (auto& p : ordered) {
    std::size_t bin = s - 1;
    if (width > 0.0) {
      const auto idx = static_cast<long long>((*p.score - lo) / width);
      bin = std::min<std::size_t>(static_cast<std::size_t>(std::max(0ll, idx)), s - 1);
    }
    schedule.stages[bin].push_back(std::move(p));
  }
  return schedule;
}

void iterate_stages(
    const CurriculumSchedule& schedule,
    const std::function<void(std::size_t, const std::vector<corpus::PreferencePair>&)>& fn) {
  for (std::size_t i = 0; i < schedule.stages.size(); ++i)
    fn(i + 1, schedule.stages[i]);
}

void write_schedule(const std::string& path, const CurriculumSchedule& schedule) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schedule file: " + path);
  for (std::size_t k = 0; k < schedule.stages.size(); ++k) {
    for (std::size_t i = 0; i < schedule.stages[k].size(); ++i) {
      const auto& p = schedule.stages[k][i];
      nlohmann::ordered_json obj;
      obj["stage"] = k + 1;
      obj["position"] = i;
      obj["example_id"] = p.example_id;
      if (p.score)
        obj["score"] = *p.score;
      else
        obj["score"] = nullptr;
      out << obj.dump() << '\n';
    }
  }
  if (!out) throw IoError("error while writing schedule file: " + path);
}

}  // namespace cdpo::curriculum
