#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cdpo/corpus.hpp"

namespace cdpo::curriculum {

enum class Policy { curriculum, random };

const char* to_string(Policy p);
Policy policy_from_string(const std::string& s);

// count: contiguous equal-count bins after the sort (earlier bins take
// the extra element when sizes cannot match). width: equal-width score
// intervals over [min, max]; those bins may be empty.
enum class Binning { count, width };

struct CurriculumSchedule {
  std::vector<std::vector<corpus::PreferencePair>> stages;
  Policy policy = Policy::curriculum;
  std::uint64_t seed = 0;
};

// Curriculum policy: stable sort ascending by (score, example_id), then
// split into s stages. Random policy: seeded uniform shuffle, then the
// same split. Every pair must carry a score under the curriculum
// policy.
CurriculumSchedule build_schedule(const std::vector<corpus::PreferencePair>& pairs,
                                  std::size_t s, Policy policy,
                                  std::uint64_t seed,
                                  Binning binning = Binning::count);

// Stages in order; within a stage, pairs in stored order (sequential
// sampling, no reshuffle).
void iterate_stages(
    const CurriculumSchedule& schedule,
    const std::function<void(std::size_t stage_index,
                             const std::vector<corpus::PreferencePair>& stage)>& fn);

// Audit export: JSONL of {stage, position, example_id, score}.
void write_schedule(const std::string& path, const CurriculumSchedule& schedule);

}  // namespace cdpo::curriculum
